//! Desk-scale evaluation: planning L2 and collision rate, prediction
//! ADE/FDE/miss-rate, detection quality, and update accounting.
//!
//! All functions are pure and permutation-invariant in agent order.

use serde::{Deserialize, Serialize};

use crate::model::DetectionSet;
use crate::worldsim::SceneFrame;

/// A plan waypoint within this distance of an agent center counts as a
/// collision.
pub const COLLISION_RADIUS: f64 = 1.5;
/// An agent with FDE above this distance counts as a miss.
pub const MISS_FDE_THRESHOLD: f64 = 2.0;
/// Detections match ground truth greedily within this radius.
pub const DETECTION_MATCH_RADIUS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean of the chosen plan's displacement at the 1/2/3 s waypoints.
    pub plan_l2_mean: f64,
    pub collision_rate: f64,
    pub ade: f64,
    pub fde: f64,
    pub miss_rate: f64,
    pub det_center_err: f64,
    pub det_precision: f64,
    pub det_recall: f64,
    pub update_count: u64,
    pub wall_time_s: f64,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Mean Euclidean error at the 2nd, 4th and 6th waypoints (1, 2 and 3 s).
pub fn plan_l2(chosen: &[(f64, f64)], ego_future_gt: &[(f64, f64)]) -> f64 {
    let idxs = [1usize, 3, 5];
    let mut total = 0.0;
    let mut n = 0;
    for &i in &idxs {
        if i < chosen.len() && i < ego_future_gt.len() {
            total += dist(chosen[i], ego_future_gt[i]);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Does any plan waypoint come within `radius` of any agent's ground-truth
/// center at the matching future timestep?
pub fn plan_collides(
    chosen: &[(f64, f64)],
    agent_future_gt: &[Vec<(f64, f64)>],
    radius: f64,
) -> bool {
    for (p, w) in chosen.iter().enumerate() {
        for future in agent_future_gt {
            if p < future.len() && dist(*w, future[p]) <= radius {
                return true;
            }
        }
    }
    false
}

/// (ADE, FDE, miss rate) pooled over agents. ADE averages pointwise error
/// over every waypoint of every agent; FDE uses the final waypoint; the
/// miss rate is the fraction of agents with FDE above the threshold.
pub fn ade_fde_mr(preds: &[Vec<(f64, f64)>], gts: &[Vec<(f64, f64)>]) -> (f64, f64, f64) {
    assert_eq!(preds.len(), gts.len(), "prediction/ground-truth agent counts differ");
    if preds.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut ade_total = 0.0;
    let mut ade_n = 0usize;
    let mut fde_total = 0.0;
    let mut misses = 0usize;
    for (pred, gt) in preds.iter().zip(gts) {
        let q = pred.len().min(gt.len());
        for i in 0..q {
            ade_total += dist(pred[i], gt[i]);
            ade_n += 1;
        }
        let fde = dist(pred[q - 1], gt[q - 1]);
        fde_total += fde;
        if fde > MISS_FDE_THRESHOLD {
            misses += 1;
        }
    }
    (
        ade_total / ade_n as f64,
        fde_total / preds.len() as f64,
        misses as f64 / preds.len() as f64,
    )
}

/// Greedy nearest matching of detections to ground-truth agents within the
/// match radius. Returns (mean matched center error, precision, recall).
/// With no detections precision is 1 (nothing spurious); with no matches the
/// center error is 0.
pub fn detection_quality(dets: &DetectionSet, frame: &SceneFrame) -> (f64, f64, f64) {
    let n_det = dets.detections.len();
    let n_gt = frame.agents.len();
    if n_det == 0 {
        return (0.0, 1.0, if n_gt == 0 { 1.0 } else { 0.0 });
    }
    if n_gt == 0 {
        return (0.0, 0.0, 1.0);
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n_det * n_gt);
    for (i, d) in dets.detections.iter().enumerate() {
        for (j, a) in frame.agents.iter().enumerate() {
            let e = dist(d.center(), a.position);
            if e <= DETECTION_MATCH_RADIUS {
                pairs.push((e, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; n_det];
    let mut gt_used = vec![false; n_gt];
    let mut matched = 0usize;
    let mut err_total = 0.0;
    for (e, i, j) in pairs {
        if !det_used[i] && !gt_used[j] {
            det_used[i] = true;
            gt_used[j] = true;
            matched += 1;
            err_total += e;
        }
    }
    let center_err = if matched == 0 { 0.0 } else { err_total / matched as f64 };
    (center_err, matched as f64 / n_det as f64, matched as f64 / n_gt as f64)
}

/// Model outputs for one evaluated frame, keyed back into its scene.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameOutput {
    pub scene_idx: usize,
    pub frame_idx: usize,
    pub chosen_plan: Vec<(f64, f64)>,
    pub pred_ids: Vec<u32>,
    pub pred_trajectories: Vec<Vec<(f64, f64)>>,
    pub detections: DetectionSet,
}

/// Pool per-frame outputs over a stream into one report.
pub fn aggregate(
    scenes: &[crate::worldsim::Scene],
    outputs: &[FrameOutput],
    update_count: u64,
    wall_time_s: f64,
) -> MetricsReport {
    let mut l2_total = 0.0;
    let mut collisions = 0usize;
    let mut ade_total = 0.0;
    let mut ade_n = 0usize;
    let mut fde_total = 0.0;
    let mut fde_n = 0usize;
    let mut misses = 0usize;
    let mut cerr_total = 0.0;
    let mut prec_total = 0.0;
    let mut rec_total = 0.0;

    for out in outputs {
        let frame = &scenes[out.scene_idx].frames[out.frame_idx].0;
        l2_total += plan_l2(&out.chosen_plan, &frame.ego_future_gt);
        if plan_collides(&out.chosen_plan, &frame.agent_future_gt, COLLISION_RADIUS) {
            collisions += 1;
        }
        for (i, id) in out.pred_ids.iter().enumerate() {
            let idx = frame
                .agents
                .iter()
                .position(|a| a.id == *id)
                .expect("prediction ids come from the frame");
            let gt = &frame.agent_future_gt[idx];
            let pred = &out.pred_trajectories[i];
            let q = pred.len().min(gt.len());
            for k in 0..q {
                ade_total += dist(pred[k], gt[k]);
                ade_n += 1;
            }
            let fde = dist(pred[q - 1], gt[q - 1]);
            fde_total += fde;
            fde_n += 1;
            if fde > MISS_FDE_THRESHOLD {
                misses += 1;
            }
        }
        let (ce, pr, rc) = detection_quality(&out.detections, frame);
        cerr_total += ce;
        prec_total += pr;
        rec_total += rc;
    }

    let frames = outputs.len().max(1) as f64;
    MetricsReport {
        plan_l2_mean: l2_total / frames,
        collision_rate: collisions as f64 / frames,
        ade: if ade_n == 0 { 0.0 } else { ade_total / ade_n as f64 },
        fde: if fde_n == 0 { 0.0 } else { fde_total / fde_n as f64 },
        miss_rate: if fde_n == 0 { 0.0 } else { misses as f64 / fde_n as f64 },
        det_center_err: cerr_total / frames,
        det_precision: prec_total / frames,
        det_recall: rec_total / frames,
        update_count,
        wall_time_s,
    }
}
