//! Toy modular driving model: shared encoder, perception head, prediction
//! head, planner head.
//!
//! One forward pass produces everything the adaptation loop consumes:
//! detections with confidence scores (11-element boxes), per-agent future
//! trajectories that stay differentiable back to the parameters, and a
//! multi-modal ego plan with raw scores plus the planner's ego-to-agent
//! attention row as a detached copy.
//!
//! Coordinate conventions: observation positions arrive relative to the
//! current ego position and velocities absolute; all outputs are converted
//! back to world coordinates by adding the (constant) ego position, so
//! predictions at frame t and detections at frame t+1 are directly
//! comparable.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::autodiff::{Graph, NodeId, ParamBinding, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::{hash_str, KeyedRng, Purpose};
use crate::worldsim::{SensorFrame, OBS_WINDOW};

/// Positions (meters) are divided by this on the way in and multiplied on
/// the way out; losses on positional quantities live in the divided space.
pub const POS_SCALE: f64 = 30.0;
pub const VEL_SCALE: f64 = 10.0;
const DELTA_SCALE: f64 = 5.0;

/// Nominal box extents for the 2-D world (w, l, h).
const NOMINAL_BOX: (f64, f64, f64) = (1.9, 4.6, 1.6);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width of the shared encoder.
    pub d_model: usize,
    /// Number of ego trajectory modes (M).
    pub m_modes: usize,
    /// Ego plan horizon in waypoints (P).
    pub plan_horizon: usize,
    /// Agent prediction horizon in waypoints (Q).
    pub pred_horizon: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            m_modes: 6,
            plan_horizon: crate::worldsim::PLAN_HORIZON,
            pred_horizon: crate::worldsim::PRED_HORIZON,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_modes < 2 {
            return Err(Error::Config(format!(
                "m_modes must be >= 2 for score entropy to be meaningful, got {}",
                self.m_modes
            )));
        }
        if self.d_model == 0 || self.plan_horizon == 0 || self.pred_horizon == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    fn obs_dim(&self) -> usize {
        OBS_WINDOW * 4
    }
}

/// One detected object: 11-element box
/// (x, y, z, w, l, h, sin_yaw, cos_yaw, vx, vy, vz) plus confidence.
/// Elements 0 and 1 are the world-frame center the adaptation loss uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub agent_id: u32,
    pub bbox: [f64; 11],
    pub confidence: f64,
}

impl Detection {
    pub fn center(&self) -> (f64, f64) {
        (self.bbox[0], self.bbox[1])
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSet {
    pub t: usize,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn by_id(&self, id: u32) -> Option<&Detection> {
        self.detections.iter().find(|d| d.agent_id == id)
    }
}

/// Per-agent predicted trajectories; waypoint nodes stay differentiable in
/// the owning pass's graph, values are world coordinates.
#[derive(Debug, Default)]
pub struct PredictionOutput {
    pub agent_ids: Vec<u32>,
    pub trajectories: Vec<Vec<(f64, f64)>>,
    pub waypoint_nodes: Vec<Vec<NodeId>>,
}

impl PredictionOutput {
    pub fn by_id(&self, id: u32) -> Option<usize> {
        self.agent_ids.iter().position(|&a| a == id)
    }
}

/// Multi-modal ego plan with raw scores and the detached ego-attention row
/// over encoded agents (ego excluded).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PlanOutput {
    pub candidates: Vec<Vec<(f64, f64)>>,
    pub raw_scores: Vec<f64>,
    pub attention_row: Vec<f64>,
    pub agent_ids: Vec<u32>,
    pub no_agents: bool,
}

/// Highest-scoring candidate; ties break toward the lowest mode index.
pub fn chosen_plan(plan: &PlanOutput) -> &[(f64, f64)] {
    let mut best = 0;
    for (m, &s) in plan.raw_scores.iter().enumerate() {
        if s > plan.raw_scores[best] {
            best = m;
        }
    }
    &plan.candidates[best]
}

/// Differentiable handles for one agent's perception outputs.
#[derive(Debug)]
pub struct DetectionNodes {
    pub agent_id: u32,
    /// [1, 4]: ego-relative (x, y) and absolute (vx, vy) in normalized
    /// units (positions / POS_SCALE, velocities / VEL_SCALE).
    pub state: NodeId,
    pub conf_logit: NodeId,
}

/// Everything one forward pass produced, with its graph still alive so
/// losses can be built on top and backpropagated.
#[derive(Debug)]
pub struct ForwardPass {
    pub graph: Graph,
    pub binding: ParamBinding,
    pub detections: DetectionSet,
    pub prediction: PredictionOutput,
    pub plan: PlanOutput,
    pub det_nodes: Vec<DetectionNodes>,
    /// Raw plan scores as a length-M vector node.
    pub score_node: NodeId,
    /// M x P plan waypoint nodes, each [1, 2].
    pub plan_waypoint_nodes: Vec<Vec<NodeId>>,
}

/// Named parameters plus the online step counter.
#[derive(Clone, Debug)]
pub struct ModelParameters {
    pub params: ParamSet,
    pub step_count: u64,
    pub config: ModelConfig,
}

impl ModelParameters {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let (m, p, q) = (config.m_modes, config.plan_horizon, config.pred_horizon);
        let mut params = ParamSet::new();
        let mut add = |name: &str, rows: usize, cols: usize, zero: bool| -> Result<()> {
            let t = if zero {
                Tensor::zeros(vec![rows, cols])
            } else {
                let mut rng = KeyedRng::from_key(&[seed, hash_str(name), Purpose::Init as u64]);
                let std = 1.0 / (rows as f64).sqrt();
                let data = (0..rows * cols).map(|_| rng.normal() * std).collect();
                Tensor::matrix(rows, cols, data)?
            };
            params.insert(name, t)
        };

        let obs = config.obs_dim();
        add("shared_encoder.l1.weight", obs, d, false)?;
        add("shared_encoder.l1.bias", 1, d, true)?;
        add("shared_encoder.l2.weight", d, d, false)?;
        add("shared_encoder.l2.bias", 1, d, true)?;
        add("perception_head.state.weight", d, 4, false)?;
        add("perception_head.state.bias", 1, 4, true)?;
        add("perception_head.conf.weight", d, 1, false)?;
        add("perception_head.conf.bias", 1, 1, true)?;
        add("prediction_head.attn_q.weight", d, d, false)?;
        add("prediction_head.attn_k.weight", d, d, false)?;
        add("prediction_head.attn_v.weight", d, d, false)?;
        add("prediction_head.dec1.weight", 2 * d, d, false)?;
        add("prediction_head.dec1.bias", 1, d, true)?;
        add("prediction_head.dec2.weight", d, 2 * q, false)?;
        add("prediction_head.dec2.bias", 1, 2 * q, true)?;
        add("planner_head.attn_q.weight", d, d, false)?;
        add("planner_head.attn_k.weight", d, d, false)?;
        add("planner_head.attn_v.weight", d, d, false)?;
        add("planner_head.dec1.weight", 2 * d, d, false)?;
        add("planner_head.dec1.bias", 1, d, true)?;
        add("planner_head.traj.weight", d, m * p * 2, false)?;
        add("planner_head.traj.bias", 1, m * p * 2, true)?;
        add("planner_head.score.weight", d, m, false)?;
        add("planner_head.score.bias", 1, m, true)?;

        Ok(ModelParameters { params, step_count: 0, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)
    }

    /// Load a checkpoint; the step counter restarts at zero.
    pub fn load(path: &Path, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(ModelParameters { params: ParamSet::load(path)?, step_count: 0, config })
    }

    /// Scalar parameter counts grouped by sub-module prefix.
    pub fn submodule_counts(&self) -> Vec<(String, usize)> {
        let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
        for (name, entry) in self.params.iter() {
            let prefix = name.split('.').next().unwrap_or(name).to_string();
            *counts.entry(prefix).or_insert(0) += entry.value.numel();
        }
        counts.into_iter().collect()
    }
}

/// Parameter-name filter for the prediction-path update scope.
pub fn in_prediction_path(name: &str) -> bool {
    name.starts_with("prediction_head.") || name.starts_with("shared_encoder.")
}

// ── forward ─────────────────────────────────────────────────────────────

fn normalize_window(history: &[[f64; 4]]) -> Vec<f64> {
    let mut flat = Vec::with_capacity(history.len() * 4);
    for s in history {
        flat.push(s[0] / POS_SCALE);
        flat.push(s[1] / POS_SCALE);
        flat.push(s[2] / VEL_SCALE);
        flat.push(s[3] / VEL_SCALE);
    }
    flat
}

fn linear(g: &mut Graph, b: &ParamBinding, x: NodeId, w: &str, bias: Option<&str>) -> Result<NodeId> {
    let y = g.matmul(x, b.id(w))?;
    match bias {
        Some(name) => g.add(y, b.id(name)),
        None => Ok(y),
    }
}

fn encode(g: &mut Graph, b: &ParamBinding, x: NodeId) -> Result<NodeId> {
    let h1 = linear(g, b, x, "shared_encoder.l1.weight", Some("shared_encoder.l1.bias"))?;
    let h1 = g.tanh(h1);
    let h2 = linear(g, b, h1, "shared_encoder.l2.weight", Some("shared_encoder.l2.bias"))?;
    Ok(g.tanh(h2))
}

struct PerceptionPart {
    det_nodes: Vec<DetectionNodes>,
    detections: DetectionSet,
    embeddings: Vec<NodeId>,
    anchors: Vec<(f64, f64)>,
}

fn run_perception(
    g: &mut Graph,
    binding: &ParamBinding,
    sensor: &SensorFrame,
) -> Result<PerceptionPart> {
    let mut det_nodes = Vec::new();
    let mut detections = Vec::new();
    let mut embeddings = Vec::new();
    let mut anchors = Vec::new();
    for obs in &sensor.observations {
        let x = g.constant(Tensor::row(normalize_window(&obs.history)));
        let emb = encode(g, binding, x)?;
        let state = linear(g, binding, emb, "perception_head.state.weight", Some("perception_head.state.bias"))?;
        let conf_logit =
            linear(g, binding, emb, "perception_head.conf.weight", Some("perception_head.conf.bias"))?;
        let conf_node = g.sigmoid(conf_logit);

        let sv = g.value(state).data();
        let (cx, cy) = (
            sv[0] * POS_SCALE + sensor.ego_position.0,
            sv[1] * POS_SCALE + sensor.ego_position.1,
        );
        let (vx, vy) = (sv[2] * VEL_SCALE, sv[3] * VEL_SCALE);
        let speed = (vx * vx + vy * vy).sqrt();
        let (sin_yaw, cos_yaw) = if speed < 1e-6 { (0.0, 1.0) } else { (vy / speed, vx / speed) };
        let (w, l, h) = NOMINAL_BOX;
        detections.push(Detection {
            agent_id: obs.agent_id,
            bbox: [cx, cy, 0.0, w, l, h, sin_yaw, cos_yaw, vx, vy, 0.0],
            confidence: g.value(conf_node).item(),
        });
        det_nodes.push(DetectionNodes { agent_id: obs.agent_id, state, conf_logit });

        let last = obs.history[OBS_WINDOW - 1];
        anchors.push((last[0] + sensor.ego_position.0, last[1] + sensor.ego_position.1));
        embeddings.push(emb);
    }
    Ok(PerceptionPart {
        det_nodes,
        detections: DetectionSet { t: sensor.t, detections },
        embeddings,
        anchors,
    })
}

/// Full pass: perception, prediction and planning share one encoder and one
/// graph. With zero visible agents the plan falls back to ego features and
/// the other outputs are empty (`plan.no_agents`).
pub fn forward(mp: &ModelParameters, sensor: &SensorFrame) -> Result<ForwardPass> {
    let cfg = &mp.config;
    let (m_modes, p_hor, q_hor) = (cfg.m_modes, cfg.plan_horizon, cfg.pred_horizon);
    let d = cfg.d_model;
    let mut g = Graph::new();
    let binding = mp.params.bind(&mut g);

    let ego_in = g.constant(Tensor::row(normalize_window(&sensor.ego_history)));
    let ego_emb = encode(&mut g, &binding, ego_in)?;

    let perception = run_perception(&mut g, &binding, sensor)?;
    let n = perception.embeddings.len();

    // Prediction head: agent-agent self-attention, then a per-agent decoder
    // emitting cumulative (dx, dy) offsets from the last observed position.
    let mut prediction = PredictionOutput::default();
    let stacked = if n > 0 { Some(g.concat_rows(&perception.embeddings)?) } else { None };
    if let Some(all) = stacked {
        let q = linear(&mut g, &binding, all, "prediction_head.attn_q.weight", None)?;
        let k = linear(&mut g, &binding, all, "prediction_head.attn_k.weight", None)?;
        let v = linear(&mut g, &binding, all, "prediction_head.attn_v.weight", None)?;
        let att = g.attention(q, k, v)?;
        for (j, (&emb, obs)) in perception.embeddings.iter().zip(&sensor.observations).enumerate() {
            let row = g.narrow_rows(att.output, j, 1)?;
            let dec_in = g.concat_cols(&[emb, row])?;
            let h = linear(&mut g, &binding, dec_in, "prediction_head.dec1.weight", Some("prediction_head.dec1.bias"))?;
            let h = g.tanh(h);
            let deltas = linear(&mut g, &binding, h, "prediction_head.dec2.weight", Some("prediction_head.dec2.bias"))?;
            let deltas = g.scale(deltas, DELTA_SCALE);

            let anchor = perception.anchors[j];
            let mut cursor = g.constant(Tensor::row(vec![anchor.0, anchor.1]));
            let mut nodes = Vec::with_capacity(q_hor);
            let mut values = Vec::with_capacity(q_hor);
            for q_i in 0..q_hor {
                let step = g.narrow_cols(deltas, 2 * q_i, 2)?;
                cursor = g.add(cursor, step)?;
                let v = g.value(cursor).data();
                values.push((v[0], v[1]));
                nodes.push(cursor);
            }
            prediction.agent_ids.push(obs.agent_id);
            prediction.trajectories.push(values);
            prediction.waypoint_nodes.push(nodes);
        }
    }

    // Planner head: ego query over agent embeddings; the post-softmax row is
    // the exported attention row.
    let ego_q = linear(&mut g, &binding, ego_emb, "planner_head.attn_q.weight", None)?;
    let (ctx, attention_row) = if let Some(all) = stacked {
        let k = linear(&mut g, &binding, all, "planner_head.attn_k.weight", None)?;
        let v = linear(&mut g, &binding, all, "planner_head.attn_v.weight", None)?;
        let att = g.attention(ego_q, k, v)?;
        (att.output, att.weights.data().to_vec())
    } else {
        (g.constant(Tensor::zeros(vec![1, d])), Vec::new())
    };
    let dec_in = g.concat_cols(&[ego_emb, ctx])?;
    let h = linear(&mut g, &binding, dec_in, "planner_head.dec1.weight", Some("planner_head.dec1.bias"))?;
    let h = g.tanh(h);
    let traj_flat = linear(&mut g, &binding, h, "planner_head.traj.weight", Some("planner_head.traj.bias"))?;
    let traj_flat = g.scale(traj_flat, DELTA_SCALE);
    let score_row = linear(&mut g, &binding, h, "planner_head.score.weight", Some("planner_head.score.bias"))?;
    let score_node = g.reshape(score_row, vec![m_modes])?;

    let mut candidates = Vec::with_capacity(m_modes);
    let mut plan_waypoint_nodes = Vec::with_capacity(m_modes);
    for m in 0..m_modes {
        let mut cursor = g.constant(Tensor::row(vec![sensor.ego_position.0, sensor.ego_position.1]));
        let mut nodes = Vec::with_capacity(p_hor);
        let mut values = Vec::with_capacity(p_hor);
        for p in 0..p_hor {
            let step = g.narrow_cols(traj_flat, (m * p_hor + p) * 2, 2)?;
            cursor = g.add(cursor, step)?;
            let v = g.value(cursor).data();
            values.push((v[0], v[1]));
            nodes.push(cursor);
        }
        candidates.push(values);
        plan_waypoint_nodes.push(nodes);
    }

    let plan = PlanOutput {
        candidates,
        raw_scores: g.value(score_node).data().to_vec(),
        attention_row,
        agent_ids: prediction.agent_ids.clone(),
        no_agents: n == 0,
    };

    Ok(ForwardPass {
        graph: g,
        binding,
        detections: perception.detections,
        prediction,
        plan,
        det_nodes: perception.det_nodes,
        score_node,
        plan_waypoint_nodes,
    })
}

/// Encoder + perception head only; outputs are detached constants, used as
/// next-frame supervision targets.
pub fn detect_only(mp: &ModelParameters, sensor: &SensorFrame) -> Result<DetectionSet> {
    let mut g = Graph::new();
    let binding = mp.params.bind(&mut g);
    let perception = run_perception(&mut g, &binding, sensor)?;
    Ok(perception.detections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{self, CorruptionLevel};

    fn small_config() -> ModelConfig {
        ModelConfig { d_model: 16, m_modes: 3, plan_horizon: 4, pred_horizon: 4 }
    }

    fn sample_sensor(seed: u64) -> SensorFrame {
        let (profile, _) = worldsim::default_profiles();
        let scene =
            worldsim::generate_scene(&profile, &CorruptionLevel::none(), seed, 0, 24).unwrap();
        scene.frames[2].1.clone()
    }

    #[test]
    fn forward_is_deterministic() {
        let mp = ModelParameters::init(small_config(), 3).unwrap();
        let sensor = sample_sensor(5);
        let a = forward(&mp, &sensor).unwrap();
        let b = forward(&mp, &sensor).unwrap();
        assert_eq!(serde_json::to_string(&a.plan).unwrap(), serde_json::to_string(&b.plan).unwrap());
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.prediction.trajectories, b.prediction.trajectories);
    }

    #[test]
    fn attention_row_is_a_distribution_over_agents() {
        let mp = ModelParameters::init(small_config(), 3).unwrap();
        let sensor = sample_sensor(6);
        let pass = forward(&mp, &sensor).unwrap();
        assert_eq!(pass.plan.attention_row.len(), sensor.observations.len());
        let sum: f64 = pass.plan.attention_row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(pass.plan.attention_row.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn detect_only_matches_full_forward() {
        let mp = ModelParameters::init(small_config(), 3).unwrap();
        let sensor = sample_sensor(7);
        let pass = forward(&mp, &sensor).unwrap();
        let det = detect_only(&mp, &sensor).unwrap();
        assert_eq!(pass.detections, det);
    }

    #[test]
    fn prediction_ids_align_with_detections() {
        let mp = ModelParameters::init(small_config(), 3).unwrap();
        let sensor = sample_sensor(8);
        let pass = forward(&mp, &sensor).unwrap();
        for id in &pass.prediction.agent_ids {
            assert!(pass.detections.by_id(*id).is_some());
        }
        assert_eq!(pass.prediction.agent_ids.len(), pass.detections.detections.len());
    }

    #[test]
    fn zero_agents_still_plans() {
        let mp = ModelParameters::init(small_config(), 3).unwrap();
        let mut sensor = sample_sensor(9);
        sensor.observations.clear();
        sensor.visibility.iter_mut().for_each(|v| *v = false);
        let pass = forward(&mp, &sensor).unwrap();
        assert!(pass.plan.no_agents);
        assert!(pass.plan.attention_row.is_empty());
        assert!(pass.detections.detections.is_empty());
        assert_eq!(pass.plan.candidates.len(), 3);
        assert_eq!(pass.plan.candidates[0].len(), 4);
    }

    #[test]
    fn hidden_agent_absent_from_detections() {
        let mp = ModelParameters::init(small_config(), 3).unwrap();
        let mut sensor = sample_sensor(10);
        assert!(sensor.observations.len() >= 2);
        let hidden = sensor.observations.pop().unwrap().agent_id;
        let det = detect_only(&mp, &sensor).unwrap();
        assert!(det.by_id(hidden).is_none());
    }

    #[test]
    fn yaw_encoding_is_normalized() {
        let mp = ModelParameters::init(small_config(), 3).unwrap();
        let sensor = sample_sensor(11);
        let det = detect_only(&mp, &sensor).unwrap();
        for d in &det.detections {
            let (s, c) = (d.bbox[6], d.bbox[7]);
            assert!((s * s + c * c - 1.0).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&d.confidence));
        }
    }

    #[test]
    fn chosen_plan_rules() {
        let plan = PlanOutput {
            candidates: vec![vec![(0.0, 0.0)], vec![(1.0, 1.0)], vec![(2.0, 2.0)]],
            raw_scores: vec![1.0, 3.0, 2.0],
            ..Default::default()
        };
        assert_eq!(chosen_plan(&plan)[0], (1.0, 1.0));

        let tied = PlanOutput {
            candidates: vec![vec![(0.0, 0.0)], vec![(1.0, 1.0)]],
            raw_scores: vec![5.0, 5.0],
            ..Default::default()
        };
        assert_eq!(chosen_plan(&tied)[0], (0.0, 0.0));

        // argmax is invariant to shifting all scores.
        let shifted = PlanOutput {
            candidates: tied.candidates.clone(),
            raw_scores: vec![105.0, 105.0],
            ..Default::default()
        };
        assert_eq!(chosen_plan(&shifted)[0], chosen_plan(&tied)[0]);
    }

    #[test]
    fn m_modes_below_two_rejected() {
        let cfg = ModelConfig { m_modes: 1, ..small_config() };
        assert!(ModelParameters::init(cfg, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_value_exact() {
        let mp = ModelParameters::init(small_config(), 12).unwrap();
        let dir = std::env::temp_dir().join("evopsf_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.json");
        mp.save(&path).unwrap();
        let loaded = ModelParameters::load(&path, small_config()).unwrap();
        for (name, entry) in mp.params.iter() {
            assert_eq!(Some(&entry.value), loaded.params.get(name), "{name}");
        }
        let sensor = sample_sensor(13);
        let a = forward(&mp, &sensor).unwrap();
        let b = forward(&loaded, &sensor).unwrap();
        assert_eq!(a.plan.raw_scores, b.plan.raw_scores);
    }

    #[test]
    fn submodule_counts_cover_all_params() {
        let mp = ModelParameters::init(small_config(), 1).unwrap();
        let counts = mp.submodule_counts();
        let names: Vec<&str> = counts.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["perception_head", "planner_head", "prediction_head", "shared_encoder"]);
        let total: usize = counts.iter().map(|(_, c)| c).sum();
        assert_eq!(total, mp.params.scalar_count());
    }
}
