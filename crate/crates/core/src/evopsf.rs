//! The online-evolution closed loop, plus its baselines and ablations.
//!
//! Per frame pair (t, t+1):
//!   1. the plan at t yields a score-entropy trigger decision;
//!   2. if it fired, the planner's ego-attention row selects the top-k
//!      agents;
//!   3. at t+1, perception (run with the pre-update parameters) provides
//!      detected centers; selected agents whose detection confidence
//!      strictly exceeds the threshold contribute an L1 term between their
//!      first predicted waypoint from t and the detected center at t+1;
//!   4. the summed loss backpropagates and the parameters take one plain
//!      gradient step before the plan at t+1 is produced.
//!
//! Strategies: `frozen` (no updates), `tta_entropy` (per-frame entropy
//! minimization), `evopsf` (the full loop), and one ablation per removed
//! component.

use serde::{Deserialize, Serialize};

use crate::autodiff::{entropy_raw, softmax_row_in_place, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::metrics::FrameOutput;
use crate::model::{
    chosen_plan, detect_only, forward, in_prediction_path, DetectionSet, ForwardPass,
    ModelParameters, PlanOutput, PredictionOutput,
};
use crate::worldsim::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ThresholdMode {
    /// Use `tau` as given.
    Fixed,
    /// Calibrate `tau` to the q-quantile of plan entropies on held-out
    /// source scenes before streaming.
    Quantile { q: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScope {
    /// Prediction head plus shared encoder: where the targeted loss's
    /// gradient lives.
    PredictionPath,
    AllParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    /// Entropy threshold in nats; adaptation fires at H >= tau.
    pub tau: f64,
    /// Detection confidence threshold; targets need confidence > tau_tilde.
    pub tau_tilde: f64,
    /// Number of attended objects kept (clamped to the visible count).
    pub k: usize,
    /// Online learning rate.
    pub eta: f64,
    pub threshold_mode: ThresholdMode,
    pub update_scope: UpdateScope,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            tau: 1.7779,
            tau_tilde: 0.5,
            k: 35,
            eta: 1e-3,
            threshold_mode: ThresholdMode::Quantile { q: 0.9 },
            update_scope: UpdateScope::PredictionPath,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 0.0 {
            return Err(Error::Config("tau must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_tilde) {
            return Err(Error::Config("tau_tilde must be in [0, 1]".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.eta <= 0.0 {
            return Err(Error::Config("eta must be > 0".into()));
        }
        if let ThresholdMode::Quantile { q } = self.threshold_mode {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config("quantile q must be in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Frozen,
    TtaEntropy,
    Evopsf,
    EvopsfNoTrigger,
    EvopsfNoTopk,
    EvopsfNoConf,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Frozen,
        Strategy::TtaEntropy,
        Strategy::Evopsf,
        Strategy::EvopsfNoTrigger,
        Strategy::EvopsfNoTopk,
        Strategy::EvopsfNoConf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Frozen => "frozen",
            Strategy::TtaEntropy => "tta_entropy",
            Strategy::Evopsf => "evopsf",
            Strategy::EvopsfNoTrigger => "evopsf_no_trigger",
            Strategy::EvopsfNoTopk => "evopsf_no_topk",
            Strategy::EvopsfNoConf => "evopsf_no_conf",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub entropy_value: f64,
    pub fired: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected_ids: Vec<u32>,
    pub attention_weights: Vec<f64>,
}

/// One frame-pair record: the trigger and selection made at frame t, and
/// the update (if any) consumed at frame t+1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationStepRecord {
    pub scene_id: u64,
    pub t: usize,
    pub trigger: TriggerDecision,
    pub selection: SelectionResult,
    pub contributing_ids: Vec<u32>,
    pub loss_value: f64,
    pub grad_norm: f64,
    pub params_updated: bool,
}

/// Softmax + Shannon entropy in plain value space; mirrors the graph ops
/// bit for bit (same max-subtraction, same accumulation order).
pub fn plan_entropy(scores: &[f64]) -> f64 {
    let mut p = scores.to_vec();
    softmax_row_in_place(&mut p);
    entropy_raw(&p)
}

/// Entropy trigger on the plan's raw scores; fires at H >= tau inclusive.
pub fn compute_trigger(plan: &PlanOutput, config: &AdaptationConfig) -> Result<TriggerDecision> {
    if plan.raw_scores.len() < 2 {
        return Err(Error::Contract(format!(
            "trigger needs at least 2 modes, got {}",
            plan.raw_scores.len()
        )));
    }
    if plan.raw_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Contract("non-finite plan scores".into()));
    }
    let entropy_value = plan_entropy(&plan.raw_scores);
    Ok(TriggerDecision { entropy_value, fired: entropy_value >= config.tau })
}

fn select_ranked(plan: &PlanOutput, k: usize) -> SelectionResult {
    let mut pairs: Vec<(u32, f64)> = plan
        .agent_ids
        .iter()
        .copied()
        .zip(plan.attention_row.iter().copied())
        .collect();
    // Largest weight first; ties break toward the lower agent id.
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.truncate(k);
    SelectionResult {
        selected_ids: pairs.iter().map(|p| p.0).collect(),
        attention_weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// The k agents with the largest ego-attention weights (all of them when
/// fewer than k are visible). An empty attention row selects nothing.
pub fn select_topk(plan: &PlanOutput, config: &AdaptationConfig) -> SelectionResult {
    select_ranked(plan, config.k)
}

/// Every visible agent, in attention order (the no-top-k ablation).
pub fn select_all(plan: &PlanOutput) -> SelectionResult {
    select_ranked(plan, plan.agent_ids.len())
}

/// Confidence-filtered L1 between first predicted waypoints (frame t) and
/// detected centers (frame t+1), summed over the selection.
///
/// Selected agents without a detection at t+1 are skipped; confidence
/// exactly equal to tau_tilde is excluded (strict >). Returns the loss node
/// (None when nothing contributes) and the contributing agent ids.
pub fn targeted_loss(
    graph: &mut crate::autodiff::Graph,
    prediction: &PredictionOutput,
    next_detections: &DetectionSet,
    selection: &SelectionResult,
    config: &AdaptationConfig,
    apply_confidence_filter: bool,
) -> Result<(Option<NodeId>, Vec<u32>)> {
    let mut loss: Option<NodeId> = None;
    let mut contributing = Vec::new();
    for &id in &selection.selected_ids {
        let Some(pred_idx) = prediction.by_id(id) else {
            continue;
        };
        let Some(det) = next_detections.by_id(id) else {
            continue; // selected at t but undetected at t+1
        };
        if apply_confidence_filter && det.confidence <= config.tau_tilde {
            continue;
        }
        let first = prediction.waypoint_nodes[pred_idx][0];
        let (cx, cy) = det.center();
        let term = graph.l1_to_const(first, &Tensor::row(vec![cx, cy]))?;
        loss = Some(match loss {
            Some(acc) => graph.add(acc, term)?,
            None => term,
        });
        contributing.push(id);
    }
    Ok((loss, contributing))
}

#[derive(Clone, Copy, Debug)]
pub struct UpdateOutcome {
    pub applied: bool,
    pub grad_norm: f64,
}

/// One plain gradient step from the given loss over the configured scope;
/// gradients are zeroed afterwards. Non-finite gradients skip the step.
pub fn apply_update(
    params: &mut ModelParameters,
    pass: &mut ForwardPass,
    loss: NodeId,
    config: &AdaptationConfig,
) -> Result<UpdateOutcome> {
    pass.graph.backward(loss)?;
    params.params.zero_grads();
    params.params.accumulate_grads(&pass.graph, &pass.binding);
    let grad_norm = params.params.grad_norm();
    if !params.params.grads_all_finite() {
        params.params.zero_grads();
        return Ok(UpdateOutcome { applied: false, grad_norm: f64::NAN });
    }
    match config.update_scope {
        UpdateScope::PredictionPath => params.params.sgd_step_where(config.eta, in_prediction_path),
        UpdateScope::AllParams => params.params.sgd_step(config.eta),
    }
    params.params.zero_grads();
    params.step_count += 1;
    Ok(UpdateOutcome { applied: true, grad_norm })
}

/// One entropy-minimization step on the pass's own plan scores (the
/// test-time-adaptation baseline). Touches every gradient-reachable
/// parameter.
pub fn tta_entropy_step(
    params: &mut ModelParameters,
    pass: &mut ForwardPass,
    eta: f64,
) -> Result<(f64, UpdateOutcome)> {
    let sm = pass.graph.softmax(pass.score_node)?;
    let h = pass.graph.entropy(sm)?;
    let h_value = pass.graph.value(h).item();
    pass.graph.backward(h)?;
    params.params.zero_grads();
    params.params.accumulate_grads(&pass.graph, &pass.binding);
    let grad_norm = params.params.grad_norm();
    if !params.params.grads_all_finite() {
        params.params.zero_grads();
        return Ok((h_value, UpdateOutcome { applied: false, grad_norm: f64::NAN }));
    }
    params.params.sgd_step(eta);
    params.params.zero_grads();
    params.step_count += 1;
    Ok((h_value, UpdateOutcome { applied: true, grad_norm }))
}

/// The per-frame records and metric inputs of one adapted stream.
#[derive(Debug, Default)]
pub struct StreamOutcome {
    pub records: Vec<AdaptationStepRecord>,
    pub frames: Vec<FrameOutput>,
}

struct Pending {
    pass: ForwardPass,
    selection: SelectionResult,
    record_idx: usize,
}

/// Run one online stream over temporally ordered scenes.
///
/// Frame order inside a scene: (a) perception on the new frame with the
/// pre-update parameters provides targets; (b) a pending trigger from the
/// previous frame consumes them and updates; (c) the full forward with the
/// possibly-updated parameters plans the frame and may arm the next
/// trigger. Scene boundaries clear pending triggers.
pub fn run_stream(
    params: &mut ModelParameters,
    scenes: &[Scene],
    strategy: Strategy,
    config: &AdaptationConfig,
) -> Result<StreamOutcome> {
    config.validate()?;
    let mut outcome = StreamOutcome::default();

    for (scene_idx, scene) in scenes.iter().enumerate() {
        let mut pending: Option<Pending> = None;
        for (frame_idx, (_, sensor)) in scene.frames.iter().enumerate() {
            // (a) + (b): consume a pending trigger against this frame's
            // perception, run with the not-yet-updated parameters.
            if let Some(mut p) = pending.take() {
                let targets = detect_only(params, sensor)?;
                let conf_filter = strategy != Strategy::EvopsfNoConf;
                let (loss, contributing) = targeted_loss(
                    &mut p.pass.graph,
                    &p.pass.prediction,
                    &targets,
                    &p.selection,
                    config,
                    conf_filter,
                )?;
                let rec = &mut outcome.records[p.record_idx];
                rec.contributing_ids = contributing;
                if let Some(loss) = loss {
                    rec.loss_value = p.pass.graph.value(loss).item();
                    let up = apply_update(params, &mut p.pass, loss, config)?;
                    rec.grad_norm = up.grad_norm;
                    rec.params_updated = up.applied;
                }
            }

            // (c) full forward with current parameters.
            let mut pass = forward(params, sensor)?;
            outcome.frames.push(FrameOutput {
                scene_idx,
                frame_idx,
                chosen_plan: chosen_plan(&pass.plan).to_vec(),
                pred_ids: pass.prediction.agent_ids.clone(),
                pred_trajectories: pass.prediction.trajectories.clone(),
                detections: pass.detections.clone(),
            });

            let trigger = compute_trigger(&pass.plan, config)?;
            let mut record = AdaptationStepRecord {
                scene_id: scene.id,
                t: sensor.t,
                trigger,
                selection: SelectionResult::default(),
                contributing_ids: Vec::new(),
                loss_value: 0.0,
                grad_norm: 0.0,
                params_updated: false,
            };

            match strategy {
                Strategy::Frozen => {
                    outcome.records.push(record);
                }
                Strategy::TtaEntropy => {
                    let (h, up) = tta_entropy_step(params, &mut pass, config.eta)?;
                    record.loss_value = h;
                    record.grad_norm = up.grad_norm;
                    record.params_updated = up.applied;
                    outcome.records.push(record);
                }
                Strategy::Evopsf
                | Strategy::EvopsfNoTrigger
                | Strategy::EvopsfNoTopk
                | Strategy::EvopsfNoConf => {
                    let adapt = trigger.fired || strategy == Strategy::EvopsfNoTrigger;
                    let has_next = frame_idx + 1 < scene.frames.len();
                    if adapt {
                        let selection = if strategy == Strategy::EvopsfNoTopk {
                            select_all(&pass.plan)
                        } else {
                            select_topk(&pass.plan, config)
                        };
                        record.selection = selection.clone();
                        let record_idx = outcome.records.len();
                        outcome.records.push(record);
                        if has_next && !selection.selected_ids.is_empty() {
                            pending = Some(Pending { pass, selection, record_idx });
                        }
                    } else {
                        outcome.records.push(record);
                    }
                }
            }
        }
    }
    Ok(outcome)
}

// ── record invariants ───────────────────────────────────────────────────

/// Check one record's structural invariants for its strategy. The error
/// names the scene, frame and violated rule.
pub fn validate_record(
    rec: &AdaptationStepRecord,
    strategy: Strategy,
    config: &AdaptationConfig,
) -> Result<()> {
    let fail = |rule: &str| -> Result<()> {
        Err(Error::Contract(format!(
            "trace invariant '{rule}' violated at scene {} frame {} (strategy {strategy})",
            rec.scene_id, rec.t
        )))
    };

    if rec.trigger.fired != (rec.trigger.entropy_value >= config.tau) {
        return fail("fired == (entropy >= tau)");
    }
    if rec.selection.selected_ids.len() != rec.selection.attention_weights.len() {
        return fail("selection ids and weights aligned");
    }
    if strategy != Strategy::EvopsfNoTopk && rec.selection.selected_ids.len() > config.k {
        return fail("|selection| <= k");
    }
    let ordered = rec
        .selection
        .attention_weights
        .windows(2)
        .zip(rec.selection.selected_ids.windows(2))
        .all(|(w, i)| w[0] > w[1] || (w[0] == w[1] && i[0] < i[1]));
    if !ordered {
        return fail("selection sorted by weight desc, id asc");
    }
    if !rec.contributing_ids.iter().all(|id| rec.selection.selected_ids.contains(id)) {
        return fail("contributing subset of selection");
    }
    if !(rec.loss_value >= 0.0) {
        return fail("loss >= 0");
    }
    match strategy {
        Strategy::Frozen => {
            if rec.params_updated {
                return fail("frozen never updates");
            }
        }
        Strategy::TtaEntropy => {}
        Strategy::EvopsfNoTrigger => {
            if rec.params_updated && rec.contributing_ids.is_empty() {
                return fail("update requires contributors");
            }
        }
        _ => {
            if rec.params_updated && !rec.trigger.fired {
                return fail("update requires a fired trigger");
            }
            if rec.params_updated && rec.contributing_ids.is_empty() {
                return fail("update requires contributors");
            }
        }
    }
    Ok(())
}
