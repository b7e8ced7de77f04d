//! Offline pretraining on source-domain scenes.
//!
//! Standard supervised losses over the three heads, optimized with
//! momentum gradient descent. Nothing here is adaptation-aware; online
//! updates later reuse the same graphs with plain gradient steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tensor};
use crate::error::{Error, Result};
use crate::model::{forward, ForwardPass, ModelConfig, ModelParameters, POS_SCALE, VEL_SCALE};
use crate::rng::{KeyedRng, Purpose};
use crate::worldsim::{Scene, SceneFrame};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub detection: f64,
    pub confidence: f64,
    pub prediction: f64,
    pub plan_reg: f64,
    pub plan_score: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            detection: 1.0,
            confidence: 0.5,
            prediction: 1.0,
            plan_reg: 1.0,
            plan_score: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub lr_pretrain: f64,
    pub momentum: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr_pretrain: 0.05,
            momentum: 0.9,
            loss_weights: LossWeights::default(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_pretrain <= 0.0 {
            return Err(Error::Config("lr_pretrain must be > 0".into()));
        }
        let w = &self.loss_weights;
        if [w.detection, w.confidence, w.prediction, w.plan_reg, w.plan_score]
            .iter()
            .any(|&x| x < 0.0)
        {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Detached values of the individual terms, next to the weighted total node.
#[derive(Debug)]
pub struct LossBreakdown {
    pub total: NodeId,
    pub detection: f64,
    pub confidence: f64,
    pub prediction: f64,
    pub plan_reg: f64,
    pub plan_score: f64,
}

impl LossBreakdown {
    pub fn weighted_value(&self, w: &LossWeights) -> f64 {
        w.detection * self.detection
            + w.confidence * self.confidence
            + w.prediction * self.prediction
            + w.plan_reg * self.plan_reg
            + w.plan_score * self.plan_score
    }
}

/// Label rule for the confidence head: a detection counts as good when its
/// center lands within this distance of the ground-truth center.
pub const CONFIDENCE_LABEL_RADIUS: f64 = 1.0;

/// Build the weighted training loss for one frame on the pass's graph.
///
/// Terms: detection state MSE (x, y, vx, vy), confidence BCE against the
/// center-error rule, prediction MSE to ground-truth futures, winner-take-all
/// plan regression of the closest mode, and score cross-entropy against that
/// mode's index.
pub fn training_losses(
    pass: &mut ForwardPass,
    frame: &SceneFrame,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let g = &mut pass.graph;
    let ego = frame.ego.position;
    let mut terms: Vec<(NodeId, f64)> = Vec::new();

    // Perception: state regression + confidence labels.
    let mut det_losses = Vec::new();
    let mut conf_logits = Vec::new();
    let mut conf_labels = Vec::new();
    for dn in &pass.det_nodes {
        let idx = frame
            .agents
            .iter()
            .position(|a| a.id == dn.agent_id)
            .ok_or_else(|| Error::Contract(format!("detection for unknown agent {}", dn.agent_id)))?;
        let gt = &frame.agents[idx];
        let target = Tensor::row(vec![
            (gt.position.0 - ego.0) / POS_SCALE,
            (gt.position.1 - ego.1) / POS_SCALE,
            gt.velocity.0 / VEL_SCALE,
            gt.velocity.1 / VEL_SCALE,
        ]);
        det_losses.push(g.mse_to_const(dn.state, &target)?);

        let sv = g.value(dn.state).data();
        let (cx, cy) = (sv[0] * POS_SCALE + ego.0, sv[1] * POS_SCALE + ego.1);
        let err = ((cx - gt.position.0).powi(2) + (cy - gt.position.1).powi(2)).sqrt();
        conf_labels.push(if err < CONFIDENCE_LABEL_RADIUS { 1.0 } else { 0.0 });
        conf_logits.push(dn.conf_logit);
    }
    let mut detection_value = 0.0;
    if !det_losses.is_empty() {
        let mut acc = det_losses[0];
        for &t in &det_losses[1..] {
            acc = g.add(acc, t)?;
        }
        let mean = g.scale(acc, 1.0 / det_losses.len() as f64);
        detection_value = g.value(mean).item();
        terms.push((mean, weights.detection));
    }
    let mut confidence_value = 0.0;
    if !conf_logits.is_empty() {
        let row = g.concat_cols(
            &conf_logits
                .iter()
                .map(|&l| Ok(l))
                .collect::<Result<Vec<_>>>()?,
        )?;
        let flat = g.reshape(row, vec![conf_logits.len()])?;
        let bce = g.bce_with_logits(flat, &Tensor::vector(conf_labels))?;
        confidence_value = g.value(bce).item();
        terms.push((bce, weights.confidence));
    }

    // Prediction: MSE of every waypoint to the realized future.
    let mut prediction_value = 0.0;
    if !pass.prediction.agent_ids.is_empty() {
        let mut acc: Option<NodeId> = None;
        let mut count = 0usize;
        for (i, id) in pass.prediction.agent_ids.iter().enumerate() {
            let idx = frame
                .agents
                .iter()
                .position(|a| a.id == *id)
                .ok_or_else(|| Error::Contract(format!("prediction for unknown agent {id}")))?;
            for (q, node) in pass.prediction.waypoint_nodes[i].iter().enumerate() {
                let gt = frame.agent_future_gt[idx][q];
                let l = g.mse_to_const(*node, &Tensor::row(vec![gt.0, gt.1]))?;
                acc = Some(match acc {
                    Some(a) => g.add(a, l)?,
                    None => l,
                });
                count += 1;
            }
        }
        // Waypoints live in meters; regress in the normalized space.
        let mean = g.scale(acc.expect("non-empty"), 1.0 / (count as f64 * POS_SCALE * POS_SCALE));
        prediction_value = g.value(mean).item();
        terms.push((mean, weights.prediction));
    }

    // Plan: winner-take-all regression plus score cross-entropy. The winner
    // is the mode closest to the ground truth (detached comparison).
    let mut winner = 0;
    let mut best = f64::INFINITY;
    for (m, candidate) in pass.plan.candidates.iter().enumerate() {
        let d: f64 = candidate
            .iter()
            .zip(&frame.ego_future_gt)
            .map(|(w, gt)| (w.0 - gt.0).powi(2) + (w.1 - gt.1).powi(2))
            .sum();
        if d < best {
            best = d;
            winner = m;
        }
    }
    let mut acc: Option<NodeId> = None;
    for (p, node) in pass.plan_waypoint_nodes[winner].iter().enumerate() {
        let gt = frame.ego_future_gt[p];
        let l = g.mse_to_const(*node, &Tensor::row(vec![gt.0, gt.1]))?;
        acc = Some(match acc {
            Some(a) => g.add(a, l)?,
            None => l,
        });
    }
    let reg = g.scale(
        acc.expect("plan horizon > 0"),
        1.0 / (frame.ego_future_gt.len() as f64 * POS_SCALE * POS_SCALE),
    );
    let plan_reg_value = g.value(reg).item();
    terms.push((reg, weights.plan_reg));

    let ce = g.cross_entropy_logits(pass.score_node, winner)?;
    let plan_score_value = g.value(ce).item();
    terms.push((ce, weights.plan_score));

    // Weighted sum.
    let mut total: Option<NodeId> = None;
    for (node, w) in terms {
        let scaled = g.scale(node, w);
        total = Some(match total {
            Some(t) => g.add(t, scaled)?,
            None => scaled,
        });
    }

    Ok(LossBreakdown {
        total: total.expect("at least the plan terms exist"),
        detection: detection_value,
        confidence: confidence_value,
        prediction: prediction_value,
        plan_reg: plan_reg_value,
        plan_score: plan_score_value,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainReport {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub scenes: usize,
    pub frames_per_epoch: usize,
    /// Mean weighted loss per epoch.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub final_terms: FinalTerms,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FinalTerms {
    pub detection: f64,
    pub confidence: f64,
    pub prediction: f64,
    pub plan_reg: f64,
    pub plan_score: f64,
}

/// Train from scratch on the given scenes. Deterministic for a fixed
/// config; diverging (non-finite) losses abort with the last finite step.
pub fn pretrain(
    config: &TrainConfig,
    model_config: ModelConfig,
    scenes: &[Scene],
) -> Result<(ModelParameters, PretrainReport)> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::Config("pretrain needs a non-empty scene collection".into()));
    }
    let mut params = ModelParameters::init(model_config, config.seed)?;
    let mut velocity: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut final_terms = FinalTerms::default();
    let mut global_step = 0usize;
    let frames_per_epoch: usize = scenes.iter().map(|s| s.frames.len()).sum();

    for epoch in 0..config.epochs {
        // Deterministic per-epoch scene order.
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        let mut shuffle = KeyedRng::from_key(&[config.seed, epoch as u64, Purpose::Shuffle as u64]);
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle.pick(i + 1));
        }

        let mut epoch_loss = 0.0;
        let mut epoch_frames = 0usize;
        let mut terms = FinalTerms::default();

        for chunk in order.chunks(config.batch_size) {
            params.params.zero_grads();
            let mut batch_frames = 0usize;
            for &scene_idx in chunk {
                for (frame, sensor) in &scenes[scene_idx].frames {
                    let mut pass = forward(&params, sensor)?;
                    let lb = training_losses(&mut pass, frame, &config.loss_weights)?;
                    let loss_value = pass.graph.value(lb.total).item();
                    if !loss_value.is_finite() {
                        return Err(Error::Training(format!(
                            "loss diverged at step {global_step} (epoch {epoch})"
                        )));
                    }
                    pass.graph.backward(lb.total)?;
                    params.params.accumulate_grads(&pass.graph, &pass.binding);
                    epoch_loss += loss_value;
                    terms.detection += lb.detection;
                    terms.confidence += lb.confidence;
                    terms.prediction += lb.prediction;
                    terms.plan_reg += lb.plan_reg;
                    terms.plan_score += lb.plan_score;
                    batch_frames += 1;
                    epoch_frames += 1;
                    global_step += 1;
                }
            }
            params.params.scale_grads(1.0 / batch_frames as f64);
            if !params.params.grads_all_finite() {
                return Err(Error::Training(format!(
                    "gradient diverged at step {global_step} (epoch {epoch})"
                )));
            }
            // Momentum step.
            let names: Vec<String> = params.params.names().cloned().collect();
            for name in names {
                let grad = params.params.grad_of(&name).expect("known name").clone();
                let v = velocity
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros_like(&grad));
                v.scale_in_place(config.momentum);
                v.axpy(1.0, &grad);
                let dir = v.clone();
                params.params.apply_step(&name, config.lr_pretrain, &dir);
            }
        }

        loss_curve.push(epoch_loss / epoch_frames as f64);
        if epoch + 1 == config.epochs {
            let inv = 1.0 / epoch_frames as f64;
            final_terms = FinalTerms {
                detection: terms.detection * inv,
                confidence: terms.confidence * inv,
                prediction: terms.prediction * inv,
                plan_reg: terms.plan_reg * inv,
                plan_score: terms.plan_score * inv,
            };
        }
    }

    params.params.zero_grads();
    let report = PretrainReport {
        schema_version: 1,
        config: config.clone(),
        model: model_config,
        scenes: scenes.len(),
        frames_per_epoch,
        final_loss: *loss_curve.last().expect("epochs > 0"),
        loss_curve,
        final_terms,
    };
    Ok((params, report))
}
