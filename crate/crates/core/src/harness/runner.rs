//! Experiment orchestration: checkpoints, threshold calibration, and the
//! (suite x strategy x seed) grid.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evopsf::{run_stream, AdaptationConfig, Strategy, ThresholdMode};
use crate::harness::config::ExperimentConfig;
use crate::harness::trace::{write_trace, TraceHeader};
use crate::metrics::{self, MetricsReport};
use crate::model::{forward, ModelParameters};
use crate::trainer::pretrain;
use crate::worldsim::{
    generate_collection, scene_suite, CorruptionLevel, RegionProfile, SuiteKind,
};

/// Scene-id offsets keeping train, calibration and eval streams disjoint.
const EVAL_SCENE_OFFSET: u64 = 1_000_000;
const CALIBRATION_SCENE_OFFSET: u64 = 2_000_000;

/// One trained profile: parameters plus its resolved entropy threshold.
#[derive(Clone, Debug)]
pub struct TrainedProfile {
    pub params: ModelParameters,
    pub resolved_tau: f64,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub suite: SuiteKind,
    pub split: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub resolved_tau: f64,
    pub report: MetricsReport,
    pub records: Vec<crate::evopsf::AdaptationStepRecord>,
}

pub struct Runner {
    pub cfg: ExperimentConfig,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Runner { cfg })
    }

    fn checkpoint_path(&self, profile: &RegionProfile) -> PathBuf {
        self.cfg.out_dir().join(format!("checkpoint-{}.json", profile.name))
    }

    fn report_path(&self, profile: &RegionProfile) -> PathBuf {
        self.cfg.out_dir().join(format!("pretrain_report-{}.json", profile.name))
    }

    /// Pretrain (or load) one checkpoint per train profile the suite needs,
    /// then calibrate the entropy threshold on held-out source scenes.
    pub fn ensure_checkpoints(&self, force: bool) -> Result<BTreeMap<String, TrainedProfile>> {
        std::fs::create_dir_all(self.cfg.out_dir())?;
        let mut out = BTreeMap::new();
        for profile in self.cfg.train_profiles() {
            let ckpt = self.checkpoint_path(profile);
            let params = if ckpt.exists() && !force {
                ModelParameters::load(&ckpt, self.cfg.model)?
            } else {
                let scenes = generate_collection(
                    profile,
                    &CorruptionLevel::none(),
                    self.cfg.train.seed,
                    0,
                    self.cfg.counts.train_scenes,
                    self.cfg.counts.scene_length,
                )?;
                let (params, report) = pretrain(&self.cfg.train, self.cfg.model, &scenes)?;
                params.save(&ckpt)?;
                std::fs::write(
                    self.report_path(profile),
                    serde_json::to_string_pretty(&report).expect("report serialization"),
                )?;
                params
            };
            let resolved_tau = self.calibrate_tau(&params, profile)?;
            out.insert(profile.name.clone(), TrainedProfile { params, resolved_tau });
        }
        Ok(out)
    }

    /// Resolve the entropy threshold: fixed keeps the configured value;
    /// quantile mode takes the q-quantile (nearest rank) of plan entropies
    /// over held-out source scenes.
    fn calibrate_tau(&self, params: &ModelParameters, profile: &RegionProfile) -> Result<f64> {
        match self.cfg.adaptation.threshold_mode {
            ThresholdMode::Fixed => Ok(self.cfg.adaptation.tau),
            ThresholdMode::Quantile { q } => {
                let scenes = generate_collection(
                    profile,
                    &CorruptionLevel::none(),
                    self.cfg.train.seed,
                    CALIBRATION_SCENE_OFFSET,
                    self.cfg.counts.eval_scenes.max(4),
                    self.cfg.counts.scene_length,
                )?;
                let mut entropies = Vec::new();
                for scene in &scenes {
                    for (_, sensor) in &scene.frames {
                        let pass = forward(params, sensor)?;
                        entropies.push(crate::evopsf::plan_entropy(&pass.plan.raw_scores));
                    }
                }
                if entropies.is_empty() {
                    return Err(Error::Config("no calibration frames".into()));
                }
                entropies.sort_by(|a, b| a.total_cmp(b));
                let idx = ((entropies.len() - 1) as f64 * q).round() as usize;
                Ok(entropies[idx])
            }
        }
    }

    fn run_grid(&self, strategies: &[Strategy]) -> Result<Vec<CellResult>> {
        let trained = self.ensure_checkpoints(false)?;
        let splits = scene_suite(
            self.cfg.suite,
            self.cfg.train.seed,
            &self.cfg.counts,
            &self.cfg.profile_a,
            &self.cfg.profile_b,
            &self.cfg.corruptions,
        )?;

        struct Cell {
            split_label: String,
            train_profile: String,
            eval_profile: RegionProfile,
            corruption: CorruptionLevel,
            strategy: Strategy,
            seed: u64,
        }
        let mut cells = Vec::new();
        for split in &splits {
            for &strategy in strategies {
                for &seed in &self.cfg.seeds {
                    cells.push(Cell {
                        split_label: split.label.clone(),
                        train_profile: split.train_profile.name.clone(),
                        eval_profile: split.eval_profile.clone(),
                        corruption: split.eval_corruption.clone(),
                        strategy,
                        seed,
                    });
                }
            }
        }

        let mut results: Vec<CellResult> = cells
            .par_iter()
            .map(|cell| -> Result<CellResult> {
                let profile = trained
                    .get(&cell.train_profile)
                    .ok_or_else(|| Error::Config(format!("no checkpoint for {}", cell.train_profile)))?;
                let mut params = profile.params.clone();
                let adaptation = AdaptationConfig {
                    tau: profile.resolved_tau,
                    threshold_mode: ThresholdMode::Fixed,
                    ..self.cfg.adaptation
                };
                let scenes = generate_collection(
                    &cell.eval_profile,
                    &cell.corruption,
                    cell.seed,
                    EVAL_SCENE_OFFSET,
                    self.cfg.counts.eval_scenes,
                    self.cfg.counts.scene_length,
                )?;
                let start = Instant::now();
                let outcome = run_stream(&mut params, &scenes, cell.strategy, &adaptation)?;
                let wall = start.elapsed().as_secs_f64();
                for rec in &outcome.records {
                    crate::evopsf::validate_record(rec, cell.strategy, &adaptation)?;
                }
                let report =
                    metrics::aggregate(&scenes, &outcome.frames, params.step_count, wall);
                Ok(CellResult {
                    suite: self.cfg.suite,
                    split: cell.split_label.clone(),
                    strategy: cell.strategy,
                    seed: cell.seed,
                    resolved_tau: adaptation.tau,
                    report,
                    records: outcome.records,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        results.sort_by(|a, b| {
            a.split
                .cmp(&b.split)
                .then(a.strategy.name().cmp(b.strategy.name()))
                .then(a.seed.cmp(&b.seed))
        });
        Ok(results)
    }

    /// The configured (suite x strategy x seed) grid.
    pub fn run(&self) -> Result<Vec<CellResult>> {
        self.run_grid(&self.cfg.strategies)
    }

    /// The four-variant ablation grid on this config's suite.
    pub fn ablate(&self) -> Result<Vec<CellResult>> {
        self.run_grid(&[
            Strategy::Evopsf,
            Strategy::EvopsfNoTrigger,
            Strategy::EvopsfNoTopk,
            Strategy::EvopsfNoConf,
        ])
    }

    /// Write metrics.csv plus one trace file per cell.
    pub fn persist(&self, results: &[CellResult], csv_name: &str) -> Result<PathBuf> {
        let dir = self.cfg.out_dir();
        std::fs::create_dir_all(&dir)?;
        let csv_path = dir.join(csv_name);
        std::fs::write(&csv_path, render_csv(results))?;
        for r in results {
            let adaptation = AdaptationConfig {
                tau: r.resolved_tau,
                threshold_mode: ThresholdMode::Fixed,
                ..self.cfg.adaptation
            };
            let header = TraceHeader::new(r.strategy, &adaptation);
            let name = format!(
                "trace-{}-{}-{}.jsonl",
                sanitize(&r.split),
                r.strategy.name(),
                r.seed
            );
            write_trace(&dir.join(name), &header, &r.records)?;
        }
        Ok(csv_path)
    }
}

fn sanitize(label: &str) -> String {
    label.replace("->", "_to_").replace(':', "-")
}

pub const CSV_HEADER: &str = "suite,split,strategy,seed,plan_l2,collision_rate,ade,fde,miss_rate,det_center_err,det_precision,det_recall,update_count,wall_time_s";

/// Fixed-header CSV; floats use the shortest round-trip form so reruns are
/// byte-identical (wall_time_s, the last column, is the one exception).
pub fn render_csv(results: &[CellResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let m = &r.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.suite,
            r.split,
            r.strategy,
            r.seed,
            m.plan_l2_mean,
            m.collision_rate,
            m.ade,
            m.fde,
            m.miss_rate,
            m.det_center_err,
            m.det_precision,
            m.det_recall,
            m.update_count,
            m.wall_time_s,
        ));
    }
    out
}
