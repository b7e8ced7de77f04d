use evopsf_core::harness::{ExperimentConfig, Runner};
use std::time::Instant;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = "out-calib".into();
    cfg.seeds = (0..3).collect();
    let runner = Runner::new(cfg).unwrap();
    let t0 = Instant::now();
    let trained = runner.ensure_checkpoints(false).unwrap();
    println!("pretrain+calibration: {:.1}s", t0.elapsed().as_secs_f64());
    for (name, tp) in &trained {
        println!("{name}: tau* = {:.4}", tp.resolved_tau);
    }
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string("out-calib/pretrain_report-region_a.json").unwrap()).unwrap();
    println!("region_a loss curve: {}", rep["loss_curve"]);
    println!("final terms: {}", rep["final_terms"]);
}
