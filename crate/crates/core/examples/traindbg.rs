use evopsf_core::trainer::*;
use evopsf_core::model::ModelConfig;
use evopsf_core::worldsim::{self, CorruptionLevel};

fn main() {
    let (profile, _) = worldsim::default_profiles();
    let scenes = worldsim::generate_collection(&profile, &CorruptionLevel::none(), 9, 0, 10, 16).unwrap();
    let model = ModelConfig { d_model: 16, m_modes: 3, plan_horizon: 6, pred_horizon: 6 };
    let w = LossWeights { detection: 1.0, confidence: 0.0, prediction: 1.0, plan_reg: 1.0, plan_score: 0.0 };
    for (lr, mom, epochs) in [(0.05, 0.9, 40), (0.03, 0.9, 60), (0.08, 0.9, 40)] {
        let cfg = TrainConfig { epochs, batch_size: 10, lr_pretrain: lr, momentum: mom, loss_weights: w, seed: 4 };
        let (_, rep) = pretrain(&cfg, model, &scenes).unwrap();
        let c = &rep.loss_curve;
        let mono = c.windows(2).all(|w| w[1] < w[0]);
        let bumps = c.windows(2).filter(|w| w[1] >= w[0]).count();
        println!("lr={lr} mom={mom} ep={epochs}: final/init {:.4} monotone={mono} bumps={bumps}", c.last().unwrap()/c[0]);
    }
}
