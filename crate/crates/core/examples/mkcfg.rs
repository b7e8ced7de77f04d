use evopsf_core::harness::ExperimentConfig;
use evopsf_core::worldsim::SuiteKind;

fn main() {
    let full = ExperimentConfig::default();
    std::fs::write("configs/cross_region.json", full.to_json_string()).unwrap();

    let mut ind = ExperimentConfig::default();
    ind.suite = SuiteKind::InDomain;
    std::fs::write("configs/in_domain.json", ind.to_json_string()).unwrap();

    let mut cor = ExperimentConfig::default();
    cor.suite = SuiteKind::Corruption;
    std::fs::write("configs/corruption.json", cor.to_json_string()).unwrap();

    let mut quick = ExperimentConfig::default();
    quick.seeds = (0..2).collect();
    quick.counts.train_scenes = 8;
    quick.counts.eval_scenes = 2;
    quick.train.epochs = 6;
    quick.model.d_model = 16;
    quick.output_dir = "out-quick".into();
    std::fs::write("configs/quick.json", quick.to_json_string()).unwrap();
    println!("wrote configs/");
}
