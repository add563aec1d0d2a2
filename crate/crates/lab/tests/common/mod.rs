use dam_core::datagen::{DomainPairSpec, ShiftSpec};
use dam_lab::ExperimentConfig;

/// A quick configuration for harness tests.
pub fn tiny_config(seeds: std::ops::Range<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: "tiny".into(),
        seeds: seeds.collect(),
        dataset: DomainPairSpec::new(3, 4, 150, 120, ShiftSpec::rotation(0.5)),
        ..ExperimentConfig::default()
    };
    cfg.source_training.epochs = 5;
    cfg.dfs.epochs = 5;
    cfg.adl.epochs = 3;
    cfg
}
