#![allow(dead_code)]

use tee_core::pipeline::ExperimentConfig;

/// Default shape with fewer samples and epochs, for fast end-to-end runs.
pub fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.benchmark.samples_per_cluster.train = 60;
    cfg.benchmark.samples_per_cluster.val = 20;
    cfg.benchmark.samples_per_cluster.test = 20;
    cfg.expert.schedule.epochs = 15;
    cfg.embed.pairs_per_relation = 200;
    cfg.embed.schedule.epochs = 5;
    cfg.router_schedule.epochs = 5;
    cfg.calibration.finetune.epochs = 5;
    cfg.meta.schedule.epochs = 10;
    cfg
}
