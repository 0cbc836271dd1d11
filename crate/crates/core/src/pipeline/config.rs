use alloc::format;

use crate::detection::{MetaInputMode, ResponsePolicy, Thresholds, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::experts::ExpertArch;
use crate::router::RouterConfig;
use crate::synth::BenchmarkConfig;
use crate::train::SgdConfig;

/// SGD hyperparameters of one stage; the seed comes from the experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Schedule {
    pub fn sgd(self, seed: u64) -> SgdConfig {
        SgdConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
        }
    }

    fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("{prefix}.learning_rate"), "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{prefix}.batch_size"), "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMode {
    None,
    Temperature,
    Adaptive,
    BoundaryAware,
}

impl CalibrationMode {
    pub const ALL: [CalibrationMode; 4] = [
        CalibrationMode::None,
        CalibrationMode::Temperature,
        CalibrationMode::Adaptive,
        CalibrationMode::BoundaryAware,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationMode::None => "none",
            CalibrationMode::Temperature => "temperature",
            CalibrationMode::Adaptive => "adaptive",
            CalibrationMode::BoundaryAware => "boundary_aware",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// Whether boundary-aware fine-tuning runs before or after temperature fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationOrder {
    FinetuneThenTemperature,
    TemperatureThenFinetune,
}

impl CalibrationOrder {
    pub const ALL: [CalibrationOrder; 2] = [
        CalibrationOrder::FinetuneThenTemperature,
        CalibrationOrder::TemperatureThenFinetune,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationOrder::FinetuneThenTemperature => "finetune_then_temperature",
            CalibrationOrder::TemperatureThenFinetune => "temperature_then_finetune",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Switches {
    pub multi_expert_on: bool,
    pub boundary_losses_on: bool,
    pub calibration_mode: CalibrationMode,
    pub meta_expert_on: bool,
    pub mhc_on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertStage {
    pub hidden: usize,
    /// Residual streams of the doubly stochastic hidden mix when `mhc_on`.
    pub mhc_streams: usize,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedStage {
    pub hidden: usize,
    pub dim: usize,
    pub contrastive_on: bool,
    pub pairs_per_relation: usize,
    pub margin: f64,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectStage {
    pub theta_ood: f64,
    pub theta_jsd: f64,
    pub gamma: f64,
}

impl DetectStage {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            theta_ood: self.theta_ood,
            theta_jsd: self.theta_jsd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationStage {
    pub lambda_flat: f64,
    pub order: CalibrationOrder,
    pub finetune: Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaStage {
    pub input_mode: MetaInputMode,
    pub hidden: usize,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub benchmark: BenchmarkConfig,
    pub expert: ExpertStage,
    pub embed: EmbedStage,
    pub router: RouterConfig,
    pub router_schedule: Schedule,
    pub detect: DetectStage,
    pub calibration: CalibrationStage,
    pub meta: MetaStage,
    pub switches: Switches,
    pub policy: ResponsePolicy,
    pub ece_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            benchmark: BenchmarkConfig::default(),
            expert: ExpertStage {
                hidden: 32,
                mhc_streams: 4,
                schedule: Schedule { epochs: 60, learning_rate: 0.1, batch_size: 32 },
            },
            embed: EmbedStage {
                hidden: 16,
                dim: 8,
                contrastive_on: true,
                pairs_per_relation: 2000,
                margin: 1.0,
                schedule: Schedule { epochs: 20, learning_rate: 0.05, batch_size: 32 },
            },
            router: RouterConfig::default(),
            router_schedule: Schedule { epochs: 30, learning_rate: 0.1, batch_size: 32 },
            detect: DetectStage { theta_ood: 6.0, theta_jsd: 0.1, gamma: DEFAULT_GAMMA },
            calibration: CalibrationStage {
                lambda_flat: 0.5,
                order: CalibrationOrder::FinetuneThenTemperature,
                finetune: Schedule { epochs: 20, learning_rate: 0.05, batch_size: 32 },
            },
            meta: MetaStage {
                input_mode: MetaInputMode::EmbeddingPlusSignals,
                hidden: 16,
                schedule: Schedule { epochs: 60, learning_rate: 0.1, batch_size: 32 },
            },
            switches: Switches {
                multi_expert_on: true,
                boundary_losses_on: true,
                calibration_mode: CalibrationMode::BoundaryAware,
                meta_expert_on: true,
                mhc_on: false,
            },
            policy: ResponsePolicy::default(),
            ece_bins: crate::calibration::DEFAULT_ECE_BINS,
        }
    }
}

impl ExperimentConfig {
    /// Interventions off: top-1 routing, no boundary losses, no calibration,
    /// no meta-expert.
    pub fn baseline(&self) -> Self {
        let mut cfg = self.clone();
        cfg.switches.multi_expert_on = false;
        cfg.switches.boundary_losses_on = false;
        cfg.switches.calibration_mode = CalibrationMode::None;
        cfg.switches.meta_expert_on = false;
        cfg
    }

    /// Router settings with the switches applied.
    pub fn effective_router(&self) -> RouterConfig {
        let mut r = self.router;
        if !self.switches.boundary_losses_on {
            r.lambda_boundary = 0.0;
            r.lambda_coverage = 0.0;
        }
        r
    }

    /// Number of experts the system activates per query.
    pub fn system_k(&self) -> usize {
        if self.switches.multi_expert_on {
            self.router.k
        } else {
            1
        }
    }

    pub fn expert_arch(&self) -> ExpertArch {
        ExpertArch {
            hidden: self.expert.hidden,
            mix_streams: self.switches.mhc_on.then_some(self.expert.mhc_streams),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        let experts = self.benchmark.num_domains;
        if experts < 2 {
            return Err(Error::config("benchmark.num_domains", "routing needs at least two experts"));
        }
        if self.expert.hidden == 0 {
            return Err(Error::config("expert.hidden", "must be at least 1"));
        }
        if self.switches.mhc_on {
            let s = self.expert.mhc_streams;
            if s == 0 || self.expert.hidden % s != 0 {
                return Err(Error::config("expert.mhc_streams", "must divide expert.hidden"));
            }
        }
        self.expert.schedule.validate("expert")?;
        if self.embed.hidden == 0 {
            return Err(Error::config("embed.hidden", "must be at least 1"));
        }
        if self.embed.dim == 0 {
            return Err(Error::config("embed.dim", "must be at least 1"));
        }
        if self.embed.contrastive_on {
            if self.embed.pairs_per_relation == 0 {
                return Err(Error::config("embed.pairs_per_relation", "must be at least 1 when contrastive training is on"));
            }
            if !(self.embed.margin > 0.0) {
                return Err(Error::config("embed.margin", "must be positive"));
            }
            self.embed.schedule.validate("embed")?;
        }
        self.router.validate(experts)?;
        self.router_schedule.validate("router")?;
        if self.switches.multi_expert_on && self.router.k < 2 {
            return Err(Error::config("router.k", "multi-expert activation needs k >= 2"));
        }
        if !(self.detect.theta_ood > 0.0) {
            return Err(Error::config("detect.theta_ood", "must be positive"));
        }
        if !(self.detect.theta_jsd > 0.0) {
            return Err(Error::config("detect.theta_jsd", "must be positive"));
        }
        if !(self.detect.gamma > 0.0 && self.detect.gamma <= 1.0) {
            return Err(Error::config("detect.gamma", "must lie in (0, 1]"));
        }
        if !(self.calibration.lambda_flat >= 0.0) {
            return Err(Error::config("calibration.lambda_flat", "must be nonnegative"));
        }
        self.calibration.finetune.validate("calibration")?;
        if self.meta.hidden == 0 {
            return Err(Error::config("meta.hidden", "must be at least 1"));
        }
        self.meta.schedule.validate("meta")?;
        self.policy.validate()?;
        if self.ece_bins == 0 {
            return Err(Error::config("report.ece_bins", "must be at least 1"));
        }
        Ok(())
    }
}
