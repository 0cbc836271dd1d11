use alloc::string::String;
use alloc::vec::Vec;

use crate::detection::{Action, VerdictKind};
use crate::synth::{CaseTag, Owner};

/// Detector arms, each emitting one score per query (higher = more suspect).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Detector {
    /// 1 - max softmax of the top-routed expert.
    Msp,
    /// 1 - max softmax after the expert's fitted scalar temperature.
    CalibratedConfidence,
    /// Smallest OOD distance to any expert centroid.
    CentroidDistance,
    /// 1 if the top-2 experts' argmax labels differ.
    EnsembleVote,
    RoutingEntropy,
    /// JSD of the top-2 experts scaled by their gate-weight ratio, so dissent
    /// counts only when routing confidence is comparable.
    Disagreement,
    /// Unweighted JSD of the top-2 experts.
    RawDisagreement,
    PredictiveVariance,
    /// 1 - max raw affinity.
    Coverage,
    MetaReliability,
}

impl Detector {
    pub const ALL: [Detector; 10] = [
        Detector::Msp,
        Detector::CalibratedConfidence,
        Detector::CentroidDistance,
        Detector::EnsembleVote,
        Detector::RoutingEntropy,
        Detector::Disagreement,
        Detector::RawDisagreement,
        Detector::PredictiveVariance,
        Detector::Coverage,
        Detector::MetaReliability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Detector::Msp => "msp",
            Detector::CalibratedConfidence => "calibrated_confidence",
            Detector::CentroidDistance => "centroid_distance",
            Detector::EnsembleVote => "ensemble_vote",
            Detector::RoutingEntropy => "routing_entropy",
            Detector::Disagreement => "disagreement",
            Detector::RawDisagreement => "raw_disagreement",
            Detector::PredictiveVariance => "predictive_variance",
            Detector::Coverage => "coverage",
            Detector::MetaReliability => "meta_reliability",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.as_str() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Everything the evaluation stage decided and observed for one test query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: usize,
    pub cluster_id: usize,
    pub owner: Owner,
    pub case_tag: CaseTag,
    pub class_label: usize,
    /// The false-friend pair sharing the cluster, for boundary queries.
    pub shared_by: Option<(usize, usize)>,
    pub distances: Vec<f64>,
    pub raw_affinities: Vec<f64>,
    pub gate_weights: Vec<f64>,
    pub routing_entropy: f64,
    pub margin: f64,
    pub selected: Vec<usize>,
    pub selected_weights: Vec<f64>,
    /// Every expert's distribution before fine-tuning and calibration.
    pub original_probs: Vec<Vec<f64>>,
    /// Every expert's distribution as deployed.
    pub final_probs: Vec<Vec<f64>>,
    pub system_probs: Vec<f64>,
    pub prediction: usize,
    pub confidence: f64,
    pub correct: bool,
    /// Indexed by [`Detector::index`]; `None` when the arm is disabled.
    pub scores: Vec<Option<f64>>,
    pub meta_distribution: Option<Vec<f64>>,
    pub system_jsd: Option<f64>,
    pub comparable_confidence: Option<bool>,
    pub verdict: VerdictKind,
    pub action: Action,
    pub template: String,
    /// Entropy of the top-routed expert before fine-tuning.
    pub entropy_pre: f64,
    /// Entropy of the same expert after fine-tuning, before temperature.
    pub entropy_post: f64,
}

impl QueryRecord {
    pub fn score(&self, d: Detector) -> Option<f64> {
        self.scores.get(d.index()).copied().flatten()
    }

    pub fn min_distance(&self) -> f64 {
        self.distances.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
