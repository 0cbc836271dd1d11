//! Synthetic false-friend benchmark.
//!
//! Domains own private Gaussian clusters. Pairs of false-friend domains also
//! share clusters: identical centres and noise, but each shared sample has a
//! hidden owner whose affine label function decides its class. Gap clusters
//! belong to nobody. A few trailing "context" dimensions carry a noisy code of
//! the owner, mixed with weight `κ`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{argmax, Mat64};
use crate::rng::{self, Rng};

const RELABEL_BUDGET: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Owner {
    Domain(usize),
    Gap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaseTag {
    InDomain,
    Boundary,
    Gap,
}

impl CaseTag {
    pub const ALL: [CaseTag; 3] = [CaseTag::InDomain, CaseTag::Boundary, CaseTag::Gap];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseTag::InDomain => "in_domain",
            CaseTag::Boundary => "boundary",
            CaseTag::Gap => "gap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in_domain" => Some(CaseTag::InDomain),
            "boundary" => Some(CaseTag::Boundary),
            "gap" => Some(CaseTag::Gap),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FalseFriendPair {
    pub first: usize,
    pub second: usize,
    pub shared_clusters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub input_dim: usize,
    pub num_domains: usize,
    pub classes: usize,
    pub private_clusters_per_domain: usize,
    pub false_friend_pairs: Vec<FalseFriendPair>,
    pub gap_clusters: usize,
    pub cluster_sigma: f64,
    /// κ: weight of the owner code in the context dimensions.
    pub context_informativeness: f64,
    pub context_dims: usize,
    pub samples_per_cluster: SplitSizes,
    /// ρ_min: required label disagreement between paired domains on shared clusters.
    pub min_divergence: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            num_domains: 4,
            classes: 3,
            private_clusters_per_domain: 3,
            false_friend_pairs: vec![
                FalseFriendPair { first: 0, second: 1, shared_clusters: 2 },
                FalseFriendPair { first: 2, second: 3, shared_clusters: 1 },
            ],
            gap_clusters: 2,
            cluster_sigma: 0.15,
            context_informativeness: 0.3,
            context_dims: 2,
            samples_per_cluster: SplitSizes { train: 200, val: 50, test: 100 },
            min_divergence: 0.5,
            seed: 42,
        }
    }
}

impl BenchmarkConfig {
    pub fn feature_dim(&self) -> usize {
        self.input_dim + self.context_dims
    }

    pub fn shared_cluster_count(&self) -> usize {
        self.false_friend_pairs.iter().map(|p| p.shared_clusters).sum()
    }

    pub fn total_clusters(&self) -> usize {
        self.num_domains * self.private_clusters_per_domain
            + self.shared_cluster_count()
            + self.gap_clusters
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("benchmark.input_dim", "must be at least 1"));
        }
        if self.num_domains < 2 {
            return Err(Error::config("benchmark.num_domains", "need at least 2 domains"));
        }
        if self.classes < 2 {
            return Err(Error::config("benchmark.classes", "need at least 2 classes"));
        }
        if !(self.cluster_sigma > 0.0) || !self.cluster_sigma.is_finite() {
            return Err(Error::config("benchmark.cluster_sigma", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.context_informativeness) {
            return Err(Error::config("benchmark.context_informativeness", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.min_divergence) {
            return Err(Error::config("benchmark.min_divergence", "must lie in [0, 1]"));
        }
        for (i, pair) in self.false_friend_pairs.iter().enumerate() {
            if pair.first == pair.second {
                return Err(Error::config(
                    "benchmark.false_friend_pairs",
                    format!("pair {i} repeats domain {}", pair.first),
                ));
            }
            if pair.first >= self.num_domains || pair.second >= self.num_domains {
                return Err(Error::config(
                    "benchmark.false_friend_pairs",
                    format!("pair {i} references a domain outside 0..{}", self.num_domains),
                ));
            }
        }
        if self.total_clusters() == 0 {
            return Err(Error::config("benchmark.private_clusters_per_domain", "benchmark has no clusters"));
        }
        for d in 0..self.num_domains {
            let shared = self
                .false_friend_pairs
                .iter()
                .any(|p| (p.first == d || p.second == d) && p.shared_clusters > 0);
            if self.private_clusters_per_domain == 0 && !shared {
                return Err(Error::config(
                    "benchmark.private_clusters_per_domain",
                    format!("domain {d} owns no clusters"),
                ));
            }
        }
        let s = self.samples_per_cluster;
        if s.train == 0 || s.val == 0 || s.test == 0 {
            return Err(Error::config("benchmark.samples_per_cluster", "every split needs samples"));
        }
        Ok(())
    }

    /// Owner code written into the context dimensions (zero for gaps).
    pub fn owner_code(&self, owner: Owner) -> Vec<f64> {
        match owner {
            Owner::Gap => vec![0.0; self.context_dims],
            Owner::Domain(d) => {
                let angle = core::f64::consts::TAU * d as f64 / self.num_domains as f64;
                (0..self.context_dims)
                    .map(|j| libm::cos(angle - core::f64::consts::FRAC_PI_2 * j as f64))
                    .collect()
            }
        }
    }
}

/// `y = argmax(W x + b)`, ties to the lowest class.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLabeler {
    pub weight: Mat64,
    pub bias: Vec<f64>,
}

impl AffineLabeler {
    fn sample(rng: &mut Rng, classes: usize, dim: usize) -> Result<Self> {
        let data = (0..classes * dim).map(|_| rng::normal(rng)).collect();
        Ok(Self {
            weight: Mat64::from_vec(classes, dim, data)?,
            bias: (0..classes).map(|_| 0.5 * rng::normal(rng)).collect(),
        })
    }

    pub fn label(&self, features: &[f64]) -> usize {
        let mut scores = self.weight.matvec(features);
        for (s, b) in scores.iter_mut().zip(&self.bias) {
            *s += b;
        }
        argmax(&scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterKind {
    Private(usize),
    Shared(usize, usize),
    Gap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    pub kind: ClusterKind,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub domain_id: usize,
    pub labeler: AffineLabeler,
    pub owned_cluster_ids: Vec<usize>,
    pub shared_cluster_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub class_label: usize,
    pub owner: Owner,
    pub cluster_id: usize,
    pub case_tag: CaseTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairRelation {
    SameDomain,
    FalseFriend,
}

/// Pair of train-split indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContrastivePair {
    pub anchor: usize,
    pub other: usize,
    pub relation: PairRelation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub clusters: Vec<Cluster>,
    pub domains: Vec<DomainSpec>,
    pub gap_labeler: AffineLabeler,
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl Benchmark {
    pub fn split(&self, split: Split) -> &[LabeledExample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// Class under the owner's causal label function.
    pub fn label_oracle(&self, features: &[f64], owner: Owner) -> Result<usize> {
        crate::numerics::ensure_len("oracle features", self.feature_dim(), features.len())?;
        match owner {
            Owner::Gap => Ok(self.gap_labeler.label(features)),
            Owner::Domain(d) => self
                .domains
                .get(d)
                .map(|spec| spec.labeler.label(features))
                .ok_or_else(|| Error::Lookup(format!("unknown owner domain {d}"))),
        }
    }

    /// Samples of one split owned by `domain`.
    pub fn domain_samples(&self, split: Split, domain: usize) -> Vec<&LabeledExample> {
        self.split(split)
            .iter()
            .filter(|e| e.owner == Owner::Domain(domain))
            .collect()
    }

    /// Fraction of shared-cluster samples (of one split) on which the two
    /// domains' label functions disagree.
    pub fn pair_disagreement(&self, split: Split, first: usize, second: usize) -> f64 {
        let shared: Vec<&LabeledExample> = self
            .split(split)
            .iter()
            .filter(|e| {
                matches!(self.clusters[e.cluster_id].kind,
                    ClusterKind::Shared(a, b) if (a, b) == (first, second) || (a, b) == (second, first))
            })
            .collect();
        disagreement(
            &self.domains[first].labeler,
            &self.domains[second].labeler,
            shared.iter().map(|e| e.features.as_slice()),
        )
    }
}

fn disagreement<'a>(
    a: &AffineLabeler,
    b: &AffineLabeler,
    features: impl Iterator<Item = &'a [f64]>,
) -> f64 {
    let (mut differ, mut total) = (0usize, 0usize);
    for x in features {
        total += 1;
        if a.label(x) != b.label(x) {
            differ += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        differ as f64 / total as f64
    }
}

struct Draft {
    features: Vec<f64>,
    owner: Owner,
    cluster_id: usize,
    case_tag: CaseTag,
}

fn layout_clusters(cfg: &BenchmarkConfig, rng: &mut Rng) -> Vec<Cluster> {
    let mut kinds = Vec::with_capacity(cfg.total_clusters());
    for d in 0..cfg.num_domains {
        for _ in 0..cfg.private_clusters_per_domain {
            kinds.push(ClusterKind::Private(d));
        }
    }
    for pair in &cfg.false_friend_pairs {
        for _ in 0..pair.shared_clusters {
            kinds.push(ClusterKind::Shared(pair.first, pair.second));
        }
    }
    for _ in 0..cfg.gap_clusters {
        kinds.push(ClusterKind::Gap);
    }
    kinds
        .into_iter()
        .enumerate()
        .map(|(id, kind)| Cluster {
            id,
            kind,
            center: (0..cfg.input_dim).map(|_| rng::uniform(rng, -1.0, 1.0)).collect(),
        })
        .collect()
}

fn draw_split(cfg: &BenchmarkConfig, clusters: &[Cluster], split_index: u64, count: usize) -> Vec<Draft> {
    let mut rng = rng::substream(cfg.seed, "samples", split_index);
    let kappa = cfg.context_informativeness;
    let mut out = Vec::with_capacity(clusters.len() * count);
    for cluster in clusters {
        for _ in 0..count {
            let (owner, case_tag) = match cluster.kind {
                ClusterKind::Private(d) => (Owner::Domain(d), CaseTag::InDomain),
                ClusterKind::Shared(a, b) => {
                    let d = if rng.random::<bool>() { a } else { b };
                    (Owner::Domain(d), CaseTag::Boundary)
                }
                ClusterKind::Gap => (Owner::Gap, CaseTag::Gap),
            };
            let mut features: Vec<f64> = cluster
                .center
                .iter()
                .map(|&c| c + cfg.cluster_sigma * rng::normal(&mut rng))
                .collect();
            for code in cfg.owner_code(owner) {
                features.push(kappa * code + (1.0 - kappa) * rng::normal(&mut rng));
            }
            out.push(Draft {
                features,
                owner,
                cluster_id: cluster.id,
                case_tag,
            });
        }
    }
    out
}

/// Generate the benchmark; a pure function of the config (including its seed).
pub fn build_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let clusters = layout_clusters(cfg, &mut rng::stream(cfg.seed, "centers"));
    let drafts: Vec<Vec<Draft>> = Split::ALL
        .iter()
        .enumerate()
        .map(|(i, &s)| draw_split(cfg, &clusters, i as u64, cfg.samples_per_cluster.get(s)))
        .collect();

    let dim = cfg.feature_dim();
    let mut label_rng = rng::stream(cfg.seed, "label-maps");
    let mut labelers: Vec<AffineLabeler> = (0..cfg.num_domains)
        .map(|_| AffineLabeler::sample(&mut label_rng, cfg.classes, dim))
        .collect::<Result<_>>()?;
    let gap_labeler = AffineLabeler::sample(&mut label_rng, cfg.classes, dim)?;

    // Resample the second domain of any pair below the divergence floor
    // until every pair clears it on every split.
    let mut relabel_rng = rng::stream(cfg.seed, "relabel");
    let mut retries = 0usize;
    loop {
        let failing = cfg.false_friend_pairs.iter().find(|pair| {
            drafts.iter().any(|split| {
                let shared = split.iter().filter(|d| {
                    matches!(clusters[d.cluster_id].kind,
                        ClusterKind::Shared(a, b) if a == pair.first && b == pair.second)
                });
                disagreement(
                    &labelers[pair.first],
                    &labelers[pair.second],
                    shared.map(|d| d.features.as_slice()),
                ) < cfg.min_divergence
            })
        });
        let Some(pair) = failing else { break };
        if retries == RELABEL_BUDGET {
            return Err(Error::Generation(format!(
                "pair ({}, {}) cannot reach divergence {} within {RELABEL_BUDGET} resamples",
                pair.first, pair.second, cfg.min_divergence
            )));
        }
        labelers[pair.second] = AffineLabeler::sample(&mut relabel_rng, cfg.classes, dim)?;
        retries += 1;
    }

    let domains = labelers
        .into_iter()
        .enumerate()
        .map(|(d, labeler)| DomainSpec {
            domain_id: d,
            labeler,
            owned_cluster_ids: clusters
                .iter()
                .filter(|c| c.kind == ClusterKind::Private(d))
                .map(|c| c.id)
                .collect(),
            shared_cluster_ids: clusters
                .iter()
                .filter(|c| matches!(c.kind, ClusterKind::Shared(a, b) if a == d || b == d))
                .map(|c| c.id)
                .collect(),
        })
        .collect::<Vec<_>>();

    let finish = |drafts: Vec<Draft>| -> Vec<LabeledExample> {
        drafts
            .into_iter()
            .map(|d| {
                let class_label = match d.owner {
                    Owner::Gap => gap_labeler.label(&d.features),
                    Owner::Domain(o) => domains[o].labeler.label(&d.features),
                };
                LabeledExample {
                    features: d.features,
                    class_label,
                    owner: d.owner,
                    cluster_id: d.cluster_id,
                    case_tag: d.case_tag,
                }
            })
            .collect()
    };
    let mut drafts = drafts.into_iter();
    let train = finish(drafts.next().unwrap_or_default());
    let val = finish(drafts.next().unwrap_or_default());
    let test = finish(drafts.next().unwrap_or_default());
    Ok(Benchmark {
        config: cfg.clone(),
        clusters,
        domains,
        gap_labeler,
        train,
        val,
        test,
    })
}

/// Draw `pairs_per_relation` pairs of each relation from the train split.
///
/// False-friend pairs take two samples of one shared cluster with different
/// owners; same-domain pairs take two samples of one shared cluster with the
/// same owner.
pub fn make_contrastive_pairs(
    bench: &Benchmark,
    pairs_per_relation: usize,
    seed: u64,
) -> Result<Vec<ContrastivePair>> {
    if pairs_per_relation == 0 {
        return Ok(Vec::new());
    }
    // (first-owner indices, second-owner indices) per shared cluster
    let mut pools: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for cluster in &bench.clusters {
        if let ClusterKind::Shared(a, b) = cluster.kind {
            let mut left = Vec::new();
            let mut right = Vec::new();
            for (i, e) in bench.train.iter().enumerate() {
                if e.cluster_id != cluster.id {
                    continue;
                }
                match e.owner {
                    Owner::Domain(o) if o == a => left.push(i),
                    Owner::Domain(o) if o == b => right.push(i),
                    _ => {}
                }
            }
            if left.len() >= 2 && right.len() >= 2 {
                pools.push((left, right));
            }
        }
    }
    if pools.is_empty() {
        return Err(Error::Generation(String::from(
            "no shared cluster has at least two train samples per owner",
        )));
    }
    let mut rng = rng::stream(seed, "contrastive-pairs");
    let mut pairs = Vec::with_capacity(2 * pairs_per_relation);
    for _ in 0..pairs_per_relation {
        let (left, right) = &pools[rng.random_range(0..pools.len())];
        pairs.push(ContrastivePair {
            anchor: left[rng.random_range(0..left.len())],
            other: right[rng.random_range(0..right.len())],
            relation: PairRelation::FalseFriend,
        });
    }
    for _ in 0..pairs_per_relation {
        let (left, right) = &pools[rng.random_range(0..pools.len())];
        let side = if rng.random::<bool>() { left } else { right };
        let anchor = rng.random_range(0..side.len());
        let mut other = rng.random_range(0..side.len() - 1);
        if other >= anchor {
            other += 1;
        }
        pairs.push(ContrastivePair {
            anchor: side[anchor],
            other: side[other],
            relation: PairRelation::SameDomain,
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchmarkConfig {
        BenchmarkConfig {
            samples_per_cluster: SplitSizes { train: 20, val: 5, test: 10 },
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn counts_follow_config() {
        let cfg = small();
        let b = build_benchmark(&cfg).unwrap();
        assert_eq!(cfg.total_clusters(), 17);
        assert_eq!(b.train.len(), 20 * 17);
        assert_eq!(b.val.len(), 5 * 17);
        assert_eq!(b.test.len(), 10 * 17);
        let boundary = b.test.iter().filter(|e| e.case_tag == CaseTag::Boundary).count();
        let gap = b.test.iter().filter(|e| e.case_tag == CaseTag::Gap).count();
        assert_eq!(boundary, 30);
        assert_eq!(gap, 20);
    }

    #[test]
    fn tags_match_cluster_kinds() {
        let b = build_benchmark(&small()).unwrap();
        for e in b.train.iter().chain(&b.val).chain(&b.test) {
            let expected = match b.clusters[e.cluster_id].kind {
                ClusterKind::Private(_) => CaseTag::InDomain,
                ClusterKind::Shared(..) => CaseTag::Boundary,
                ClusterKind::Gap => CaseTag::Gap,
            };
            assert_eq!(e.case_tag, expected);
            assert_eq!(e.class_label, b.label_oracle(&e.features, e.owner).unwrap());
        }
    }

    #[test]
    fn oracle_rejects_unknown_owner() {
        let b = build_benchmark(&small()).unwrap();
        let x = b.test[0].features.clone();
        assert!(matches!(b.label_oracle(&x, Owner::Domain(9)), Err(Error::Lookup(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small();
        cfg.false_friend_pairs[0].second = 0;
        assert!(matches!(build_benchmark(&cfg), Err(Error::Config { .. })));
        let mut cfg = small();
        cfg.context_informativeness = 1.5;
        assert!(build_benchmark(&cfg).is_err());
        let cfg = BenchmarkConfig {
            private_clusters_per_domain: 0,
            false_friend_pairs: Vec::new(),
            gap_clusters: 0,
            ..small()
        };
        assert!(matches!(build_benchmark(&cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn unreachable_divergence_is_a_generation_error() {
        let cfg = BenchmarkConfig {
            min_divergence: 1.0,
            classes: 2,
            cluster_sigma: 2.0,
            ..small()
        };
        match build_benchmark(&cfg) {
            Err(Error::Generation(msg)) => assert!(msg.contains("pair (")),
            other => panic!("expected generation error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn contrastive_pairs_respect_relations() {
        let b = build_benchmark(&small()).unwrap();
        assert!(make_contrastive_pairs(&b, 0, 1).unwrap().is_empty());
        let pairs = make_contrastive_pairs(&b, 25, 7).unwrap();
        assert_eq!(pairs.len(), 50);
        for p in &pairs {
            let (a, o) = (&b.train[p.anchor], &b.train[p.other]);
            assert_eq!(a.cluster_id, o.cluster_id);
            assert_eq!(a.case_tag, CaseTag::Boundary);
            match p.relation {
                PairRelation::FalseFriend => assert_ne!(a.owner, o.owner),
                PairRelation::SameDomain => {
                    assert_eq!(a.owner, o.owner);
                    assert_ne!(p.anchor, p.other);
                }
            }
        }
        assert_eq!(pairs, make_contrastive_pairs(&b, 25, 7).unwrap());
    }
}
