//! Per-domain specialists, the shared embedding network, training-distribution
//! statistics and OOD scoring.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mhc::{sinkhorn_project, SinkhornConfig, SquareMatrix};
use crate::numerics::{
    argmax, cross_entropy_grad, ensure_len, mlp_backward, mlp_forward, softmax_unchecked, Mat64,
    MlpParams,
};
use crate::rng;
use crate::synth::{LabeledExample, Owner, PairRelation};
use crate::train::{run_sgd, SgdConfig};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertModel {
    pub domain: usize,
    pub params: MlpParams,
}

/// Embedding network shared by all experts.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub params: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertStats {
    pub centroid: Vec<f64>,
    pub variance: Vec<f64>,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertArch {
    pub hidden: usize,
    /// Residual stream count for the doubly stochastic hidden mix; `None` disables it.
    pub mix_streams: Option<usize>,
}

impl Default for ExpertArch {
    fn default() -> Self {
        Self {
            hidden: 32,
            mix_streams: None,
        }
    }
}

/// Seeded strictly positive matrix projected onto the doubly stochastic set,
/// biased toward the identity.
pub fn stream_mix_matrix(streams: usize, seed: u64, label: &str) -> Result<SquareMatrix> {
    let mut rng = rng::stream(seed, label);
    let mut m = Mat64::zeros(streams, streams);
    for r in 0..streams {
        for c in 0..streams {
            let diag = if r == c { streams as f64 } else { 0.0 };
            m.set(r, c, diag + rng::uniform(&mut rng, 0.1, 1.0));
        }
    }
    sinkhorn_project(&SquareMatrix::new(m)?, SinkhornConfig::default())
}

impl ExpertModel {
    pub fn init(domain: usize, input_dim: usize, classes: usize, arch: ExpertArch, seed: u64) -> Result<Self> {
        let label = format!("expert-init-{domain}");
        let mut rng = rng::stream(seed, &label);
        let mut params = MlpParams::init(&[input_dim, arch.hidden, classes], &mut rng)?;
        if let Some(streams) = arch.mix_streams {
            let mix = stream_mix_matrix(streams, seed, &format!("expert-mix-{domain}"))?;
            params = params.with_stream_mix(mix.into_mat())?;
        }
        Ok(Self { domain, params })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(mlp_forward(&self.params, x)?.0)
    }

    pub fn classes(&self) -> usize {
        self.params.output_dim()
    }
}

impl Embedder {
    pub fn init(input_dim: usize, hidden: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, "embedder-init");
        Ok(Self {
            params: MlpParams::init(&[input_dim, hidden, dim], &mut rng)?,
        })
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(mlp_forward(&self.params, x)?.0)
    }

    pub fn dim(&self) -> usize {
        self.params.output_dim()
    }
}

/// Softmax class distribution of one expert.
pub fn expert_predict(model: &ExpertModel, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax_unchecked(&model.logits(x)?))
}

pub(crate) fn mean_ce_and_accuracy(params: &MlpParams, data: &[(&[f64], usize)]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for &(x, y) in data {
        let (logits, _) = mlp_forward(params, x)?;
        let p = softmax_unchecked(&logits);
        loss -= libm::log(p[y].max(f64::MIN_POSITIVE));
        if argmax(&p) == y {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mean cross-entropy and gradient over a batch.
pub(crate) fn ce_batch(params: &MlpParams, data: &[(&[f64], usize)], batch: &[usize]) -> Result<(f64, MlpParams)> {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for &i in batch {
        let (x, y) = data[i];
        let (logits, cache) = mlp_forward(params, x)?;
        let p = softmax_unchecked(&logits);
        loss -= libm::log(p[y].max(f64::MIN_POSITIVE));
        grads.add_scaled(&mlp_backward(params, &cache, &cross_entropy_grad(&p, y))?, 1.0)?;
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((loss * scale, grads))
}

fn check_single_domain(domain: usize, data: &[&LabeledExample]) -> Result<()> {
    if let Some(e) = data.iter().find(|e| e.owner != Owner::Domain(domain)) {
        return Err(Error::Training(format!(
            "expert {domain} dataset contains a sample owned by {:?}",
            e.owner
        )));
    }
    Ok(())
}

/// Cross-entropy training of one specialist on its own domain split.
pub fn train_expert(
    domain: usize,
    train: &[&LabeledExample],
    val: &[&LabeledExample],
    classes: usize,
    arch: ExpertArch,
    sgd: &SgdConfig,
) -> Result<(ExpertModel, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Training(format!("expert {domain} has an empty training set")));
    }
    check_single_domain(domain, train)?;
    check_single_domain(domain, val)?;
    let input_dim = train[0].features.len();
    let mut model = ExpertModel::init(domain, input_dim, classes, arch, sgd.seed)?;
    let data: Vec<(&[f64], usize)> = train.iter().map(|e| (e.features.as_slice(), e.class_label)).collect();
    let val_data: Vec<(&[f64], usize)> = val.iter().map(|e| (e.features.as_slice(), e.class_label)).collect();
    let (initial_loss, _) = mean_ce_and_accuracy(&model.params, &data)?;
    run_sgd(&mut model.params, data.len(), sgd, &format!("expert-train-{domain}"), |p, batch| {
        ce_batch(p, &data, batch)
    })?;
    let (final_loss, train_accuracy) = mean_ce_and_accuracy(&model.params, &data)?;
    let (_, val_accuracy) = mean_ce_and_accuracy(&model.params, &val_data)?;
    Ok((
        model,
        TrainReport {
            epochs_run: sgd.epochs,
            initial_loss,
            final_loss,
            train_accuracy,
            val_accuracy,
        },
    ))
}

/// Centroid and floored per-dimension variance of the embeddings of a dataset.
pub fn fit_expert_stats<'a>(embedder: &Embedder, data: impl IntoIterator<Item = &'a [f64]>) -> Result<ExpertStats> {
    let embeddings: Vec<Vec<f64>> = data
        .into_iter()
        .map(|x| embedder.embed(x))
        .collect::<Result<_>>()?;
    stats_from_embeddings(&embeddings)
}

pub fn stats_from_embeddings(embeddings: &[Vec<f64>]) -> Result<ExpertStats> {
    let Some(first) = embeddings.first() else {
        return Err(Error::Stats("cannot fit statistics on an empty dataset".into()));
    };
    let dim = first.len();
    let n = embeddings.len() as f64;
    let mut centroid = vec![0.0; dim];
    for e in embeddings {
        ensure_len("embedding", dim, e.len())?;
        for (c, v) in centroid.iter_mut().zip(e) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let mut variance = vec![0.0; dim];
    for e in embeddings {
        for ((s, v), c) in variance.iter_mut().zip(e).zip(&centroid) {
            *s += (v - c) * (v - c);
        }
    }
    for s in &mut variance {
        *s = (*s / n).max(VARIANCE_FLOOR);
    }
    Ok(ExpertStats {
        centroid,
        variance,
        sample_count: embeddings.len(),
    })
}

/// Diagonal Mahalanobis distance from the expert's training centroid.
pub fn ood_score(stats: &ExpertStats, embedding: &[f64]) -> Result<f64> {
    ensure_len("ood embedding", stats.centroid.len(), embedding.len())?;
    let d2: f64 = embedding
        .iter()
        .zip(&stats.centroid)
        .zip(&stats.variance)
        .map(|((e, c), v)| (e - c) * (e - c) / v)
        .sum();
    Ok(libm::sqrt(d2))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Margin pair loss: `d²` for same-domain pairs, `max(0, m - d)²` for false friends.
pub fn pair_loss(a: &[f64], b: &[f64], relation: PairRelation, margin: f64) -> f64 {
    let d = euclid(a, b);
    match relation {
        PairRelation::SameDomain => d * d,
        PairRelation::FalseFriend => {
            let gap = (margin - d).max(0.0);
            gap * gap
        }
    }
}

/// Gradient of [`pair_loss`] with respect to `a` (the gradient for `b` is its negation).
fn pair_loss_grad(a: &[f64], b: &[f64], relation: PairRelation, margin: f64) -> Vec<f64> {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    match relation {
        PairRelation::SameDomain => diff.iter().map(|v| 2.0 * v).collect(),
        PairRelation::FalseFriend => {
            let d = euclid(a, b);
            if d >= margin || d == 0.0 {
                vec![0.0; diff.len()]
            } else {
                let coef = -2.0 * (margin - d) / d;
                diff.iter().map(|v| coef * v).collect()
            }
        }
    }
}

/// Feature pair with its relation.
pub type FeaturePair<'a> = (&'a [f64], &'a [f64], PairRelation);

/// Mean pair loss and embedder gradient over a batch of pairs.
pub fn contrastive_batch(
    embedder: &MlpParams,
    pairs: &[FeaturePair<'_>],
    batch: &[usize],
    margin: f64,
) -> Result<(f64, MlpParams)> {
    let mut grads = embedder.zeros_like();
    let mut loss = 0.0;
    for &i in batch {
        let (xa, xb, rel) = pairs[i];
        let (ea, ca) = mlp_forward(embedder, xa)?;
        let (eb, cb) = mlp_forward(embedder, xb)?;
        loss += pair_loss(&ea, &eb, rel, margin);
        let ga = pair_loss_grad(&ea, &eb, rel, margin);
        if ga.iter().all(|&v| v == 0.0) {
            continue;
        }
        let gb: Vec<f64> = ga.iter().map(|v| -v).collect();
        grads.add_scaled(&mlp_backward(embedder, &ca, &ga)?, 1.0)?;
        grads.add_scaled(&mlp_backward(embedder, &cb, &gb)?, 1.0)?;
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    grads.scale(scale);
    Ok((loss * scale, grads))
}

/// Margin-contrastive training of the shared embedder. Returns the updated
/// embedder and the per-epoch mean pair loss.
pub fn contrastive_embed_train(
    embedder: &Embedder,
    pairs: &[FeaturePair<'_>],
    margin: f64,
    sgd: &SgdConfig,
) -> Result<(Embedder, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::Training("contrastive training needs at least one pair".into()));
    }
    for relation in [PairRelation::SameDomain, PairRelation::FalseFriend] {
        if !pairs.iter().any(|p| p.2 == relation) {
            return Err(Error::Training(format!("no {relation:?} pairs supplied")));
        }
    }
    if !(margin > 0.0) {
        return Err(Error::Parameter("contrastive margin must be positive".into()));
    }
    let mut params = embedder.params.clone();
    let trace = run_sgd(&mut params, pairs.len(), sgd, "contrastive", |p, batch| {
        contrastive_batch(p, pairs, batch, margin)
    })?;
    Ok((Embedder { params }, trace))
}
