//! Learned top-k gating with load-balancing, boundary and coverage losses.
//!
//! Two affinity channels are kept apart: the gate network's softmax weights
//! drive expert selection, while unnormalised kernel affinities to each
//! expert's training centroid drive the coverage test against `τ`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::experts::{ood_score, ExpertStats};
use crate::numerics::{
    argmax, cross_entropy_grad, entropy_gradient, entropy_unchecked, mlp_backward, mlp_forward,
    softmax_unchecked, MlpParams,
};
use crate::rng;
use crate::train::{run_sgd_with, SgdConfig};

const MARGIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouterConfig {
    pub hidden: usize,
    /// τ, coverage threshold on raw affinities.
    pub tau: f64,
    pub k: usize,
    pub lambda_lb: f64,
    pub lambda_boundary: f64,
    pub lambda_coverage: f64,
    /// σ_g, kernel width for raw affinities.
    pub kernel_sigma: f64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            tau: 0.5,
            k: 2,
            lambda_lb: 0.01,
            lambda_boundary: 0.1,
            lambda_coverage: 0.1,
            kernel_sigma: 1.0,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self, experts: usize) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config("router.tau", "must lie in (0, 1)"));
        }
        if self.k == 0 || self.k > experts {
            return Err(Error::config("router.k", format!("must lie in 1..={experts}")));
        }
        for (key, v) in [
            ("router.lambda_lb", self.lambda_lb),
            ("router.lambda_boundary", self.lambda_boundary),
            ("router.lambda_coverage", self.lambda_coverage),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(key, "must be a nonnegative number"));
            }
        }
        if !(self.kernel_sigma > 0.0) {
            return Err(Error::config("router.kernel_sigma", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("router.hidden", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    pub gate_net: MlpParams,
    pub config: RouterConfig,
}

impl RouterParams {
    pub fn init(embed_dim: usize, experts: usize, config: RouterConfig, seed: u64) -> Result<Self> {
        config.validate(experts)?;
        let mut rng = rng::stream(seed, "router-init");
        Ok(Self {
            gate_net: MlpParams::init(&[embed_dim, config.hidden, experts], &mut rng)?,
            config,
        })
    }

    pub fn experts(&self) -> usize {
        self.gate_net.output_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    /// OOD distance to every expert's centroid.
    pub distances: Vec<f64>,
    /// `exp(-d²/(2σ²))` per expert.
    pub raw_affinities: Vec<f64>,
    pub gate_logits: Vec<f64>,
    pub gate_weights: Vec<f64>,
    pub selected: Vec<usize>,
    pub selected_weights: Vec<f64>,
    pub routing_entropy: f64,
    /// Relative gap between the two nearest centroids, in [0, 1].
    pub margin: f64,
}

/// Kernel affinities and centroid margin; independent of the gate network.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub distances: Vec<f64>,
    pub raw_affinities: Vec<f64>,
    pub margin: f64,
}

pub fn geometry(embedding: &[f64], stats: &[ExpertStats], sigma: f64) -> Result<Geometry> {
    if stats.len() < 2 {
        return Err(Error::config("router", "gating needs fitted stats for at least two experts"));
    }
    let distances: Vec<f64> = stats
        .iter()
        .map(|s| ood_score(s, embedding))
        .collect::<Result<_>>()?;
    let raw_affinities = distances
        .iter()
        .map(|d| libm::exp(-d * d / (2.0 * sigma * sigma)))
        .collect();
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    let margin = ((sorted[1] - sorted[0]) / sorted[1].max(MARGIN_EPS)).clamp(0.0, 1.0);
    Ok(Geometry {
        distances,
        raw_affinities,
        margin,
    })
}

/// Route one embedded input.
pub fn gate(router: &RouterParams, embedding: &[f64], stats: &[ExpertStats]) -> Result<RoutingDecision> {
    if stats.len() != router.experts() {
        return Err(Error::config(
            "router",
            format!("router has {} outputs but {} expert stats were supplied", router.experts(), stats.len()),
        ));
    }
    let geo = geometry(embedding, stats, router.config.kernel_sigma)?;
    decide(router, embedding, geo, router.config.k)
}

pub(crate) fn decide(router: &RouterParams, embedding: &[f64], geo: Geometry, k: usize) -> Result<RoutingDecision> {
    let (gate_logits, _) = mlp_forward(&router.gate_net, embedding)?;
    let gate_weights = softmax_unchecked(&gate_logits);
    let (selected, selected_weights) = select_top_k(&gate_weights, k)?;
    Ok(RoutingDecision {
        routing_entropy: entropy_unchecked(&gate_weights),
        distances: geo.distances,
        raw_affinities: geo.raw_affinities,
        gate_logits,
        gate_weights,
        selected,
        selected_weights,
        margin: geo.margin,
    })
}

/// The `k` largest weights (ties toward the lower index), renormalised to sum to 1.
pub fn select_top_k(weights: &[f64], k: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if k == 0 || k > weights.len() {
        return Err(Error::Parameter(format!("top-k needs 1 <= k <= {}, got {k}", weights.len())));
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order.truncate(k);
    let total: f64 = order.iter().map(|&i| weights[i]).sum();
    let selected_weights = if total > 0.0 {
        order.iter().map(|&i| weights[i] / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    };
    Ok((order, selected_weights))
}

/// `K · Σ f_i P_i` with `f_i` the top-1 share and `P_i` the mean gate weight.
pub fn load_balance_loss(gate_weights: &[&[f64]], experts: usize) -> Result<f64> {
    if gate_weights.is_empty() {
        return Err(Error::Parameter("load-balance loss needs a non-empty batch".into()));
    }
    let (f, p) = balance_stats(gate_weights, experts);
    Ok(experts as f64 * f.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>())
}

fn balance_stats(gate_weights: &[&[f64]], experts: usize) -> (Vec<f64>, Vec<f64>) {
    let n = gate_weights.len() as f64;
    let mut f = vec![0.0; experts];
    let mut p = vec![0.0; experts];
    for g in gate_weights {
        f[argmax(g)] += 1.0 / n;
        for (pi, gi) in p.iter_mut().zip(g.iter()) {
            *pi += gi / n;
        }
    }
    (f, p)
}

/// Hinge on routing entropy: `max(0, (1 - m)·ln 2 - H(g))`.
pub fn boundary_loss(decision: &RoutingDecision) -> f64 {
    boundary_hinge(decision.margin, decision.routing_entropy)
}

fn boundary_hinge(margin: f64, entropy: f64) -> f64 {
    ((1.0 - margin) * core::f64::consts::LN_2 - entropy).max(0.0)
}

/// `max(0, τ - max_i a_i) · (ln K - H(g))`.
pub fn coverage_loss(decision: &RoutingDecision, tau: f64, experts: usize) -> f64 {
    coverage_term(max_affinity(&decision.raw_affinities), tau, experts, decision.routing_entropy)
}

fn coverage_term(max_aff: f64, tau: f64, experts: usize, entropy: f64) -> f64 {
    let shortfall = (tau - max_aff).max(0.0);
    shortfall * (libm::log(experts as f64) - entropy).max(0.0)
}

pub(crate) fn max_affinity(a: &[f64]) -> f64 {
    a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouterLossTerms {
    pub task_ce: f64,
    pub load_balance: f64,
    pub boundary: f64,
    pub coverage: f64,
    pub total: f64,
}

/// One router training input: a fixed embedding, its kernel geometry, and the
/// owning domain for in-domain samples (boundary and gap samples carry `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct RouterSample {
    pub embedding: Vec<f64>,
    pub geometry: Geometry,
    pub target: Option<usize>,
}

fn batch_terms(router: &RouterParams, samples: &[RouterSample], batch: &[usize], with_grad: bool) -> Result<(RouterLossTerms, Option<MlpParams>)> {
    let cfg = router.config;
    let k = router.experts();
    let mut forwards = Vec::with_capacity(batch.len());
    for &i in batch {
        let (logits, cache) = mlp_forward(&router.gate_net, &samples[i].embedding)?;
        forwards.push((softmax_unchecked(&logits), cache));
    }
    let weights: Vec<&[f64]> = forwards.iter().map(|(g, _)| g.as_slice()).collect();
    let (f, _) = balance_stats(&weights, k);
    let load_balance = load_balance_loss(&weights, k)?;
    let in_domain = batch.iter().filter(|&&i| samples[i].target.is_some()).count();
    let n = batch.len() as f64;

    let mut task_ce = 0.0;
    let mut boundary = 0.0;
    let mut coverage = 0.0;
    let mut grads = if with_grad { Some(router.gate_net.zeros_like()) } else { None };
    for (&i, (g, cache)) in batch.iter().zip(&forwards) {
        let sample = &samples[i];
        let h = entropy_unchecked(g);
        let mut d_logits = vec![0.0; k];
        if let Some(t) = sample.target {
            task_ce -= libm::log(g[t].max(f64::MIN_POSITIVE)) / in_domain as f64;
            for (d, c) in d_logits.iter_mut().zip(cross_entropy_grad(g, t)) {
                *d += c / in_domain as f64;
            }
        }
        if cfg.lambda_lb > 0.0 {
            // d/dz_j of (K/B)·Σ_i f_i g_i  =  (K/B)·g_j (f_j - Σ_i f_i g_i)
            let fg: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
            for (j, d) in d_logits.iter_mut().enumerate() {
                *d += cfg.lambda_lb * (k as f64 / n) * g[j] * (f[j] - fg);
            }
        }
        let b = boundary_hinge(sample.geometry.margin, h);
        boundary += b / n;
        let c = coverage_term(max_affinity(&sample.geometry.raw_affinities), cfg.tau, k, h);
        coverage += c / n;
        let neg_dh: Option<Vec<f64>> = if (cfg.lambda_boundary > 0.0 && b > 0.0) || (cfg.lambda_coverage > 0.0 && c > 0.0) {
            Some(entropy_gradient(g).into_iter().map(|v| -v).collect())
        } else {
            None
        };
        if let Some(neg_dh) = neg_dh {
            if cfg.lambda_boundary > 0.0 && b > 0.0 {
                for (d, v) in d_logits.iter_mut().zip(&neg_dh) {
                    *d += cfg.lambda_boundary * v / n;
                }
            }
            if cfg.lambda_coverage > 0.0 && c > 0.0 {
                let shortfall = (cfg.tau - max_affinity(&sample.geometry.raw_affinities)).max(0.0);
                for (d, v) in d_logits.iter_mut().zip(&neg_dh) {
                    *d += cfg.lambda_coverage * shortfall * v / n;
                }
            }
        }
        if let Some(acc) = grads.as_mut() {
            acc.add_scaled(&mlp_backward(&router.gate_net, cache, &d_logits)?, 1.0)?;
        }
    }
    let total = task_ce + cfg.lambda_lb * load_balance + cfg.lambda_boundary * boundary + cfg.lambda_coverage * coverage;
    Ok((
        RouterLossTerms {
            task_ce,
            load_balance,
            boundary,
            coverage,
            total,
        },
        grads,
    ))
}

/// Loss terms over a full sample set.
pub fn router_loss_terms(router: &RouterParams, samples: &[RouterSample]) -> Result<RouterLossTerms> {
    let all: Vec<usize> = (0..samples.len()).collect();
    Ok(batch_terms(router, samples, &all, false)?.0)
}

/// Gradient of the total router loss over a batch (exposed for gradient checks).
pub fn router_batch_gradient(router: &RouterParams, samples: &[RouterSample], batch: &[usize]) -> Result<(f64, MlpParams)> {
    let (terms, grads) = batch_terms(router, samples, batch, true)?;
    Ok((terms.total, grads.unwrap_or_else(|| router.gate_net.zeros_like())))
}

/// Train the gate network. Returns the trained router and the full-set loss
/// terms before training and after every epoch.
pub fn train_router(router: &RouterParams, samples: &[RouterSample], sgd: &SgdConfig) -> Result<(RouterParams, Vec<RouterLossTerms>)> {
    if !samples.iter().any(|s| s.target.is_some()) {
        return Err(Error::Training("router training needs in-domain samples".into()));
    }
    router.config.validate(router.experts())?;
    let mut trained = router.clone();
    let mut trace = vec![router_loss_terms(router, samples)?];
    let config = router.config;
    let mut params = trained.gate_net.clone();
    run_sgd_with(
        &mut params,
        samples.len(),
        sgd,
        "router-train",
        |p, batch| {
            let view = RouterParams { gate_net: p.clone(), config };
            router_batch_gradient(&view, samples, batch)
        },
        |p, _| {
            let view = RouterParams { gate_net: p.clone(), config };
            trace.push(router_loss_terms(&view, samples)?);
            Ok(())
        },
    )?;
    trained.gate_net = params;
    Ok((trained, trace))
}
