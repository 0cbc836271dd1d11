//! Seeded invariant suite shared by the CLI `selftest` command and the
//! acceptance tests.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::calibration::{ece_from_confidences, finetune_batch};
use crate::detection::{
    jensen_shannon, verdict_kind, DisagreementReport, DisagreementStats, MetaInputMode, Thresholds, VerdictKind,
};
use crate::error::Result;
use crate::experts::{contrastive_batch, ce_batch, stream_mix_matrix, ExpertStats, FeaturePair};
use crate::mhc::{is_doubly_stochastic, mixed_residual_step, sinkhorn_project, SinkhornConfig, SquareMatrix};
use crate::numerics::{argmax, entropy, grad_check, kl_divergence, softmax, GradCheckConfig, Mat64, MlpParams};
use crate::pipeline::ExperimentConfig;
use crate::rng::{self, Rng};
use crate::router::{geometry, router_batch_gradient, RouterParams, RouterSample};
use crate::synth::PairRelation;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

fn random_logits(rng: &mut Rng) -> Vec<f64> {
    let n = rng.random_range(2..=10);
    let scale = rng::uniform(rng, 0.1, 50.0);
    (0..n).map(|_| scale * rng::normal(rng)).collect()
}

/// Softmax, entropy, KL and JSD invariants over `samples` seeded random inputs.
pub fn probability_suite(samples: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng::stream(seed, "selftest-prob");
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut argmax_ok = true;
    let mut entropy_ok = true;
    let mut kl_ok = true;
    let mut jsd_ok = true;
    for _ in 0..samples {
        let z = random_logits(&mut rng);
        let p = softmax(&z)?;
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        if p.iter().any(|&v| v < 0.0) {
            worst_sum = f64::INFINITY;
        }
        let c = rng::uniform(&mut rng, -100.0, 100.0);
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let ps = softmax(&shifted)?;
        worst_shift = p.iter().zip(&ps).fold(worst_shift, |m, (a, b)| m.max((a - b).abs()));
        argmax_ok &= argmax(&p) == argmax(&z);
        let h = entropy(&p)?;
        entropy_ok &= h >= 0.0 && h <= libm::log(p.len() as f64) + 1e-12;
        let z2: Vec<f64> = (0..z.len()).map(|_| 3.0 * rng::normal(&mut rng)).collect();
        let q = softmax(&z2)?;
        let kl = kl_divergence(&p, &q)?.value();
        kl_ok &= kl >= 0.0 && kl_divergence(&p, &p)?.value().abs() < 1e-12;
        let (js_pq, js_qp) = (jensen_shannon(&p, &q)?, jensen_shannon(&q, &p)?);
        jsd_ok &= (js_pq - js_qp).abs() < 1e-12 && (0.0..=core::f64::consts::LN_2).contains(&js_pq);
    }
    Ok(vec![
        Check::new("softmax_on_simplex", worst_sum < 1e-12, format!("max |sum - 1| = {worst_sum:e}")),
        Check::new("softmax_shift_invariance", worst_shift < 1e-12, format!("max deviation = {worst_shift:e}")),
        Check::new("softmax_preserves_argmax", argmax_ok, format!("{samples} inputs")),
        Check::new("entropy_in_range", entropy_ok, "0 <= H <= ln C"),
        Check::new("kl_nonnegative", kl_ok, "KL(p, q) >= 0 and KL(p, p) = 0"),
        Check::new("jsd_symmetric_bounded", jsd_ok, "JSD(p, q) = JSD(q, p) <= ln 2"),
    ])
}

fn positive_matrix(rng: &mut Rng, dim: usize) -> Result<SquareMatrix> {
    let data = (0..dim * dim).map(|_| rng::uniform(rng, 0.01, 10.0)).collect();
    SquareMatrix::new(Mat64::from_vec(dim, dim, data)?)
}

/// Convergence, idempotence, closure and conservation of the Sinkhorn
/// projection for dimensions 1 through `max_dim`.
pub fn sinkhorn_suite(max_dim: usize, per_dim: usize, seed: u64) -> Result<Vec<Check>> {
    let cfg = SinkhornConfig::default();
    let mut rng = rng::stream(seed, "selftest-sinkhorn");
    let mut converged = true;
    let mut worst_dev: f64 = 0.0;
    let mut worst_idem: f64 = 0.0;
    let mut closure = true;
    let mut worst_mean: f64 = 0.0;
    let mut nonexpansive = true;
    for dim in 1..=max_dim {
        for _ in 0..per_dim {
            let a = match sinkhorn_project(&positive_matrix(&mut rng, dim)?, cfg) {
                Ok(m) => m,
                Err(_) => {
                    converged = false;
                    continue;
                }
            };
            let b = sinkhorn_project(&positive_matrix(&mut rng, dim)?, cfg)?;
            worst_dev = worst_dev.max(a.max_marginal_deviation());
            let again = sinkhorn_project(&a, cfg)?;
            for r in 0..dim {
                for c in 0..dim {
                    worst_idem = worst_idem.max((again.get(r, c) - a.get(r, c)).abs());
                }
            }
            closure &= is_doubly_stochastic(&a.matmul(&b)?, 10.0 * cfg.tolerance);
            let width = 5;
            let data = (0..dim * width).map(|_| 4.0 * rng::normal(&mut rng)).collect();
            let features = Mat64::from_vec(dim, width, data)?;
            let mixed = mixed_residual_step(&features, &a)?;
            for c in 0..width {
                let before: f64 = (0..dim).map(|r| features.get(r, c)).sum::<f64>() / dim as f64;
                let after: f64 = (0..dim).map(|r| mixed.get(r, c)).sum::<f64>() / dim as f64;
                worst_mean = worst_mean.max((before - after).abs());
                let max_in = (0..dim).map(|r| features.get(r, c).abs()).fold(0.0, f64::max);
                let max_out = (0..dim).map(|r| mixed.get(r, c).abs()).fold(0.0, f64::max);
                nonexpansive &= max_out <= max_in + 1e-9;
            }
        }
    }
    Ok(vec![
        Check::new("sinkhorn_converges", converged && worst_dev <= cfg.tolerance, format!("max marginal deviation {worst_dev:e}")),
        Check::new("sinkhorn_idempotent", worst_idem <= cfg.tolerance, format!("max entry change {worst_idem:e}")),
        Check::new("sinkhorn_product_closure", closure, "products pass at 10x tolerance"),
        Check::new("residual_mean_conserved", worst_mean <= 1e-9, format!("max column-mean drift {worst_mean:e}")),
        Check::new("residual_norm_nonexpansive", nonexpansive, "column max-norm not increased"),
    ])
}

fn batch(rng: &mut Rng, n: usize, dim: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let xs = (0..n).map(|_| (0..dim).map(|_| rng::normal(rng)).collect()).collect();
    let ys = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (xs, ys)
}

fn grad_entry(name: String, params: &MlpParams, f: impl Fn(&MlpParams) -> Result<(f64, MlpParams)>) -> Result<Check> {
    let r = grad_check(params, f, GradCheckConfig::default())?;
    Ok(Check::new(
        name,
        r.pass,
        format!("max relative error {:e} over {} coordinates", r.max_relative_error, r.coordinates_checked),
    ))
}

/// Finite-difference checks of every network and loss used by the pipeline.
pub fn gradient_suite(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng::stream(seed, "selftest-grad");
    let input = cfg.benchmark.feature_dim();
    let classes = cfg.benchmark.classes;
    let experts = cfg.benchmark.num_domains;
    let idx: Vec<usize> = (0..8).collect();
    let mut checks = Vec::new();

    let (xs, ys) = batch(&mut rng, 8, input, classes);
    let data: Vec<(&[f64], usize)> = xs.iter().map(Vec::as_slice).zip(ys.iter().copied()).collect();
    let expert = MlpParams::init(&[input, cfg.expert.hidden, classes], &mut rng)?;
    checks.push(grad_entry(
        format!("expert {input}-{}-{classes}", cfg.expert.hidden),
        &expert,
        |p| ce_batch(p, &data, &idx),
    )?);
    let streams = cfg.expert.mhc_streams;
    if streams > 0 && cfg.expert.hidden % streams == 0 {
        let mix = stream_mix_matrix(streams, seed, "selftest-mix")?;
        let mixed = expert.clone().with_stream_mix(mix.into_mat())?;
        checks.push(grad_entry(
            format!("expert {input}-{}-{classes} with {streams}-stream mix", cfg.expert.hidden),
            &mixed,
            |p| ce_batch(p, &data, &idx),
        )?);
    }
    let boundary: Vec<&[f64]> = xs.iter().take(4).map(Vec::as_slice).collect();
    let ft_idx: Vec<usize> = (0..data.len() + boundary.len()).collect();
    checks.push(grad_entry("boundary-aware finetune loss".into(), &expert, |p| {
        finetune_batch(p, &data, &boundary, cfg.calibration.lambda_flat.max(0.5), &ft_idx)
    })?);

    let embedder = MlpParams::init(&[input, cfg.embed.hidden, cfg.embed.dim], &mut rng)?;
    let (ys2, _) = batch(&mut rng, 8, input, classes);
    let pairs: Vec<FeaturePair<'_>> = xs
        .iter()
        .zip(&ys2)
        .enumerate()
        .map(|(i, (a, b))| {
            let rel = if i % 2 == 0 { PairRelation::SameDomain } else { PairRelation::FalseFriend };
            (a.as_slice(), b.as_slice(), rel)
        })
        .collect();
    // a large margin keeps every false-friend hinge active
    checks.push(grad_entry(
        format!("embedder {input}-{}-{} contrastive", cfg.embed.hidden, cfg.embed.dim),
        &embedder,
        |p| contrastive_batch(p, &pairs, &idx, 100.0),
    )?);

    let stats: Vec<ExpertStats> = (0..experts)
        .map(|_| ExpertStats {
            centroid: (0..cfg.embed.dim).map(|_| rng::normal(&mut rng)).collect(),
            variance: vec![1.0; cfg.embed.dim],
            sample_count: 1,
        })
        .collect();
    let router = RouterParams::init(cfg.embed.dim, experts, cfg.router, seed)?;
    let samples: Vec<RouterSample> = (0..8)
        .map(|i| {
            let embedding: Vec<f64> = (0..cfg.embed.dim).map(|_| 1.5 * rng::normal(&mut rng)).collect();
            let geometry = geometry(&embedding, &stats, cfg.router.kernel_sigma)?;
            Ok(RouterSample {
                embedding,
                geometry,
                target: (i % 3 != 0).then_some(i % experts),
            })
        })
        .collect::<Result<_>>()?;
    checks.push(grad_entry(
        format!("router {}-{}-{experts} full loss", cfg.embed.dim, cfg.router.hidden),
        &router.gate_net,
        |p| {
            let view = RouterParams { gate_net: p.clone(), config: router.config };
            router_batch_gradient(&view, &samples, &idx)
        },
    )?);

    for mode in MetaInputMode::ALL {
        let dim = mode.input_dim(cfg.embed.dim, experts, classes);
        let (mx, my) = batch(&mut rng, 8, dim, 3);
        let mdata: Vec<(&[f64], usize)> = mx.iter().map(Vec::as_slice).zip(my.iter().copied()).collect();
        let meta = MlpParams::init(&[dim, cfg.meta.hidden, 3], &mut rng)?;
        checks.push(grad_entry(
            format!("meta-expert {} {dim}-{}-3", mode.as_str(), cfg.meta.hidden),
            &meta,
            |p| ce_batch(p, &mdata, &idx),
        )?);
    }
    Ok(checks)
}

/// Exhaustive verdict-table check over a grid of signal values.
pub fn verdict_table_suite() -> Result<Vec<Check>> {
    let th = Thresholds { theta_ood: 2.0, theta_jsd: 0.2 };
    let grid = [0.0, 0.5, 1.9, 2.0, 2.1, 5.0];
    let jsds = [None, Some(0.0), Some(0.1), Some(0.2), Some(0.3), Some(core::f64::consts::LN_2)];
    let mut ok = true;
    let mut cases = 0usize;
    for &a in &grid {
        for &b in &grid {
            for &j in &jsds {
                for comparable in [false, true] {
                    let report = DisagreementReport {
                        activated: vec![0, 1],
                        per_expert_outputs: Vec::new(),
                        stats: j.map(|v| DisagreementStats {
                            mean_pairwise_jsd: v,
                            predictive_variance: 0.0,
                            weight_ratio: if comparable { 1.0 } else { 0.0 },
                            comparable_confidence: comparable,
                        }),
                    };
                    let (kind, _) = verdict_kind(&[a, b, 9.0], &report, th)?;
                    let expected = if a.min(b) > th.theta_ood {
                        VerdictKind::CoverageGap
                    } else if comparable && j.is_some_and(|v| v > th.theta_jsd) {
                        VerdictKind::BoundaryViolation
                    } else {
                        VerdictKind::InCoverage
                    };
                    ok &= kind == expected;
                    cases += 1;
                }
            }
        }
    }
    Ok(vec![Check::new("verdict_table_total", ok, format!("{cases} grid cases"))])
}

/// ECE range and permutation invariance.
pub fn ece_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng::stream(seed, "selftest-ece");
    let mut ok = true;
    for _ in 0..50 {
        let n = rng.random_range(1..200);
        let conf: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let correct: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let a = ece_from_confidences(&conf, &correct, 15)?.ece;
        let perm = rng::permutation(&mut rng, n);
        let pc: Vec<f64> = perm.iter().map(|&i| conf[i]).collect();
        let pk: Vec<bool> = perm.iter().map(|&i| correct[i]).collect();
        let b = ece_from_confidences(&pc, &pk, 15)?.ece;
        ok &= (0.0..=1.0).contains(&a) && (a - b).abs() < 1e-12;
    }
    Ok(vec![Check::new("ece_range_and_permutation", ok, "50 random sets")])
}

/// The full suite: 10,000 probability inputs, Sinkhorn up to 16×16, and
/// gradient checks for the given configuration's networks.
pub fn run_selftest(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let mut checks = probability_suite(10_000, cfg.seed)?;
    checks.extend(sinkhorn_suite(16, 4, cfg.seed)?);
    checks.extend(gradient_suite(cfg, cfg.seed)?);
    checks.extend(verdict_table_suite()?);
    checks.extend(ece_suite(cfg.seed)?);
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_selftest_passes() {
        let checks = run_selftest(&ExperimentConfig::default()).unwrap();
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert!(checks.len() > 15);
    }
}
