//! Temperature scaling (scalar and entropy-adaptive), the entropy confidence
//! penalty, boundary-aware fine-tuning and expected calibration error.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::experts::ExpertModel;
use crate::numerics::{
    argmax, cross_entropy_grad, ensure_finite, entropy_gradient, entropy_unchecked, mlp_backward,
    mlp_forward, softmax, softmax_unchecked, MlpParams,
};
use crate::train::{run_sgd, SgdConfig};

const LN_T_MIN: f64 = -2.995_732_273_553_991; // ln 0.05
const LN_T_MAX: f64 = 2.995_732_273_553_991; // ln 20
const GOLDEN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureParams {
    pub t: f64,
}

impl Default for TemperatureParams {
    fn default() -> Self {
        Self { t: 1.0 }
    }
}

/// Per-prediction temperature `T(x) = exp(a·H̃(x) + b)`, where `H̃` is the
/// normalised entropy of the uncalibrated prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveTempParams {
    pub a: f64,
    pub b: f64,
}

impl AdaptiveTempParams {
    pub fn temperature(&self, logits: &[f64]) -> f64 {
        let classes = logits.len();
        let h = entropy_unchecked(&softmax_unchecked(logits));
        let normalised = if classes > 1 { h / libm::log(classes as f64) } else { 0.0 };
        libm::exp(self.a * normalised + self.b)
    }

    pub fn apply(&self, logits: &[f64]) -> Result<Vec<f64>> {
        apply_temperature(logits, self.temperature(logits))
    }
}

/// `softmax(logits / T)`.
pub fn apply_temperature(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("temperature must be positive, got {t}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
    softmax(&scaled)
}

fn nll_at(logits: &[Vec<f64>], labels: &[usize], temperature: impl Fn(&[f64]) -> f64) -> f64 {
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        let t = temperature(z);
        let scaled: Vec<f64> = z.iter().map(|v| v / t).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(scaled.iter().map(|v| libm::exp(v - max)).sum::<f64>());
        total += lse - scaled[y];
    }
    total / logits.len() as f64
}

fn check_fit_input(logits: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if logits.len() != labels.len() {
        return Err(Error::Dimension {
            context: "calibration labels",
            expected: logits.len(),
            got: labels.len(),
        });
    }
    if logits.len() < 2 {
        return Err(Error::Calibration("need at least two validation samples".into()));
    }
    let classes = logits[0].len();
    for (z, &y) in logits.iter().zip(labels) {
        crate::numerics::ensure_len("calibration logits", classes, z.len())?;
        ensure_finite(z, "calibration logits")?;
        if y >= classes {
            return Err(Error::Calibration(format!("label {y} outside {classes} classes")));
        }
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::Calibration("validation set contains a single class".into()));
    }
    Ok(())
}

fn golden_section(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

/// Scalar temperature minimising validation NLL, by golden-section search on
/// `ln T` over `[ln 0.05, ln 20]`.
pub fn fit_temperature(logits: &[Vec<f64>], labels: &[usize]) -> Result<TemperatureParams> {
    check_fit_input(logits, labels)?;
    let ln_t = golden_section(LN_T_MIN, LN_T_MAX, GOLDEN_TOL, |u| {
        let t = libm::exp(u);
        nll_at(logits, labels, |_| t)
    });
    Ok(TemperatureParams { t: libm::exp(ln_t) })
}

pub fn temperature_nll(logits: &[Vec<f64>], labels: &[usize], t: f64) -> f64 {
    nll_at(logits, labels, |_| t)
}

pub fn adaptive_nll(logits: &[Vec<f64>], labels: &[usize], params: AdaptiveTempParams) -> f64 {
    nll_at(logits, labels, |z| params.temperature(z))
}

/// Fit `(a, b)` on a 61×61 grid, then refine by pattern search. The scalar
/// optimum `(0, ln T*)` seeds the refinement too, so the result never does
/// worse than scalar scaling on the validation set.
pub fn fit_adaptive_temperature(logits: &[Vec<f64>], labels: &[usize]) -> Result<AdaptiveTempParams> {
    check_fit_input(logits, labels)?;
    const GRID: usize = 61;
    let a_step = 6.0 / (GRID - 1) as f64;
    let b_step = (LN_T_MAX - LN_T_MIN) / (GRID - 1) as f64;
    let eval = |a: f64, b: f64| adaptive_nll(logits, labels, AdaptiveTempParams { a, b });
    let mut best = (0.0, 0.0, f64::INFINITY);
    for i in 0..GRID {
        let a = -3.0 + a_step * i as f64;
        for j in 0..GRID {
            let b = LN_T_MIN + b_step * j as f64;
            let v = eval(a, b);
            if v < best.2 {
                best = (a, b, v);
            }
        }
    }
    let scalar = fit_temperature(logits, labels)?;
    let scalar_b = libm::log(scalar.t);
    let scalar_v = eval(0.0, scalar_b);
    if scalar_v <= best.2 {
        best = (0.0, scalar_b, scalar_v);
    }
    let (mut a, mut b, mut v) = best;
    let (mut da, mut db) = (a_step, b_step);
    while da > 1e-7 || db > 1e-7 {
        let mut improved = false;
        for (ca, cb) in [(a + da, b), (a - da, b), (a, b + db), (a, b - db)] {
            let cv = eval(ca, cb);
            if cv < v {
                a = ca;
                b = cb;
                v = cv;
                improved = true;
            }
        }
        if !improved {
            da *= 0.5;
            db *= 0.5;
        }
    }
    Ok(AdaptiveTempParams { a, b })
}

/// `β·(ln C - H(p))`: zero at uniform, largest at one-hot.
pub fn confidence_penalty(p: &[f64], beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::Parameter(format!("penalty weight must be nonnegative, got {beta}")));
    }
    let h = crate::numerics::entropy(p)?;
    Ok(beta * (libm::log(p.len() as f64) - h).max(0.0))
}

/// Mean of `CE(in-domain) + λ_flat · (ln C - H(p))` over a batch whose indices
/// address `in_domain` first and `boundary` after it.
pub fn finetune_batch(
    params: &MlpParams,
    in_domain: &[(&[f64], usize)],
    boundary: &[&[f64]],
    lambda_flat: f64,
    batch: &[usize],
) -> Result<(f64, MlpParams)> {
    let n_in = batch.iter().filter(|&&i| i < in_domain.len()).count();
    let n_b = batch.len() - n_in;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for &i in batch {
        if i < in_domain.len() {
            let (x, y) = in_domain[i];
            let (logits, cache) = mlp_forward(params, x)?;
            let p = softmax_unchecked(&logits);
            loss -= libm::log(p[y].max(f64::MIN_POSITIVE)) / n_in as f64;
            let g: Vec<f64> = cross_entropy_grad(&p, y).into_iter().map(|v| v / n_in as f64).collect();
            grads.add_scaled(&mlp_backward(params, &cache, &g)?, 1.0)?;
        } else if lambda_flat > 0.0 {
            let x = boundary[i - in_domain.len()];
            let (logits, cache) = mlp_forward(params, x)?;
            let p = softmax_unchecked(&logits);
            let deficit = libm::log(p.len() as f64) - entropy_unchecked(&p);
            loss += lambda_flat * deficit / n_b as f64;
            let g: Vec<f64> = entropy_gradient(&p)
                .into_iter()
                .map(|v| -lambda_flat * v / n_b as f64)
                .collect();
            grads.add_scaled(&mlp_backward(params, &cache, &g)?, 1.0)?;
        }
    }
    Ok((loss, grads))
}

/// Fine-tune an expert to stay accurate in-domain while flattening its
/// predictions on boundary inputs.
pub fn boundary_aware_finetune(
    expert: &ExpertModel,
    in_domain: &[(&[f64], usize)],
    boundary: &[&[f64]],
    lambda_flat: f64,
    sgd: &SgdConfig,
) -> Result<ExpertModel> {
    if in_domain.is_empty() {
        return Err(Error::Training("boundary-aware fine-tuning needs in-domain samples".into()));
    }
    if boundary.is_empty() {
        return Err(Error::Training("boundary-aware fine-tuning needs boundary samples".into()));
    }
    if !(lambda_flat >= 0.0) {
        return Err(Error::Parameter("lambda_flat must be nonnegative".into()));
    }
    let mut params = expert.params.clone();
    run_sgd(
        &mut params,
        in_domain.len() + boundary.len(),
        sgd,
        &format!("finetune-{}", expert.domain),
        |p, batch| finetune_batch(p, in_domain, boundary, lambda_flat, batch),
    )?;
    Ok(ExpertModel {
        domain: expert.domain,
        params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub ece: f64,
    pub bin_count: usize,
    pub bins: Vec<ReliabilityBin>,
}

pub const DEFAULT_ECE_BINS: usize = 15;

/// Equal-width ECE from per-prediction confidence and correctness.
pub fn ece_from_confidences(confidences: &[f64], correct: &[bool], bin_count: usize) -> Result<CalibrationReport> {
    if confidences.is_empty() {
        return Err(Error::Parameter("ECE needs at least one prediction".into()));
    }
    if bin_count == 0 {
        return Err(Error::Parameter("ECE needs at least one bin".into()));
    }
    crate::numerics::ensure_len("ECE correctness", confidences.len(), correct.len())?;
    let mut conf_sum = vec![0.0; bin_count];
    let mut hits = vec![0usize; bin_count];
    let mut counts = vec![0usize; bin_count];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Domain(format!("confidence {c} outside [0, 1]")));
        }
        let b = ((c * bin_count as f64) as usize).min(bin_count - 1);
        conf_sum[b] += c;
        counts[b] += 1;
        if ok {
            hits[b] += 1;
        }
    }
    let n = confidences.len() as f64;
    let mut ece = 0.0;
    let bins = (0..bin_count)
        .map(|b| {
            let count = counts[b];
            let (mean_confidence, accuracy) = if count == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum[b] / count as f64, hits[b] as f64 / count as f64)
            };
            ece += count as f64 / n * (accuracy - mean_confidence).abs();
            ReliabilityBin {
                lower: b as f64 / bin_count as f64,
                upper: (b + 1) as f64 / bin_count as f64,
                mean_confidence,
                accuracy,
                count,
            }
        })
        .collect();
    Ok(CalibrationReport {
        ece: ece.clamp(0.0, 1.0),
        bin_count,
        bins,
    })
}

/// ECE of class distributions against labels.
pub fn expected_calibration_error(predictions: &[Vec<f64>], labels: &[usize], bin_count: usize) -> Result<CalibrationReport> {
    crate::numerics::ensure_len("ECE labels", predictions.len(), labels.len())?;
    let confidences: Vec<f64> = predictions
        .iter()
        .map(|p| p.iter().copied().fold(0.0, f64::max))
        .collect();
    let correct: Vec<bool> = predictions.iter().zip(labels).map(|(p, &y)| argmax(p) == y).collect();
    ece_from_confidences(&confidences, &correct, bin_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, GradCheckConfig};
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn apply_temperature_examples() {
        let z = [1.2, -0.4, 0.3];
        assert_eq!(apply_temperature(&z, 1.0).unwrap(), softmax(&z).unwrap());
        let hot = apply_temperature(&z, 1e6).unwrap();
        assert!(hot.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-4));
        for t in [0.01, 0.5, 3.0, 100.0] {
            assert_eq!(argmax(&apply_temperature(&z, t).unwrap()), 0);
        }
        assert!(apply_temperature(&z, 0.0).is_err());
        assert!(apply_temperature(&z, -1.0).is_err());
    }

    /// Labels drawn from softmax(z): the data-generating temperature is 1.
    fn calibrated_set(n: usize, scale: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rng::stream(17, "calibrated-set");
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let z: Vec<f64> = (0..3).map(|_| 2.0 * rng::normal(&mut rng)).collect();
            let p = softmax(&z).unwrap();
            let u: f64 = rng.random();
            let y = if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else { 2 };
            logits.push(z.iter().map(|v| v * scale).collect());
            labels.push(y);
        }
        (logits, labels)
    }

    #[test]
    fn temperature_recovers_calibrated_optimum() {
        let (logits, labels) = calibrated_set(4000, 1.0);
        let fitted = fit_temperature(&logits, &labels).unwrap();
        // oracle: dense scan of the NLL curve
        let scan_best = (0..=4000)
            .map(|i| 0.5 + i as f64 * 0.00025)
            .map(|t| (t, temperature_nll(&logits, &labels, t)))
            .fold((1.0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        assert!((fitted.t - scan_best.0).abs() < 1e-3, "{} vs {}", fitted.t, scan_best.0);
        assert!((fitted.t - 1.0).abs() < 0.1, "{}", fitted.t);
    }

    #[test]
    fn temperature_scales_with_logits() {
        let (logits, labels) = calibrated_set(1500, 1.0);
        let base = fit_temperature(&logits, &labels).unwrap().t;
        let scaled: Vec<Vec<f64>> = logits.iter().map(|z| z.iter().map(|v| v * 2.5).collect()).collect();
        let t = fit_temperature(&scaled, &labels).unwrap().t;
        assert!((t / base - 2.5).abs() < 1e-4, "{t} vs {base}");
        assert!(t > 0.0);
    }

    #[test]
    fn single_class_validation_is_rejected() {
        let logits = vec![vec![1.0, 0.0]; 4];
        assert!(matches!(fit_temperature(&logits, &[0; 4]), Err(Error::Calibration(_))));
        assert!(matches!(fit_adaptive_temperature(&logits, &[1; 4]), Err(Error::Calibration(_))));
    }

    #[test]
    fn adaptive_reduces_to_scalar_and_never_loses() {
        let (logits, labels) = calibrated_set(600, 1.7);
        let z = &logits[0];
        let scalar = AdaptiveTempParams { a: 0.0, b: libm::log(1.7) };
        assert_eq!(scalar.apply(z).unwrap(), apply_temperature(z, libm::exp(libm::log(1.7))).unwrap());
        let t = fit_temperature(&logits, &labels).unwrap();
        let ad = fit_adaptive_temperature(&logits, &labels).unwrap();
        assert!(adaptive_nll(&logits, &labels, ad) <= temperature_nll(&logits, &labels, t.t));
        assert_eq!(ad, fit_adaptive_temperature(&logits, &labels).unwrap());
    }

    #[test]
    fn confidence_penalty_examples() {
        assert!(confidence_penalty(&[0.25; 4], 1.0).unwrap().abs() < 1e-15);
        let v = confidence_penalty(&[1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!((v - libm::log(4.0)).abs() < 1e-15);
        assert_eq!(confidence_penalty(&[0.7, 0.3], 0.0).unwrap(), 0.0);
        assert!(confidence_penalty(&[0.7, 0.3], -0.1).is_err());
    }

    #[test]
    fn ece_examples() {
        let r = ece_from_confidences(&[1.0; 4], &[true; 4], 15).unwrap();
        assert_eq!(r.ece, 0.0);
        let r = ece_from_confidences(&[1.0; 4], &[true, false, true, false], 15).unwrap();
        assert!((r.ece - 0.5).abs() < 1e-15);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 4);
        // per-bin confidence equals accuracy by construction
        let conf = [0.5, 0.5, 0.75, 0.75, 0.75, 0.75, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9];
        let correct = [
            true, false, true, true, true, false, true, true, true, true, true, true, true, true, true, false,
        ];
        let r = ece_from_confidences(&conf, &correct, 15).unwrap();
        assert!(r.ece < 1e-12, "{}", r.ece);
        assert!(ece_from_confidences(&[], &[], 15).is_err());
    }

    #[test]
    fn finetune_gradient_and_zero_lambda_reduction() {
        let mut rng = rng::stream(2, "ft");
        let params = MlpParams::init(&[3, 6, 3], &mut rng).unwrap();
        let xs = [[0.3, -0.2, 0.9], [-0.5, 0.4, 0.1], [0.8, 0.8, -0.3]];
        let in_domain: Vec<(&[f64], usize)> = vec![(&xs[0], 1), (&xs[1], 2)];
        let boundary: Vec<&[f64]> = vec![&xs[2]];
        let batch = [0, 1, 2];
        let r = grad_check(
            &params,
            |p| finetune_batch(p, &in_domain, &boundary, 0.7, &batch),
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
        let (l0, g0) = finetune_batch(&params, &in_domain, &boundary, 0.0, &batch).unwrap();
        let (lc, gc) = crate::experts::ce_batch(&params, &in_domain, &[0, 1]).unwrap();
        assert!((l0 - lc).abs() < 1e-14);
        let mut d = g0.clone();
        d.add_scaled(&gc, -1.0).unwrap();
        assert!(d.max_abs() < 1e-14);
    }
}
