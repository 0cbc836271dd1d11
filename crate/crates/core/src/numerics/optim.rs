use alloc::vec::Vec;

use rand::Rng as _;

use super::MlpParams;
use crate::error::{Error, Result};

/// Plain SGD state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::Parameter(alloc::format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Self {
            learning_rate,
            step_count: 0,
        })
    }
}

/// `params -= lr · grads`
pub fn sgd_step(params: &mut MlpParams, grads: &MlpParams, state: &mut OptimizerState) -> Result<()> {
    params.add_scaled(grads, -state.learning_rate)?;
    state.step_count += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Networks with more coordinates than this are checked on a seeded sample.
    pub coordinate_cap: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            coordinate_cap: 4096,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    pub pass: bool,
}

/// Compare an analytic gradient against central finite differences.
///
/// `loss_and_grad` must return the loss and its gradient at the given
/// parameters; only the loss is used at the perturbed points. Relative error
/// per coordinate is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(params: &MlpParams, loss_and_grad: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&MlpParams) -> Result<(f64, MlpParams)>,
{
    let (_, analytic) = loss_and_grad(params)?;
    if !analytic.same_shape(params) {
        return Err(Error::Dimension {
            context: "gradient shape",
            expected: params.param_count(),
            got: analytic.param_count(),
        });
    }
    let n = params.param_count();
    let coords: Vec<usize> = if n <= cfg.coordinate_cap {
        (0..n).collect()
    } else {
        let mut rng = crate::rng::stream(cfg.seed, "grad-check");
        (0..cfg.coordinate_cap).map(|_| rng.random_range(0..n)).collect()
    };
    let mut probe = params.clone();
    let mut max_rel: f64 = 0.0;
    for &i in &coords {
        let original = probe.coord(i);
        *probe.coord_mut(i) = original + cfg.epsilon;
        let (plus, _) = loss_and_grad(&probe)?;
        *probe.coord_mut(i) = original - cfg.epsilon;
        let (minus, _) = loss_and_grad(&probe)?;
        *probe.coord_mut(i) = original;
        let numeric = (plus - minus) / (2.0 * cfg.epsilon);
        let a = analytic.coord(i);
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        let rel = (a - numeric).abs() / denom;
        if !rel.is_finite() {
            max_rel = f64::INFINITY;
        } else {
            max_rel = max_rel.max(rel);
        }
    }
    Ok(GradCheckReport {
        max_relative_error: max_rel,
        coordinates_checked: coords.len(),
        pass: max_rel < cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cross_entropy_grad, mlp_backward, mlp_forward, softmax, Layer, Mat64};
    use alloc::vec;

    fn single(value: f64) -> MlpParams {
        MlpParams::new(vec![Layer {
            weight: Mat64::from_vec(1, 1, vec![value]).unwrap(),
            bias: vec![0.0],
        }])
        .unwrap()
    }

    #[test]
    fn sgd_exact_arithmetic() {
        let mut p = single(1.0);
        let g = single(0.5);
        let mut st = OptimizerState::new(0.1).unwrap();
        sgd_step(&mut p, &g, &mut st).unwrap();
        assert!((p.layers[0].weight.get(0, 0) - 0.95).abs() < 1e-15);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn sgd_tiny_rate_is_identity() {
        let mut p = single(1.0);
        let mut st = OptimizerState::new(1e-300).unwrap();
        sgd_step(&mut p, &single(0.5), &mut st).unwrap();
        assert_eq!(p.layers[0].weight.get(0, 0), 1.0);
    }

    #[test]
    fn two_steps_equal_one_double_step() {
        let mut a = single(0.3);
        let mut b = single(0.3);
        let g = single(0.25);
        let mut sa = OptimizerState::new(0.125).unwrap();
        let mut sb = OptimizerState::new(0.25).unwrap();
        sgd_step(&mut a, &g, &mut sa).unwrap();
        sgd_step(&mut a, &g, &mut sa).unwrap();
        sgd_step(&mut b, &g, &mut sb).unwrap();
        assert!((a.layers[0].weight.get(0, 0) - b.layers[0].weight.get(0, 0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_rate() {
        assert!(OptimizerState::new(0.0).is_err());
        assert!(OptimizerState::new(-1.0).is_err());
    }

    #[test]
    fn quadratic_loss_on_linear_model_is_exact() {
        let mut rng = crate::rng::stream(3, "lin");
        let p = MlpParams::init(&[3, 2], &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0];
        let target = [0.2, -0.3];
        let f = |q: &MlpParams| {
            let (out, cache) = mlp_forward(q, &x)?;
            let d: Vec<f64> = out.iter().zip(&target).map(|(o, t)| o - t).collect();
            let loss = 0.5 * d.iter().map(|v| v * v).sum::<f64>();
            Ok((loss, mlp_backward(q, &cache, &d)?))
        };
        let r = grad_check(&p, f, GradCheckConfig::default()).unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
    }

    #[test]
    fn cross_entropy_net_passes_and_corruption_fails() {
        let mut rng = crate::rng::stream(5, "ce");
        let p = MlpParams::init(&[4, 6, 3], &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1, 0.2];
        let f = |q: &MlpParams| {
            let (out, cache) = mlp_forward(q, &x)?;
            let probs = softmax(&out)?;
            Ok((-libm::log(probs[1]), mlp_backward(q, &cache, &cross_entropy_grad(&probs, 1))?))
        };
        let r = grad_check(&p, f, GradCheckConfig::default()).unwrap();
        assert!(r.pass, "{r:?}");

        let corrupted = |q: &MlpParams| {
            let (loss, mut g) = f(q)?;
            *g.coord_mut(2) *= 2.0;
            Ok((loss, g))
        };
        let r = grad_check(&p, corrupted, GradCheckConfig::default()).unwrap();
        assert!(!r.pass);
    }
}
