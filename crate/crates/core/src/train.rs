//! Seeded mini-batch SGD loop shared by every trainable component.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{sgd_step, MlpParams, OptimizerState};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(what, "learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(what, "batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Run `cfg.epochs` shuffled passes over `n` samples. `batch_grad` returns
/// the mean loss and gradient for a batch of sample indices. Returns the
/// mean batch loss per epoch.
pub fn run_sgd<F>(params: &mut MlpParams, n: usize, cfg: &SgdConfig, stream: &str, batch_grad: F) -> Result<Vec<f64>>
where
    F: FnMut(&MlpParams, &[usize]) -> Result<(f64, MlpParams)>,
{
    run_sgd_with(params, n, cfg, stream, batch_grad, |_, _| Ok(()))
}

/// [`run_sgd`] with a hook called after every epoch.
pub fn run_sgd_with<F, H>(
    params: &mut MlpParams,
    n: usize,
    cfg: &SgdConfig,
    stream: &str,
    mut batch_grad: F,
    mut on_epoch: H,
) -> Result<Vec<f64>>
where
    F: FnMut(&MlpParams, &[usize]) -> Result<(f64, MlpParams)>,
    H: FnMut(&MlpParams, usize) -> Result<()>,
{
    cfg.validate(stream)?;
    let mut state = OptimizerState::new(cfg.learning_rate)?;
    let mut rng = rng::stream(cfg.seed, stream);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let order = rng::permutation(&mut rng, n);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_grad(params, batch)?;
            if !loss.is_finite() {
                return Err(Error::Training(alloc::format!("{stream}: loss became non-finite")));
            }
            sgd_step(params, &grads, &mut state)?;
            total += loss;
            batches += 1;
        }
        trace.push(if batches == 0 { 0.0 } else { total / batches as f64 });
        on_epoch(params, trace.len())?;
    }
    Ok(trace)
}
