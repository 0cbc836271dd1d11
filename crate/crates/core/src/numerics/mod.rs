//! Deterministic numeric kernel: probability transforms, a small tanh
//! feedforward network with hand-written backpropagation, and plain SGD.

mod matrix;
mod mlp;
mod optim;
mod prob;

pub use matrix::Mat64;
pub use mlp::{mlp_backward, mlp_forward, Activation, ForwardCache, Layer, MlpParams};
pub use optim::{grad_check, sgd_step, GradCheckConfig, GradCheckReport, OptimizerState};
pub use prob::{
    argmax, cross_entropy_grad, entropy, entropy_gradient, kl_divergence, log_softmax, softmax,
    Divergence,
};
pub use prob::{entropy_unchecked, softmax_unchecked};

use crate::error::{Error, Result};

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(alloc::format!("non-finite entry in {what}")))
    }
}

pub fn ensure_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
