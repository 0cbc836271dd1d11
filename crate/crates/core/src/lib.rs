#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibration;
pub mod detection;
pub mod error;
pub mod experts;
pub mod metrics;
pub mod mhc;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod router;
pub mod selftest;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
