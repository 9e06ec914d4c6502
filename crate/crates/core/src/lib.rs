//! Dual-polarization fiber channel modeling with first-order regular
//! perturbation (FRP).
//!
//! The crate covers the full desk-scale chain: symbol generation and
//! root-raised-cosine shaping, Manakov split-step propagation, analytical
//! SPM kernels, the finite-memory FRP predictor, normalized batch gradient
//! descent for kernel estimation, and the accuracy metrics used to compare
//! models against the split-step reference.

pub mod error;
pub mod experiment;
pub mod fft;
pub mod frp;
pub mod kernels;
pub mod metrics;
pub mod nbgd;
pub mod signal;
pub mod ssfm;
pub mod waveform;

pub use error::{Error, Result};
