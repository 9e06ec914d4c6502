//! Thin wrapper over `rustfft` that caches plans and applies the `1/N`
//! normalization on the inverse transform.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    len: usize,
}

impl FftPair {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// Unnormalized forward DFT, `X_k = sum_i x_i exp(-j 2 pi k i / N)`.
    pub fn forward(&mut self, buf: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    /// Inverse DFT including the `1/N` factor.
    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        self.inverse_unscaled(buf);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Inverse DFT without normalization; callers fold `1/N` into a
    /// frequency-domain multiplier.
    pub fn inverse_unscaled(&mut self, buf: &mut [Complex64]) {
        self.inverse.process_with_scratch(buf, &mut self.scratch);
    }
}

/// Signed DFT bin frequencies in Hz for `len` samples at `sample_rate`.
pub fn frequencies(len: usize, sample_rate: f64) -> Vec<f64> {
    let df = sample_rate / len as f64;
    (0..len)
        .map(|k| {
            if k < len.div_ceil(2) {
                k as f64 * df
            } else {
                (k as f64 - len as f64) * df
            }
        })
        .collect()
}
