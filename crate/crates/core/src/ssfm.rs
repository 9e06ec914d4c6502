//! Split-step Fourier propagation of the attenuation-normalized Manakov
//! equation, and the receiver chain: dispersion compensation, matched
//! filtering, symbol-rate sampling, and optional lumped ASE.
//!
//! Dispersion convention: the linear step multiplies each DFT bin by
//! `exp(+j beta2/2 omega^2 dz)`; [`cdc`] applies the exact conjugate.

use std::f64::consts::PI;

use log::warn;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, FftPair};
use crate::signal::{check_rates, DualPolSymbolSeq, LinkPower, PulseShape};

/// Manakov nonlinear weight for fast random birefringence.
pub const MANAKOV_FACTOR: f64 = 8.0 / 9.0;

const PLANCK: f64 = 6.626_070_15e-34;

/// Fiber span parameters in SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberParams {
    /// Power attenuation, 1/m.
    pub alpha: f64,
    /// Group-velocity dispersion, s^2/m.
    pub beta2: f64,
    /// Nonlinear coefficient, 1/(W m).
    pub gamma: f64,
    /// Span length, m.
    pub length: f64,
}

impl FiberParams {
    /// Builds parameters from the usual engineering units.
    pub fn from_engineering(
        alpha_db_per_km: f64,
        beta2_ps2_per_km: f64,
        gamma_per_w_per_km: f64,
        length_km: f64,
    ) -> Result<Self> {
        let params = Self {
            alpha: alpha_db_per_km * 10f64.ln() / 10.0 / 1e3,
            beta2: beta2_ps2_per_km * 1e-24 / 1e3,
            gamma: gamma_per_w_per_km / 1e3,
            length: length_km * 1e3,
        };
        params.validate()?;
        Ok(params)
    }

    /// Standard single-mode fiber: 0.2 dB/km, -21.7 ps^2/km, 1.2 /W/km.
    pub fn standard_smf(length_km: f64) -> Result<Self> {
        Self::from_engineering(0.2, -21.7, 1.2, length_km)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::config("attenuation must be non-negative"));
        }
        if !(self.length > 0.0) {
            return Err(Error::config("fiber length must be positive"));
        }
        if !self.beta2.is_finite() || !self.gamma.is_finite() {
            return Err(Error::config("beta2 and gamma must be finite"));
        }
        Ok(())
    }

    /// `integral_0^L exp(-alpha z) dz`.
    pub fn effective_length(&self) -> f64 {
        effective_length(self.alpha, 0.0, self.length)
    }

    /// Span loss as a linear power ratio, `exp(alpha L)`.
    pub fn span_loss(&self) -> f64 {
        (self.alpha * self.length).exp()
    }
}

/// `integral_{z0}^{z0+dz} exp(-alpha z) dz`, exact.
pub fn effective_length(alpha: f64, z0: f64, dz: f64) -> f64 {
    if alpha == 0.0 {
        dz
    } else {
        (-alpha * z0).exp() * -(-alpha * dz).exp_m1() / alpha
    }
}

/// Two-polarization complex baseband waveform, attenuation-normalized, in
/// sqrt(W).
#[derive(Clone, Debug, PartialEq)]
pub struct SampledField {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    /// Hz.
    pub sample_rate: f64,
    /// Symbol rate of the modulated signal, if known.
    pub symbol_rate: Option<f64>,
}

impl SampledField {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Sum of `|x|^2 + |y|^2` over all samples.
    pub fn energy(&self) -> f64 {
        self.x.iter().chain(&self.y).map(|v| v.norm_sqr()).sum()
    }

    fn check_shape(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::Dimension {
                what: "y polarization samples",
                expected: self.x.len(),
                got: self.y.len(),
            });
        }
        if self.x.is_empty() {
            return Err(Error::config("empty field"));
        }
        Ok(())
    }
}

/// Lumped receiver-side EDFA.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AseConfig {
    pub enabled: bool,
    pub noise_figure_db: f64,
    /// Optical carrier frequency, Hz.
    pub center_frequency: f64,
}

impl Default for AseConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            noise_figure_db: 5.0,
            center_frequency: 193.414e12,
        }
    }
}

/// Noise power per polarization (W) added by an amplifier that exactly
/// compensates the span loss, over `bandwidth` Hz.
pub fn ase_noise_power(ase: &AseConfig, fiber: &FiberParams, bandwidth: f64) -> f64 {
    let n_sp = 10f64.powf(ase.noise_figure_db / 10.0) / 2.0;
    let gain = fiber.span_loss();
    n_sp * PLANCK * ase.center_frequency * (gain - 1.0) * bandwidth
}

/// Dispersion all-pass for one step, with the inverse-DFT `1/N` folded in.
fn dispersion_filter(omega_sq: &[f64], beta2: f64, dz: f64) -> Vec<Complex64> {
    let scale = 1.0 / omega_sq.len() as f64;
    omega_sq
        .iter()
        .map(|w2| Complex64::from_polar(scale, 0.5 * beta2 * w2 * dz))
        .collect()
}

fn omega_squared(len: usize, sample_rate: f64) -> Vec<f64> {
    fft::frequencies(len, sample_rate)
        .into_iter()
        .map(|f| (2.0 * PI * f).powi(2))
        .collect()
}

fn apply_filter(fft: &mut FftPair, buf: &mut [Complex64], filter: &[Complex64]) {
    fft.forward(buf);
    for (v, h) in buf.iter_mut().zip(filter) {
        *v *= h;
    }
    fft.inverse_unscaled(buf);
}

/// Sizes of the uniform steps covering `[0, length]`, with a shorter final
/// step when `step` does not divide the length.
fn step_sizes(length: f64, step: f64) -> Vec<f64> {
    let full = (length / step * (1.0 + 1e-12)).floor() as usize;
    let mut steps = vec![step; full];
    let rest = length - full as f64 * step;
    if rest > 1e-9 * step {
        steps.push(rest);
    }
    steps
}

/// Symmetric split-step solution over the whole span.
///
/// Each step applies half the dispersion, the Kerr phase
/// `(8/9) gamma (|x|^2 + |y|^2) L_eff(step)`, and the other half; adjacent
/// half steps are merged so each step costs one FFT pair per polarization.
pub fn propagate(field: &SampledField, fiber: &FiberParams, step: f64) -> Result<SampledField> {
    field.check_shape()?;
    fiber.validate()?;
    if !(step > 0.0) {
        return Err(Error::config(format!("SSFM step {step} must be positive")));
    }
    if let Some(rs) = field.symbol_rate {
        if field.sample_rate < 4.0 * rs * (1.0 - 1e-12) {
            warn!(
                "sample rate {:.3e} Hz is below four times the symbol rate {:.3e} Bd",
                field.sample_rate, rs
            );
        }
    }

    let len = field.len();
    let omega_sq = omega_squared(len, field.sample_rate);
    let mut fft = FftPair::new(len);
    let mut out = field.clone();

    if fiber.gamma == 0.0 {
        // Without the Kerr term all linear steps commute into one.
        let filter = dispersion_filter(&omega_sq, fiber.beta2, fiber.length);
        apply_filter(&mut fft, &mut out.x, &filter);
        apply_filter(&mut fft, &mut out.y, &filter);
        return Ok(out);
    }

    let steps = step_sizes(fiber.length, step);
    let mut filters: Vec<(f64, Vec<Complex64>)> = Vec::new();
    let mut filter_for = |dz: f64| -> usize {
        if let Some(i) = filters.iter().position(|(d, _)| *d == dz) {
            return i;
        }
        filters.push((dz, dispersion_filter(&omega_sq, fiber.beta2, dz)));
        filters.len() - 1
    };
    let plan: Vec<usize> = (0..=steps.len())
        .map(|i| {
            let prev = if i == 0 { 0.0 } else { steps[i - 1] };
            let next = steps.get(i).copied().unwrap_or(0.0);
            filter_for(0.5 * (prev + next))
        })
        .collect();

    let kerr = MANAKOV_FACTOR * fiber.gamma;
    let mut z = 0.0;
    for (i, &dz) in steps.iter().enumerate() {
        let filter = &filters[plan[i]].1;
        apply_filter(&mut fft, &mut out.x, filter);
        apply_filter(&mut fft, &mut out.y, filter);

        let weight = kerr * effective_length(fiber.alpha, z, dz);
        for (x, y) in out.x.iter_mut().zip(out.y.iter_mut()) {
            let phase = weight * (x.norm_sqr() + y.norm_sqr());
            let rot = Complex64::cis(phase);
            *x *= rot;
            *y *= rot;
        }
        z += dz;
    }
    let last = &filters[plan[steps.len()]].1;
    apply_filter(&mut fft, &mut out.x, last);
    apply_filter(&mut fft, &mut out.y, last);
    Ok(out)
}

/// Ideal chromatic dispersion compensation over the full span.
pub fn cdc(field: &SampledField, fiber: &FiberParams) -> Result<SampledField> {
    field.check_shape()?;
    let len = field.len();
    let filter = dispersion_filter(&omega_squared(len, field.sample_rate), fiber.beta2, -fiber.length);
    let mut fft = FftPair::new(len);
    let mut out = field.clone();
    apply_filter(&mut fft, &mut out.x, &filter);
    apply_filter(&mut fft, &mut out.y, &filter);
    Ok(out)
}

/// Matched filter, symbol-rate sampling at `t = nT`, and `1/sqrt(E_s)`
/// rescaling.
pub fn receive(field: &SampledField, pulse: &PulseShape, power: &LinkPower) -> Result<DualPolSymbolSeq> {
    field.check_shape()?;
    pulse.validate()?;
    check_rates(pulse, power)?;
    let sps = pulse.samples_per_symbol;
    let len = field.len();
    if len % sps != 0 {
        return Err(Error::Dimension {
            what: "field length (multiple of samples per symbol)",
            expected: len.div_ceil(sps) * sps,
            got: len,
        });
    }
    let rel = (field.sample_rate - pulse.sample_rate()).abs() / pulse.sample_rate();
    if rel > 1e-9 {
        return Err(Error::config("field sample rate does not match the pulse sampling"));
    }
    let gain = 1.0 / (len as f64 * power.symbol_energy().sqrt());
    let filter: Vec<Complex64> = fft::frequencies(len, field.sample_rate)
        .iter()
        .map(|&f| Complex64::new(pulse.spectrum(f) * gain, 0.0))
        .collect();
    let mut fft = FftPair::new(len);
    let mut sample = |pol: &[Complex64]| {
        let mut buf = pol.to_vec();
        apply_filter(&mut fft, &mut buf, &filter);
        buf.into_iter().step_by(sps).collect::<Vec<_>>()
    };
    let x = sample(&field.x);
    let y = sample(&field.y);
    DualPolSymbolSeq::new(x, y)
}

/// Adds circular complex Gaussian ASE on both polarizations, white over the
/// simulation bandwidth.
pub fn add_ase<R: Rng + ?Sized>(
    field: &SampledField,
    ase: &AseConfig,
    fiber: &FiberParams,
    rng: &mut R,
) -> Result<SampledField> {
    field.check_shape()?;
    if !ase.enabled {
        return Ok(field.clone());
    }
    if !(ase.noise_figure_db > 0.0) {
        return Err(Error::config("noise figure must be positive when ASE is enabled"));
    }
    let variance = ase_noise_power(ase, fiber, field.sample_rate);
    let normal = Normal::new(0.0, (variance / 2.0).sqrt())
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let mut out = field.clone();
    for v in out.x.iter_mut().chain(out.y.iter_mut()) {
        *v += Complex64::new(normal.sample(rng), normal.sample(rng));
    }
    Ok(out)
}
