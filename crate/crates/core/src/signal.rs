//! Transmitter side: constellations, the root-raised-cosine pulse, and linear
//! modulation of dual-polarization symbol streams into a sampled waveform.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, FftPair};
use crate::ssfm::SampledField;

const INVARIANT_TOL: f64 = 1e-12;
/// Two points whose magnitudes agree to this tolerance sit on the same ring.
pub const RING_TOL: f64 = 1e-9;

/// A normalized (zero-mean, unit-energy) complex constellation.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    label: String,
    points: Vec<Complex64>,
    gray: Vec<u32>,
}

impl Constellation {
    /// Builds a constellation from raw points, checking every invariant the
    /// metrics rely on.
    pub fn new(label: impl Into<String>, points: Vec<Complex64>) -> Result<Self> {
        let gray = (0..points.len() as u32).collect();
        Self::with_labels(label.into(), points, gray)
    }

    fn with_labels(label: String, points: Vec<Complex64>, gray: Vec<u32>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::config(format!("{label}: need at least two points")));
        }
        let n = points.len() as f64;
        let mean: Complex64 = points.iter().sum::<Complex64>() / n;
        if mean.norm() > INVARIANT_TOL {
            return Err(Error::config(format!("{label}: mean {mean} is not zero")));
        }
        let energy = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / n;
        if (energy - 1.0).abs() > INVARIANT_TOL {
            return Err(Error::config(format!("{label}: mean energy {energy} is not 1")));
        }
        for p in &points {
            if p.norm() <= RING_TOL {
                return Err(Error::config(format!("{label}: contains the origin")));
            }
            let ring_size = points
                .iter()
                .filter(|q| (q.norm() - p.norm()).abs() <= RING_TOL)
                .count();
            if ring_size < 2 {
                return Err(Error::config(format!(
                    "{label}: point {p} is alone on its ring"
                )));
            }
        }
        Ok(Self {
            label,
            points,
            gray,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Gray label of each point, aligned with [`Constellation::points`].
    pub fn gray_labels(&self) -> &[u32] {
        &self.gray
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the closest point.
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// `E{A^2}` under uniform point probabilities. Zero for every square QAM.
    pub fn second_moment(&self) -> Complex64 {
        self.points.iter().map(|p| p * p).sum::<Complex64>() / self.points.len() as f64
    }
}

/// Normalized Gray-labeled square QAM for `QPSK`, `16QAM` or `64QAM`.
pub fn make_constellation(label: &str) -> Result<Constellation> {
    let order = match label.to_ascii_uppercase().as_str() {
        "QPSK" | "4QAM" => 4,
        "16QAM" => 16,
        "64QAM" => 64,
        other => return Err(Error::config(format!("unknown modulation format {other:?}"))),
    };
    let side = (order as f64).sqrt() as usize;
    let bits = side.trailing_zeros();
    let levels: Vec<f64> = (0..side)
        .map(|i| 2.0 * i as f64 - (side as f64 - 1.0))
        .collect();
    let raw_energy =
        levels.iter().map(|l| l * l).sum::<f64>() / side as f64 * 2.0;
    let scale = raw_energy.sqrt();

    let mut points = Vec::with_capacity(order);
    let mut gray = Vec::with_capacity(order);
    for (i, re) in levels.iter().enumerate() {
        for (q, im) in levels.iter().enumerate() {
            points.push(Complex64::new(re / scale, im / scale));
            let gi = (i ^ (i >> 1)) as u32;
            let gq = (q ^ (q >> 1)) as u32;
            gray.push((gi << bits) | gq);
        }
    }
    let label = if order == 4 { "QPSK".to_string() } else { format!("{order}QAM") };
    Constellation::with_labels(label, points, gray)
}

/// Root-raised-cosine pulse description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub rolloff: f64,
    /// Symbol period in seconds.
    pub symbol_period: f64,
    /// Truncation half-width of [`rrc_taps`], in symbols.
    pub span: usize,
    pub samples_per_symbol: usize,
}

impl PulseShape {
    pub fn new(rolloff: f64, symbol_period: f64, span: usize, samples_per_symbol: usize) -> Result<Self> {
        let pulse = Self {
            rolloff,
            symbol_period,
            span,
            samples_per_symbol,
        };
        pulse.validate()?;
        Ok(pulse)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::config(format!("roll-off {} outside [0, 1]", self.rolloff)));
        }
        if !(self.symbol_period > 0.0) {
            return Err(Error::config("symbol period must be positive"));
        }
        if self.samples_per_symbol < 2 {
            return Err(Error::config("samples_per_symbol must be at least 2"));
        }
        if self.span < 1 {
            return Err(Error::config("pulse span must be at least one symbol"));
        }
        Ok(())
    }

    pub fn symbol_rate(&self) -> f64 {
        1.0 / self.symbol_period
    }

    pub fn sample_interval(&self) -> f64 {
        self.symbol_period / self.samples_per_symbol as f64
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.sample_interval()
    }

    /// Two-sided occupied bandwidth `(1 + rolloff) / T`.
    pub fn bandwidth(&self) -> f64 {
        (1.0 + self.rolloff) / self.symbol_period
    }

    /// Closed-form unit-energy RRC impulse response at time `t`.
    pub fn value(&self, t: f64) -> f64 {
        let beta = self.rolloff;
        let ts = self.symbol_period;
        let x = t / ts;
        let norm = 1.0 / ts.sqrt();
        if x.abs() < 1e-12 {
            return (1.0 + beta * (4.0 / PI - 1.0)) * norm;
        }
        let q = 4.0 * beta * x;
        if beta > 0.0 && (1.0 - q * q).abs() < 1e-9 {
            let arg = PI / (4.0 * beta);
            return beta * FRAC_1_SQRT_2
                * ((1.0 + 2.0 / PI) * arg.sin() + (1.0 - 2.0 / PI) * arg.cos())
                * norm;
        }
        let num = (PI * x * (1.0 - beta)).sin() + q * (PI * x * (1.0 + beta)).cos();
        num / (PI * x * (1.0 - q * q)) * norm
    }

    /// Continuous-time Fourier transform of [`PulseShape::value`]; real and
    /// even, with `integral |H|^2 df = 1`.
    pub fn spectrum(&self, f: f64) -> f64 {
        let beta = self.rolloff;
        let ts = self.symbol_period;
        let f = f.abs();
        let lo = (1.0 - beta) / (2.0 * ts);
        let hi = (1.0 + beta) / (2.0 * ts);
        if f <= lo {
            ts.sqrt()
        } else if f <= hi {
            ts.sqrt() * (PI * ts / (2.0 * beta) * (f - lo)).cos()
        } else {
            0.0
        }
    }
}

/// Truncated RRC taps on `[-span T, span T]` at `samples_per_symbol` samples
/// per symbol, rescaled so that `sum h^2 dt = 1`.
pub fn rrc_taps(pulse: &PulseShape) -> Result<Vec<f64>> {
    pulse.validate()?;
    let sps = pulse.samples_per_symbol;
    let dt = pulse.sample_interval();
    let half = (pulse.span * sps) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| pulse.value(i as f64 * dt))
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum::<f64>() * dt;
    let scale = 1.0 / energy.sqrt();
    for h in &mut taps {
        *h *= scale;
    }
    Ok(taps)
}

/// Two polarization streams of complex symbols.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DualPolSymbolSeq {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
}

impl DualPolSymbolSeq {
    pub fn new(x: Vec<Complex64>, y: Vec<Complex64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension {
                what: "y polarization length",
                expected: x.len(),
                got: y.len(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            x: vec![Complex64::new(0.0, 0.0); len],
            y: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    /// Uniform i.i.d. draws from `constellation` on both polarizations.
    pub fn random<R: Rng + ?Sized>(constellation: &Constellation, len: usize, rng: &mut R) -> Self {
        let pts = constellation.points();
        let mut draw = || pts[rng.random_range(0..pts.len())];
        let x = (0..len).map(|_| draw()).collect();
        let y = (0..len).map(|_| draw()).collect();
        Self { x, y }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn pol(&self, pol: Polarization) -> &[Complex64] {
        match pol {
            Polarization::X => &self.x,
            Polarization::Y => &self.y,
        }
    }

    /// Total energy `sum |x|^2 + |y|^2`.
    pub fn energy(&self) -> f64 {
        self.x.iter().chain(&self.y).map(|v| v.norm_sqr()).sum()
    }

    /// Multiplies both polarizations by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            x: self.x.iter().map(|v| v * factor).collect(),
            y: self.y.iter().map(|v| v * factor).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    X,
    Y,
}

impl Polarization {
    pub fn other(self) -> Self {
        match self {
            Polarization::X => Polarization::Y,
            Polarization::Y => Polarization::X,
        }
    }
}

/// Launch power and symbol rate of a dual-polarization signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkPower {
    pub power_dbm: f64,
    /// Baud.
    pub symbol_rate: f64,
}

impl LinkPower {
    pub fn new(power_dbm: f64, symbol_rate: f64) -> Self {
        Self {
            power_dbm,
            symbol_rate,
        }
    }

    pub fn power_watts(&self) -> f64 {
        1e-3 * 10f64.powf(self.power_dbm / 10.0)
    }

    /// Energy per symbol per polarization, `P / (2 R_s)`.
    pub fn symbol_energy(&self) -> f64 {
        self.power_watts() / (2.0 * self.symbol_rate)
    }
}

/// Linearly modulates `seq` onto the RRC pulse.
///
/// The symbol stream is treated as one period of an infinite cyclic
/// sequence, so the pulse is applied through its exact spectrum. The result
/// equals `sqrt(E_s) sum_n a_n h(t - nT)` with the untruncated pulse.
pub fn modulate(seq: &DualPolSymbolSeq, pulse: &PulseShape, power: &LinkPower) -> Result<SampledField> {
    pulse.validate()?;
    if seq.is_empty() {
        return Err(Error::config("cannot modulate an empty sequence"));
    }
    check_rates(pulse, power)?;
    let sps = pulse.samples_per_symbol;
    let len = seq.len() * sps;
    let fs = pulse.sample_rate();
    let amplitude = power.symbol_energy().sqrt();
    let filter: Vec<f64> = fft::frequencies(len, fs)
        .iter()
        .map(|&f| pulse.spectrum(f) * fs * amplitude / len as f64)
        .collect();

    let mut fft = FftPair::new(len);
    let mut shape = |symbols: &[Complex64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (n, a) in symbols.iter().enumerate() {
            buf[n * sps] = *a;
        }
        fft.forward(&mut buf);
        for (v, h) in buf.iter_mut().zip(&filter) {
            *v *= h;
        }
        fft.inverse_unscaled(&mut buf);
        buf
    };
    let x = shape(&seq.x);
    let y = shape(&seq.y);
    Ok(SampledField {
        x,
        y,
        sample_rate: fs,
        symbol_rate: Some(pulse.symbol_rate()),
    })
}

pub(crate) fn check_rates(pulse: &PulseShape, power: &LinkPower) -> Result<()> {
    let rel = (pulse.symbol_rate() - power.symbol_rate).abs() / power.symbol_rate;
    if !(rel < 1e-9) {
        return Err(Error::config(format!(
            "pulse symbol rate {} Bd disagrees with link symbol rate {} Bd",
            pulse.symbol_rate(),
            power.symbol_rate
        )));
    }
    Ok(())
}
