//! Self-phase-modulation perturbation kernels.
//!
//! A kernel is the double integral over the span and over time of
//! `exp(-alpha z) h*(z,t) h*(z,t-kT) h(z,t-lT) h(z,t-mT)`, where `h(z,t)` is
//! the pulse after linear propagation to `z`. The time integral runs over a
//! periodic grid whose spacing divides `T`, so symbol shifts are integer
//! sample rotations and every `h(z, .)` slice is computed once per `z`.

mod file;

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, FftPair};
use crate::signal::PulseShape;
use crate::ssfm::FiberParams;

pub use file::{decode_tensor, encode_tensor, load_tensor, save_tensor, write_tensor_csv, FORMAT_VERSION, MAGIC};

/// Number of kernels for memory `m`, `(2m + 1)^3`.
pub fn kernel_count(memory: usize) -> usize {
    let w = 2 * memory + 1;
    w * w * w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSource {
    Analytical,
    Nbgd,
}

impl KernelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelSource::Analytical => "analytical",
            KernelSource::Nbgd => "nbgd",
        }
    }
}

/// Where a tensor came from. Stored alongside the values in kernel files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: KernelSource,
    pub grid: Option<IntegrationGrid>,
    /// Training launch power for optimized kernels.
    pub power_dbm: Option<f64>,
    pub seed: Option<u64>,
    /// Largest kernel change under grid refinement, relative to the largest
    /// kernel magnitude.
    pub convergence: Option<f64>,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            source: KernelSource::Analytical,
            grid: None,
            power_dbm: None,
            seed: None,
            convergence: None,
        }
    }
}

/// `(2M+1)^3` complex kernels in row-major `(k, l, m)` order, `k` slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTensor {
    memory: usize,
    values: Vec<Complex64>,
    pub provenance: Provenance,
}

impl KernelTensor {
    pub fn new(memory: usize, values: Vec<Complex64>) -> Result<Self> {
        let expected = kernel_count(memory);
        if values.len() != expected {
            return Err(Error::Dimension {
                what: "kernel tensor length",
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            memory,
            values,
            provenance: Provenance::default(),
        })
    }

    pub fn zeros(memory: usize) -> Self {
        Self {
            memory,
            values: vec![Complex64::new(0.0, 0.0); kernel_count(memory)],
            provenance: Provenance::default(),
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// Linear position of `(k, l, m)`.
    pub fn index(&self, k: i64, l: i64, m: i64) -> Result<usize> {
        linear_index(self.memory, k, l, m)
    }

    pub fn get(&self, k: i64, l: i64, m: i64) -> Result<Complex64> {
        Ok(self.values[self.index(k, l, m)?])
    }

    /// `(k, l, m)` triples in storage order.
    pub fn indices(&self) -> impl Iterator<Item = (i64, i64, i64)> {
        canonical_indices(self.memory)
    }

    /// The sub-tensor with `|k|, |l|, |m| <= memory`.
    pub fn restrict(&self, memory: usize) -> Result<Self> {
        if memory > self.memory {
            return Err(Error::config(format!(
                "cannot restrict memory {} tensor to memory {memory}",
                self.memory
            )));
        }
        let values = canonical_indices(memory)
            .map(|(k, l, m)| self.get(k, l, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            memory,
            values,
            provenance: self.provenance.clone(),
        })
    }
}

pub(crate) fn linear_index(memory: usize, k: i64, l: i64, m: i64) -> Result<usize> {
    let mm = memory as i64;
    if k.abs() > mm || l.abs() > mm || m.abs() > mm {
        return Err(Error::IndexOutOfRange { k, l, m, memory });
    }
    let w = 2 * mm + 1;
    Ok((((k + mm) * w + (l + mm)) * w + (m + mm)) as usize)
}

pub(crate) fn canonical_indices(memory: usize) -> impl Iterator<Item = (i64, i64, i64)> {
    let mm = memory as i64;
    (-mm..=mm).flat_map(move |k| (-mm..=mm).flat_map(move |l| (-mm..=mm).map(move |m| (k, l, m))))
}

/// Time/space discretization of the kernel integral.
///
/// The time axis is periodic with `n_t` samples on `[t_min, t_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrationGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub n_z: usize,
}

impl IntegrationGrid {
    pub fn new(t_min: f64, t_max: f64, n_t: usize, n_z: usize) -> Result<Self> {
        let grid = Self { t_min, t_max, n_t, n_z };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 || self.n_z < 2 {
            return Err(Error::config("integration grid needs n_t >= 2 and n_z >= 2"));
        }
        if !(self.t_max > self.t_min) || !self.t_min.is_finite() || !self.t_max.is_finite() {
            return Err(Error::config("integration grid needs t_max > t_min"));
        }
        Ok(())
    }

    /// Default grid: symmetric window covering the truncated pulse plus the
    /// full dispersive spread `2 pi |beta2| L B` on each side, at the pulse's
    /// own sampling rate.
    pub fn for_link(pulse: &PulseShape, fiber: &FiberParams, n_z: usize) -> Result<Self> {
        pulse.validate()?;
        let ts = pulse.symbol_period;
        let spread = 2.0 * PI * fiber.beta2.abs() * fiber.length * pulse.bandwidth();
        let half_symbols = ((pulse.span as f64 * ts + spread) / ts).ceil() as usize;
        let n_symbols = 2 * half_symbols;
        let n_t = n_symbols * pulse.samples_per_symbol;
        Self::new(
            -(half_symbols as f64) * ts,
            half_symbols as f64 * ts,
            n_t,
            n_z,
        )
    }

    pub fn dt(&self) -> f64 {
        (self.t_max - self.t_min) / self.n_t as f64
    }

    /// Grid with twice the time window (and samples) and twice the z steps.
    pub fn refined(&self) -> Self {
        let half = 0.5 * (self.t_max - self.t_min);
        Self {
            t_min: self.t_min - half,
            t_max: self.t_max + half,
            n_t: 2 * self.n_t,
            n_z: 2 * self.n_z - 1,
        }
    }

    /// Samples per symbol on this grid; errors unless the spacing divides
    /// `T` and resolves the pulse bandwidth.
    pub fn samples_per_symbol(&self, pulse: &PulseShape) -> Result<usize> {
        self.validate()?;
        let ratio = pulse.symbol_period / self.dt();
        let q = ratio.round();
        if q < 1.0 || (ratio - q).abs() > 1e-6 {
            return Err(Error::config(format!(
                "grid spacing {:.3e} s does not divide the symbol period",
                self.dt()
            )));
        }
        if 1.0 / self.dt() <= pulse.bandwidth() {
            return Err(Error::config(format!(
                "grid rate {:.3e} Hz does not resolve the pulse bandwidth {:.3e} Hz",
                1.0 / self.dt(),
                pulse.bandwidth()
            )));
        }
        Ok(q as usize)
    }

    fn z_points(&self, length: f64) -> Vec<f64> {
        let dz = length / (self.n_z - 1) as f64;
        (0..self.n_z).map(|i| i as f64 * dz).collect()
    }

    /// Trapezoid weights over `[0, length]`.
    fn z_weights(&self, length: f64) -> Vec<f64> {
        let dz = length / (self.n_z - 1) as f64;
        (0..self.n_z)
            .map(|i| if i == 0 || i == self.n_z - 1 { 0.5 * dz } else { dz })
            .collect()
    }
}

/// Produces `h(z, .)` slices on a periodic grid from the pulse spectrum.
struct PulseSlicer {
    fft: FftPair,
    spectrum: Vec<Complex64>,
    half_beta2_omega_sq: Vec<f64>,
}

impl PulseSlicer {
    fn new(pulse: &PulseShape, fiber: &FiberParams, grid: &IntegrationGrid) -> Result<Self> {
        grid.samples_per_symbol(pulse)?;
        let n = grid.n_t;
        let dt = grid.dt();
        let period = n as f64 * dt;
        let freqs = fft::frequencies(n, 1.0 / dt);
        let spectrum = freqs
            .iter()
            .map(|&f| Complex64::from_polar(pulse.spectrum(f) / period, 2.0 * PI * f * grid.t_min))
            .collect();
        let half_beta2_omega_sq = freqs
            .iter()
            .map(|&f| 0.5 * fiber.beta2 * (2.0 * PI * f).powi(2))
            .collect();
        Ok(Self {
            fft: FftPair::new(n),
            spectrum,
            half_beta2_omega_sq,
        })
    }

    fn slice(&mut self, z: f64) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = self
            .spectrum
            .iter()
            .zip(&self.half_beta2_omega_sq)
            .map(|(s, p)| s * Complex64::cis(p * z))
            .collect();
        self.fft.inverse_unscaled(&mut buf);
        buf
    }
}

/// `h(z, t)` on the grid's time samples `t_min + i dt`.
pub fn dispersed_pulse(
    pulse: &PulseShape,
    fiber: &FiberParams,
    z: f64,
    grid: &IntegrationGrid,
) -> Result<Vec<Complex64>> {
    if !(0.0..=fiber.length).contains(&z) {
        return Err(Error::config(format!("z = {z} m outside [0, {}] m", fiber.length)));
    }
    Ok(PulseSlicer::new(pulse, fiber, grid)?.slice(z))
}

/// Rotates so that `out[i] = h[i - shift]` cyclically.
fn shifted(h: &[Complex64], shift: i64) -> Vec<Complex64> {
    let n = h.len() as i64;
    let s = shift.rem_euclid(n) as usize;
    let mut out = Vec::with_capacity(h.len());
    out.extend_from_slice(&h[h.len() - s..]);
    out.extend_from_slice(&h[..h.len() - s]);
    out
}

/// A single kernel, integrated directly.
pub fn compute_kernel(
    k: i64,
    l: i64,
    m: i64,
    pulse: &PulseShape,
    fiber: &FiberParams,
    grid: &IntegrationGrid,
) -> Result<Complex64> {
    let q = grid.samples_per_symbol(pulse)? as i64;
    let mut slicer = PulseSlicer::new(pulse, fiber, grid)?;
    let dt = grid.dt();
    let mut acc = Complex64::new(0.0, 0.0);
    for (z, w) in grid.z_points(fiber.length).into_iter().zip(grid.z_weights(fiber.length)) {
        let h = slicer.slice(z);
        let hk = shifted(&h, k * q);
        let hl = shifted(&h, l * q);
        let hm = shifted(&h, m * q);
        let sum: Complex64 = (0..h.len())
            .map(|i| h[i].conj() * hk[i].conj() * hl[i] * hm[i])
            .sum();
        acc += sum * (w * (-fiber.alpha * z).exp() * dt);
    }
    Ok(acc)
}

/// z-slices per parallel work unit; fixed so results do not depend on the
/// thread count or on the requested memory.
const Z_CHUNK: usize = 8;

/// All `(2M+1)^3` kernels. Only `l <= m` is integrated; the rest are mirrored.
pub fn compute_tensor(
    memory: usize,
    pulse: &PulseShape,
    fiber: &FiberParams,
    grid: &IntegrationGrid,
) -> Result<KernelTensor> {
    let q = grid.samples_per_symbol(pulse)? as i64;
    let mm = memory as i64;
    let width = 2 * memory + 1;
    let pairs: Vec<(i64, i64)> = (-mm..=mm)
        .flat_map(|l| (l..=mm).map(move |m| (l, m)))
        .collect();
    let zs = grid.z_points(fiber.length);
    let ws = grid.z_weights(fiber.length);
    let dt = grid.dt();

    let chunks: Vec<Vec<usize>> = (0..zs.len())
        .collect::<Vec<_>>()
        .chunks(Z_CHUNK)
        .map(|c| c.to_vec())
        .collect();
    let partials: Vec<Result<Vec<Complex64>>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut slicer = PulseSlicer::new(pulse, fiber, grid)?;
            let mut acc = vec![Complex64::new(0.0, 0.0); width * pairs.len()];
            for &iz in chunk {
                let z = zs[iz];
                let weight = ws[iz] * (-fiber.alpha * z).exp() * dt;
                let h = slicer.slice(z);
                let shifts: Vec<Vec<Complex64>> = (-mm..=mm).map(|s| shifted(&h, s * q)).collect();
                let conj_pairs: Vec<Vec<Complex64>> = shifts
                    .iter()
                    .map(|hk| h.iter().zip(hk).map(|(a, b)| (a * b).conj()).collect())
                    .collect();
                for (p, &(l, m)) in pairs.iter().enumerate() {
                    let hl = &shifts[(l + mm) as usize];
                    let hm = &shifts[(m + mm) as usize];
                    let prod: Vec<Complex64> = hl.iter().zip(hm).map(|(a, b)| a * b).collect();
                    for (ki, ck) in conj_pairs.iter().enumerate() {
                        let s: Complex64 = ck.iter().zip(&prod).map(|(a, b)| a * b).sum();
                        acc[ki * pairs.len() + p] += s * weight;
                    }
                }
            }
            Ok(acc)
        })
        .collect();

    let mut total = vec![Complex64::new(0.0, 0.0); width * pairs.len()];
    for part in partials {
        for (t, v) in total.iter_mut().zip(part?) {
            *t += v;
        }
    }

    let mut values = vec![Complex64::new(0.0, 0.0); kernel_count(memory)];
    for k in -mm..=mm {
        let ki = (k + mm) as usize;
        for (p, &(l, m)) in pairs.iter().enumerate() {
            let v = total[ki * pairs.len() + p];
            values[linear_index(memory, k, l, m)?] = v;
            values[linear_index(memory, k, m, l)?] = v;
        }
    }
    Ok(KernelTensor::new(memory, values)?.with_provenance(Provenance {
        grid: Some(*grid),
        ..Provenance::default()
    }))
}

/// Largest change of the memory-`min(M, 1)` kernels when the grid is refined,
/// relative to the largest kernel magnitude.
pub fn convergence_certificate(
    memory: usize,
    pulse: &PulseShape,
    fiber: &FiberParams,
    grid: &IntegrationGrid,
) -> Result<f64> {
    let probe = memory.min(1);
    let coarse = compute_tensor(probe, pulse, fiber, grid)?;
    let fine = compute_tensor(probe, pulse, fiber, &grid.refined())?;
    let scale = coarse.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let diff = coarse
        .values()
        .iter()
        .zip(fine.values())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    Ok(diff / scale)
}

/// [`compute_tensor`] plus its [`convergence_certificate`] recorded in the
/// provenance.
pub fn compute_certified_tensor(
    memory: usize,
    pulse: &PulseShape,
    fiber: &FiberParams,
    grid: &IntegrationGrid,
) -> Result<KernelTensor> {
    let mut tensor = compute_tensor(memory, pulse, fiber, grid)?;
    tensor.provenance.convergence = Some(convergence_certificate(memory, pulse, fiber, grid)?);
    Ok(tensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link() -> (PulseShape, FiberParams) {
        (
            PulseShape::new(0.01, 1.0 / 60e9, 64, 4).unwrap(),
            FiberParams::standard_smf(120.0).unwrap(),
        )
    }

    #[test]
    fn canonical_order_m1() {
        let idx: Vec<_> = canonical_indices(1).collect();
        assert_eq!(idx.len(), 27);
        assert_eq!(idx[0], (-1, -1, -1));
        assert_eq!(idx[1], (-1, -1, 0));
        assert_eq!(idx[2], (-1, -1, 1));
        assert_eq!(idx[3], (-1, 0, -1));
        assert_eq!(idx[26], (1, 1, 1));
        for (i, (k, l, m)) in idx.iter().enumerate() {
            assert_eq!(linear_index(1, *k, *l, *m).unwrap(), i);
        }
    }

    #[test]
    fn kernel_counts() {
        assert_eq!(kernel_count(0), 1);
        assert_eq!(kernel_count(1), 27);
        assert_eq!(kernel_count(3), 343);
        assert_eq!(kernel_count(15), 29_791);
    }

    #[test]
    fn out_of_range_index() {
        let t = KernelTensor::zeros(1);
        assert!(matches!(t.get(2, 0, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(KernelTensor::new(1, vec![Complex64::new(0.0, 0.0); 26]).is_err());
    }

    #[test]
    fn default_grid_covers_dispersive_spread() {
        let (pulse, fiber) = link();
        let g = IntegrationGrid::for_link(&pulse, &fiber, 64).unwrap();
        assert_eq!(g.samples_per_symbol(&pulse).unwrap(), 4);
        // 64 symbols of pulse plus ~59.4 symbols of spread on each side.
        let half = g.t_max / pulse.symbol_period;
        assert!((123.0..=125.0).contains(&half), "{half}");
    }

    #[test]
    fn grid_rejects_bad_spacing() {
        let (pulse, _) = link();
        let ts = pulse.symbol_period;
        let g = IntegrationGrid::new(-10.0 * ts, 10.0 * ts, 30, 4).unwrap();
        assert!(g.samples_per_symbol(&pulse).is_err());
        let coarse = IntegrationGrid::new(-10.0 * ts, 10.0 * ts, 20, 4).unwrap();
        assert!(coarse.samples_per_symbol(&pulse).is_err());
        assert!(IntegrationGrid::new(0.0, 1.0, 1, 4).is_err());
    }

    #[test]
    fn undispersed_pulse_matches_closed_form() {
        let (pulse, fiber) = link();
        let g = IntegrationGrid::for_link(&pulse, &fiber, 8).unwrap();
        let h0 = dispersed_pulse(&pulse, &fiber, 0.0, &g).unwrap();
        let flat = FiberParams { beta2: 0.0, ..fiber };
        let hz = dispersed_pulse(&pulse, &flat, 60e3, &g).unwrap();
        let peak = pulse.value(0.0);
        let period = g.t_max - g.t_min;
        for (i, (a, b)) in h0.iter().zip(&hz).enumerate() {
            let t = g.t_min + i as f64 * g.dt();
            let periodized: f64 = (-400..=400).map(|n| pulse.value(t + n as f64 * period)).sum();
            assert!((a.re - periodized).abs() < 1e-6 * peak, "t = {t}");
            assert!(a.im.abs() < 1e-9 * peak);
            assert!((a - b).norm() < 1e-12 * peak);
        }
    }

    #[test]
    fn dispersed_pulse_keeps_unit_energy() {
        let (pulse, fiber) = link();
        let g = IntegrationGrid::for_link(&pulse, &fiber, 8).unwrap();
        for z in [0.0, 30e3, 120e3] {
            let h = dispersed_pulse(&pulse, &fiber, z, &g).unwrap();
            let e: f64 = h.iter().map(|v| v.norm_sqr()).sum::<f64>() * g.dt();
            assert!((e - 1.0).abs() < 1e-6, "z = {z}: {e}");
        }
        assert!(dispersed_pulse(&pulse, &fiber, 130e3, &g).is_err());
    }

    #[test]
    fn single_kernel_matches_tensor_entry() {
        let (pulse, fiber) = link();
        let g = IntegrationGrid::for_link(&pulse, &fiber, 33).unwrap();
        let t = compute_tensor(1, &pulse, &fiber, &g).unwrap();
        for (k, l, m) in [(0, 0, 0), (1, 0, 1), (-1, 1, 0), (1, 1, -1)] {
            let direct = compute_kernel(k, l, m, &pulse, &fiber, &g).unwrap();
            let stored = t.get(k, l, m).unwrap();
            assert!((direct - stored).norm() < 1e-10 * stored.norm().max(t.values()[13].norm()));
        }
    }

    #[test]
    fn tensor_is_index_local() {
        let (pulse, fiber) = link();
        let g = IntegrationGrid::for_link(&pulse, &fiber, 17).unwrap();
        let big = compute_tensor(2, &pulse, &fiber, &g).unwrap();
        let small = compute_tensor(1, &pulse, &fiber, &g).unwrap();
        assert_eq!(big.restrict(1).unwrap().values(), small.values());
        assert_eq!(compute_tensor(0, &pulse, &fiber, &g).unwrap().len(), 1);
    }

    #[test]
    fn kernel_magnitude_decays_over_shells() {
        let (pulse, fiber) = link();
        let g = IntegrationGrid::for_link(&pulse, &fiber, 65).unwrap();
        let t = compute_tensor(3, &pulse, &fiber, &g).unwrap();
        let mut shell_max = vec![0.0f64; 28];
        for ((k, l, m), v) in t.indices().zip(t.values()) {
            let r2 = (k * k + l * l + m * m) as usize;
            shell_max[r2] = shell_max[r2].max(v.norm());
        }
        let s0 = shell_max[0];
        // Decay in the coarse sense: every shell beyond radius^2 = 3 is
        // smaller than the center, and the outermost shell is far smaller.
        for (r2, v) in shell_max.iter().enumerate().skip(4) {
            assert!(*v < s0, "shell {r2}: {v} vs {s0}");
        }
        assert!(shell_max[27] < 0.2 * s0);
    }
}
