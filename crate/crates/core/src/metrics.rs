//! Conditional statistics and model accuracy metrics.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signal::{Constellation, DualPolSymbolSeq, Polarization, RING_TOL};

/// A model is considered precise while its relative error stays at or
/// below this value.
pub const ACCURACY_THRESHOLD: f64 = 0.11;

/// Tolerance for snapping transmitted symbols onto constellation points.
pub const SNAP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PointStats {
    pub point: Complex64,
    pub mu: Complex64,
    pub sigma2: f64,
    pub count: usize,
}

/// Per-point conditional mean and variance of the received symbols, for
/// each polarization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalStats {
    pub x: Vec<PointStats>,
    pub y: Vec<PointStats>,
}

impl ConditionalStats {
    pub fn pol(&self, pol: Polarization) -> &[PointStats] {
        match pol {
            Polarization::X => &self.x,
            Polarization::Y => &self.y,
        }
    }
}

fn pol_stats(a: &[Complex64], r: &[Complex64], constellation: &Constellation) -> Result<Vec<PointStats>> {
    let points = constellation.points();
    let mut sum = vec![Complex64::new(0.0, 0.0); points.len()];
    let mut sum_sq = vec![0.0; points.len()];
    let mut count = vec![0usize; points.len()];
    let mut owner = Vec::with_capacity(a.len());
    for (n, (&an, &rn)) in a.iter().zip(r).enumerate() {
        let i = constellation.nearest(an);
        if (points[i] - an).norm() > SNAP_TOL {
            return Err(Error::config(format!("symbol {n} ({an}) is not a constellation point")));
        }
        // Deviations from the point keep r = a exact and reduce roundoff.
        sum[i] += rn - points[i];
        count[i] += 1;
        owner.push(i);
    }
    let mu: Vec<Complex64> = sum
        .iter()
        .zip(&count)
        .zip(points)
        .map(|((s, &c), p)| if c > 0 { p + s / c as f64 } else { Complex64::new(0.0, 0.0) })
        .collect();
    for (&i, rn) in owner.iter().zip(r) {
        sum_sq[i] += (rn - mu[i]).norm_sqr();
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, &point)| {
            if count[i] == 0 {
                log::warn!("constellation point {point} never transmitted; excluded from averages");
            }
            PointStats {
                point,
                mu: mu[i],
                sigma2: if count[i] > 0 { sum_sq[i] / count[i] as f64 } else { 0.0 },
                count: count[i],
            }
        })
        .collect())
}

pub fn conditional_stats(
    a: &DualPolSymbolSeq,
    r: &DualPolSymbolSeq,
    constellation: &Constellation,
) -> Result<ConditionalStats> {
    if a.len() != r.len() {
        return Err(Error::Dimension {
            what: "received sequence length",
            expected: a.len(),
            got: r.len(),
        });
    }
    Ok(ConditionalStats {
        x: pol_stats(&a.x, &r.x, constellation)?,
        y: pol_stats(&a.y, &r.y, constellation)?,
    })
}

/// Occurrence-weighted average of `f` over transmitted points.
fn weighted(stats: &[PointStats], f: impl Fn(&PointStats) -> f64) -> f64 {
    let total: usize = stats.iter().map(|s| s.count).sum();
    if total == 0 {
        return f64::NAN;
    }
    stats.iter().filter(|s| s.count > 0).map(|s| s.count as f64 * f(s)).sum::<f64>() / total as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Snr {
    Db(f64),
    /// Every conditional variance is zero.
    Noiseless,
}

impl Snr {
    pub fn db(self) -> f64 {
        match self {
            Snr::Db(v) => v,
            Snr::Noiseless => f64::INFINITY,
        }
    }
}

/// Mean of the per-polarization ratios `E|mu|^2 / E sigma^2`, in dB.
pub fn snr(stats: &ConditionalStats) -> Snr {
    let mut ratios = Vec::with_capacity(2);
    for pol in [&stats.x, &stats.y] {
        let signal = weighted(pol, |s| s.mu.norm_sqr());
        let noise = weighted(pol, |s| s.sigma2);
        if noise == 0.0 {
            return Snr::Noiseless;
        }
        ratios.push(signal / noise);
    }
    Snr::Db(10.0 * (0.5 * (ratios[0] + ratios[1])).log10())
}

/// Mean normalized radius change `(|mu| - |s|) / |s|`.
pub fn delta_r(stats: &ConditionalStats) -> f64 {
    let per = |pol: &[PointStats]| weighted(pol, |s| (s.mu.norm() - s.point.norm()) / s.point.norm());
    0.5 * (per(&stats.x) + per(&stats.y))
}

/// Constellation rings and, per point, the smallest phase step to another
/// point of the same ring.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RingStructure {
    /// Point indices grouped by radius, innermost first.
    pub rings: Vec<Vec<usize>>,
    pub radii: Vec<f64>,
    /// Per point, in radians.
    pub phi: Vec<f64>,
}

/// Angle wrapped to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

impl RingStructure {
    pub fn new(constellation: &Constellation) -> Self {
        let points = constellation.points();
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| points[i].norm().total_cmp(&points[j].norm()));
        let mut rings: Vec<Vec<usize>> = Vec::new();
        let mut radii: Vec<f64> = Vec::new();
        for i in order {
            let r = points[i].norm();
            match radii.last() {
                Some(&last) if (r - last).abs() <= RING_TOL => rings.last_mut().expect("ring exists").push(i),
                _ => {
                    radii.push(r);
                    rings.push(vec![i]);
                }
            }
        }
        let mut phi = vec![f64::INFINITY; points.len()];
        for ring in &rings {
            for &i in ring {
                for &j in ring.iter().filter(|&&j| j != i) {
                    let gap = wrap_angle(points[j].arg() - points[i].arg()).abs();
                    phi[i] = phi[i].min(gap);
                }
            }
        }
        Self { rings, radii, phi }
    }
}

fn phase_offsets(pol: &[PointStats], rings: &RingStructure, normalize: bool) -> f64 {
    let indexed: Vec<(usize, &PointStats)> = pol.iter().enumerate().collect();
    let total: usize = pol.iter().map(|s| s.count).sum();
    if total == 0 {
        return f64::NAN;
    }
    indexed
        .iter()
        .filter(|(_, s)| s.count > 0)
        .map(|(i, s)| {
            let d = wrap_angle(s.mu.arg() - s.point.arg());
            let d = if normalize { d / rings.phi[*i] } else { d };
            s.count as f64 * d
        })
        .sum::<f64>()
        / total as f64
}

/// Mean phase rotation of the conditional means, normalized per point by
/// its ring's phase step.
pub fn delta_phi(stats: &ConditionalStats, rings: &RingStructure) -> f64 {
    0.5 * (phase_offsets(&stats.x, rings, true) + phase_offsets(&stats.y, rings, true))
}

/// Mean phase rotation of the conditional means in radians, unnormalized.
pub fn mean_phase_rotation(stats: &ConditionalStats, rings: &RingStructure) -> f64 {
    0.5 * (phase_offsets(&stats.x, rings, false) + phase_offsets(&stats.y, rings, false))
}

/// Root of the polarization-averaged normalized squared error of a model
/// output against the reference.
pub fn relative_error(reference: &DualPolSymbolSeq, model: &DualPolSymbolSeq) -> Result<f64> {
    if reference.len() != model.len() {
        return Err(Error::Dimension {
            what: "model sequence length",
            expected: reference.len(),
            got: model.len(),
        });
    }
    let mut acc = 0.0;
    for pol in [Polarization::X, Polarization::Y] {
        let r = reference.pol(pol);
        let m = model.pol(pol);
        let energy: f64 = r.iter().map(|v| v.norm_sqr()).sum();
        if energy == 0.0 {
            return Err(Error::Numerical(format!("{pol:?} reference has zero energy")));
        }
        let err: f64 = r.iter().zip(m).map(|(a, b)| (a - b).norm_sqr()).sum();
        acc += err / energy;
    }
    Ok((0.5 * acc).sqrt())
}

/// All conditional-statistics metrics of one received sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub snr: Snr,
    pub delta_r: f64,
    pub delta_phi: f64,
    pub mean_phase_rad: f64,
}

pub fn summarize(a: &DualPolSymbolSeq, r: &DualPolSymbolSeq, constellation: &Constellation) -> Result<Summary> {
    let stats = conditional_stats(a, r, constellation)?;
    let rings = RingStructure::new(constellation);
    Ok(Summary {
        snr: snr(&stats),
        delta_r: delta_r(&stats),
        delta_phi: delta_phi(&stats, &rings),
        mean_phase_rad: mean_phase_rotation(&stats, &rings),
    })
}
