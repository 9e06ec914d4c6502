//! End-to-end pipelines: split-step reference data, analytical and
//! optimized kernels, and model evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, ExperimentConfig};
use crate::error::{Error, Result};
use crate::frp::{nonlinear_coefficient, predict_sequence};
use crate::kernels::{compute_certified_tensor, kernel_count, IntegrationGrid, KernelTensor};
use crate::metrics::{conditional_stats, relative_error, summarize};
use crate::nbgd::{self, Report, SequenceSource};
use crate::signal::{modulate, DualPolSymbolSeq};
use crate::ssfm::{add_ase, cdc, propagate, receive, SampledField};

/// Transmitted symbols and the split-step received symbols at one power.
#[derive(Clone, Debug, PartialEq)]
pub struct Transmission {
    pub power_dbm: f64,
    pub symbol_energy: f64,
    pub tx: DualPolSymbolSeq,
    pub rx: DualPolSymbolSeq,
}

/// Symbols for the configured frame. The same frame is used at every
/// power, so power trends are not masked by pattern changes.
pub fn transmitted_symbols(config: &ExperimentConfig) -> Result<DualPolSymbolSeq> {
    let constellation = config.constellation()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "symbols"));
    Ok(DualPolSymbolSeq::random(&constellation, config.signal.n_symbols, &mut rng))
}

/// Launch, propagation, receiver ASE and dispersion compensation; returns
/// the compensated field before the matched filter.
pub fn simulate_field(config: &ExperimentConfig, tx: &DualPolSymbolSeq, power_dbm: f64) -> Result<SampledField> {
    let pulse = config.pulse()?;
    let fiber = config.fiber_params()?;
    let power = config.link_power(power_dbm);
    let launched = modulate(tx, &pulse, &power)?;
    let propagated = propagate(&launched, &fiber, config.fiber.step_m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("ase/{power_dbm}")));
    let noisy = add_ase(&propagated, &config.ase_config(), &fiber, &mut rng)?;
    cdc(&noisy, &fiber)
}

pub fn simulate_with(config: &ExperimentConfig, tx: &DualPolSymbolSeq, power_dbm: f64) -> Result<Transmission> {
    let pulse = config.pulse()?;
    let power = config.link_power(power_dbm);
    let field = simulate_field(config, tx, power_dbm)?;
    let rx = receive(&field, &pulse, &power)?;
    Ok(Transmission {
        power_dbm,
        symbol_energy: power.symbol_energy(),
        tx: tx.clone(),
        rx,
    })
}

/// The full chain at one power for the configured frame.
pub fn simulate(config: &ExperimentConfig, power_dbm: f64) -> Result<Transmission> {
    config.validate()?;
    simulate_with(config, &transmitted_symbols(config)?, power_dbm)
}

pub fn kernel_grid(config: &ExperimentConfig) -> Result<IntegrationGrid> {
    IntegrationGrid::for_link(&config.pulse()?, &config.fiber_params()?, config.kernels.n_z)
}

/// Analytical kernels with their convergence certificate.
pub fn analytical_kernels(config: &ExperimentConfig, memory: usize) -> Result<KernelTensor> {
    let pulse = config.pulse()?;
    let fiber = config.fiber_params()?;
    let tensor = compute_certified_tensor(memory, &pulse, &fiber, &kernel_grid(config)?)?;
    let cert = tensor.provenance.convergence.unwrap_or(f64::NAN);
    if cert > 1e-3 {
        log::warn!("kernel grid certificate {cert:.2e} exceeds 1e-3; consider a larger kernels.n_z");
    }
    Ok(tensor)
}

/// NBGD kernels trained on a transmission.
pub fn optimized_kernels(
    config: &ExperimentConfig,
    data: &Transmission,
    memory: usize,
) -> Result<(KernelTensor, Report)> {
    let fiber = config.fiber_params()?;
    let seed = derive_seed(config.seed, &format!("optimizer/{}/{memory}", data.power_dbm));
    let coefficient = nonlinear_coefficient(fiber.gamma, data.symbol_energy);
    let mut source = SequenceSource::new(
        data.tx.clone(),
        data.rx.clone(),
        memory,
        &config.optimizer,
        coefficient,
        seed,
    )?;
    let (mut tensor, report) = nbgd::run(&mut source, &config.optimizer, None)?;
    tensor.provenance.power_dbm = Some(data.power_dbm);
    tensor.provenance.seed = Some(seed);
    Ok((tensor, report))
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub config_hash: String,
    pub seed: u64,
    pub constellation: String,
    pub power_dbm: f64,
    /// Empty for the split-step reference rows.
    pub memory: Option<usize>,
    pub source: String,
    pub snr_db: f64,
    pub delta_r: f64,
    pub delta_phi: f64,
    pub mean_phase_deg: f64,
    pub epsilon: f64,
    pub kernel_count: usize,
    pub mults_per_symbol: usize,
}

fn row(
    config: &ExperimentConfig,
    data: &Transmission,
    received: &DualPolSymbolSeq,
    memory: Option<usize>,
    source: &str,
) -> Result<EvaluationRow> {
    let constellation = config.constellation()?;
    let summary = summarize(&data.tx, received, &constellation)?;
    let kernels = memory.map_or(0, kernel_count);
    Ok(EvaluationRow {
        config_hash: config.hash()?,
        seed: config.seed,
        constellation: constellation.label().to_string(),
        power_dbm: data.power_dbm,
        memory,
        source: source.to_string(),
        snr_db: summary.snr.db(),
        delta_r: summary.delta_r,
        delta_phi: summary.delta_phi,
        mean_phase_deg: summary.mean_phase_rad.to_degrees(),
        epsilon: relative_error(&data.rx, received)?,
        kernel_count: kernels,
        mults_per_symbol: kernels,
    })
}

/// Metrics and conditional statistics of the split-step output itself.
pub fn evaluate_reference(config: &ExperimentConfig, data: &Transmission) -> Result<(EvaluationRow, Vec<MeanRow>)> {
    Ok((
        row(config, data, &data.rx, None, "ssfm")?,
        mean_rows(config, data, &data.rx, None, "ssfm")?,
    ))
}

/// Model output of `kernels` on the transmission.
pub fn model_output(config: &ExperimentConfig, data: &Transmission, kernels: &KernelTensor) -> Result<DualPolSymbolSeq> {
    let fiber = config.fiber_params()?;
    predict_sequence(&data.tx, kernels, fiber.gamma, data.symbol_energy)
}

/// Metrics of the model output against the split-step reference, plus its
/// conditional statistics.
pub fn evaluate_kernels(
    config: &ExperimentConfig,
    data: &Transmission,
    kernels: &KernelTensor,
    expected_memory: Option<usize>,
) -> Result<(EvaluationRow, Vec<MeanRow>)> {
    if let Some(m) = expected_memory {
        if m != kernels.memory() {
            return Err(Error::Dimension {
                what: "kernel memory",
                expected: m,
                got: kernels.memory(),
            });
        }
    }
    let predicted = model_output(config, data, kernels)?;
    let source = kernels.provenance.source.as_str();
    let memory = Some(kernels.memory());
    Ok((
        row(config, data, &predicted, memory, source)?,
        mean_rows(config, data, &predicted, memory, source)?,
    ))
}

/// Conditional mean and variance of one constellation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub config_hash: String,
    pub seed: u64,
    pub power_dbm: f64,
    pub memory: Option<usize>,
    pub source: String,
    pub pol: String,
    pub point_re: f64,
    pub point_im: f64,
    pub mu_re: f64,
    pub mu_im: f64,
    pub sigma2: f64,
    pub count: usize,
}

/// Per-point conditional statistics of `received` given the transmitted
/// frame, for both polarizations.
pub fn mean_rows(
    config: &ExperimentConfig,
    data: &Transmission,
    received: &DualPolSymbolSeq,
    memory: Option<usize>,
    source: &str,
) -> Result<Vec<MeanRow>> {
    let stats = conditional_stats(&data.tx, received, &config.constellation()?)?;
    let hash = config.hash()?;
    let mut rows = Vec::new();
    for (pol, points) in [("x", &stats.x), ("y", &stats.y)] {
        for p in points.iter() {
            rows.push(MeanRow {
                config_hash: hash.clone(),
                seed: config.seed,
                power_dbm: data.power_dbm,
                memory,
                source: source.to_string(),
                pol: pol.to_string(),
                point_re: p.point.re,
                point_im: p.point.im,
                mu_re: p.mu.re,
                mu_im: p.mu.im,
                sigma2: p.sigma2,
                count: p.count,
            });
        }
    }
    Ok(rows)
}

/// Row-per-symbol dump of a transmission.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolRow {
    pub config_hash: String,
    pub seed: u64,
    pub power_dbm: f64,
    pub index: usize,
    pub a_x_re: f64,
    pub a_x_im: f64,
    pub a_y_re: f64,
    pub a_y_im: f64,
    pub r_x_re: f64,
    pub r_x_im: f64,
    pub r_y_re: f64,
    pub r_y_im: f64,
}

pub fn symbol_rows(config: &ExperimentConfig, data: &Transmission) -> Result<Vec<SymbolRow>> {
    let hash = config.hash()?;
    Ok((0..data.tx.len())
        .map(|n| SymbolRow {
            config_hash: hash.clone(),
            seed: config.seed,
            power_dbm: data.power_dbm,
            index: n,
            a_x_re: data.tx.x[n].re,
            a_x_im: data.tx.x[n].im,
            a_y_re: data.tx.y[n].re,
            a_y_im: data.tx.y[n].im,
            r_x_re: data.rx.x[n].re,
            r_x_im: data.rx.x[n].im,
            r_y_re: data.rx.y[n].re,
            r_y_im: data.rx.y[n].im,
        })
        .collect())
}

/// One kernel of a tensor, for inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub config_hash: String,
    pub seed: u64,
    pub source: String,
    /// Training power of optimized kernels; empty for analytical ones.
    pub power_dbm: Option<f64>,
    pub memory: usize,
    pub k: i64,
    pub l: i64,
    pub m: i64,
    pub re: f64,
    pub im: f64,
    pub abs: f64,
}

pub fn kernel_rows(config: &ExperimentConfig, kernels: &KernelTensor) -> Result<Vec<KernelRow>> {
    let hash = config.hash()?;
    Ok(kernels
        .indices()
        .zip(kernels.values())
        .map(|((k, l, m), v)| KernelRow {
            config_hash: hash.clone(),
            seed: config.seed,
            source: kernels.provenance.source.as_str().to_string(),
            power_dbm: kernels.provenance.power_dbm,
            memory: kernels.memory(),
            k,
            l,
            m,
            re: v.re,
            im: v.im,
            abs: v.norm(),
        })
        .collect())
}
