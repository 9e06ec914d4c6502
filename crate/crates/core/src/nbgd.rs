//! Normalized batch gradient descent for FRP kernels.
//!
//! The optimizer works on dimensionless kernels `u = c S` with
//! `c = (8/9) gamma E_s`, so that the batch model reads `r_hat = a + j T u`
//! and the step size is independent of the physical kernel units. Every
//! component moves by exactly `alpha` per step along `j g_i / |g_i|` with
//! `g = T^H (r_hat - r)`.

use std::time::Instant;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frp::{predict_sequence, TripletBatch};
use crate::kernels::{kernel_count, KernelSource, KernelTensor, Provenance};
use crate::signal::{Constellation, DualPolSymbolSeq, Polarization};

const J: Complex64 = Complex64::new(0.0, 1.0);
/// Gradient components below this modulus receive no update.
pub const ZERO_GRADIENT_GUARD: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceCriterion {
    /// `|MSE(l) - MSE(l-1)| < factor * alpha`.
    MseDifference,
    /// Net kernel displacement over the last schedule period, in scaled
    /// units, below `factor * alpha`. Single steps always move by `alpha`,
    /// so only the net drift is informative.
    ParameterDistance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Initial step in scaled kernel units; `None` picks the median
    /// gradient component modulus of the first step.
    pub alpha0: Option<f64>,
    pub schedule_decay: f64,
    pub schedule_period: usize,
    pub mse_threshold_factor: f64,
    pub max_iterations: usize,
    pub validation_factor: f64,
    pub validation_retries: usize,
    pub alpha_retry_shrink: f64,
    pub batch_size: usize,
    pub criterion: ConvergenceCriterion,
    pub polarization: Polarization,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha0: None,
            schedule_decay: 0.9,
            schedule_period: 15,
            mse_threshold_factor: 0.1,
            max_iterations: 100_000,
            validation_factor: 10.0,
            validation_retries: 5,
            alpha_retry_shrink: 0.75,
            batch_size: 4096,
            criterion: ConvergenceCriterion::MseDifference,
            polarization: Polarization::X,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("schedule_decay", self.schedule_decay),
            ("mse_threshold_factor", self.mse_threshold_factor),
            ("validation_factor", self.validation_factor),
            ("alpha_retry_shrink", self.alpha_retry_shrink),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("optimizer {name} must be positive, got {v}")));
            }
        }
        if self.schedule_decay >= 1.0 || self.alpha_retry_shrink >= 1.0 {
            return Err(Error::config("optimizer decay factors must lie in (0, 1)"));
        }
        if let Some(a) = self.alpha0 {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::config(format!("optimizer alpha0 must be positive, got {a}")));
            }
        }
        if self.schedule_period == 0 || self.max_iterations == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "optimizer schedule_period, max_iterations and batch_size must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Converged,
    Validated,
    Failed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    /// Scaled kernels `c S`.
    pub s_hat: Vec<Complex64>,
    pub iteration: usize,
    pub alpha: f64,
    pub mse_trace: Vec<f64>,
    pub status: Status,
    r_hat: Vec<Complex64>,
}

impl OptimizerState {
    /// Starts from `s_hat` and records its batch MSE.
    pub fn new(batch: &TripletBatch, s_hat: Vec<Complex64>, alpha: f64) -> Result<Self> {
        let r_hat = model_output(batch, &s_hat)?;
        let start = mse(&r_hat, batch.outputs())?;
        Ok(Self {
            s_hat,
            iteration: 0,
            alpha,
            mse_trace: vec![start],
            status: Status::Running,
            r_hat,
        })
    }

    pub fn r_hat(&self) -> &[Complex64] {
        &self.r_hat
    }

    pub fn last_mse(&self) -> f64 {
        *self.mse_trace.last().expect("trace starts non-empty")
    }
}

/// `a + j T u` with scaled kernels `u`.
pub fn model_output(batch: &TripletBatch, scaled: &[Complex64]) -> Result<Vec<Complex64>> {
    let ts = batch.matvec(scaled)?;
    Ok(batch.inputs().iter().zip(ts).map(|(a, t)| a + J * t).collect())
}

/// `||r_hat - r||^2 / (2B)`.
pub fn mse(r_hat: &[Complex64], r: &[Complex64]) -> Result<f64> {
    if r_hat.len() != r.len() {
        return Err(Error::Dimension {
            what: "MSE operand length",
            expected: r.len(),
            got: r_hat.len(),
        });
    }
    if r.is_empty() {
        return Err(Error::config("MSE of an empty batch"));
    }
    let sum: f64 = r_hat.iter().zip(r).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(sum / (2.0 * r.len() as f64))
}

/// Gradient of the batch MSE with respect to the conjugate kernels,
/// factored as `-eta g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    /// `T^H (r_hat - r)`.
    pub g: Vec<Complex64>,
    /// `j c / B`, where `c` is the kernel scale of the model.
    pub eta: Complex64,
}

impl Gradient {
    /// `2 dMSE/dS*`.
    pub fn full(&self) -> Vec<Complex64> {
        self.g.iter().map(|g| -self.eta * g).collect()
    }
}

/// Wirtinger gradient for the model `r_hat = a + j coefficient T S`.
pub fn wirtinger_gradient(batch: &TripletBatch, r_hat: &[Complex64], coefficient: f64) -> Result<Gradient> {
    if r_hat.len() != batch.rows() {
        return Err(Error::Dimension {
            what: "prediction length",
            expected: batch.rows(),
            got: r_hat.len(),
        });
    }
    let residual: Vec<Complex64> = r_hat.iter().zip(batch.outputs()).map(|(a, b)| a - b).collect();
    Ok(Gradient {
        g: batch.adjoint_matvec(&residual)?,
        eta: J * coefficient / batch.rows() as f64,
    })
}

/// `j alpha g_i / |g_i|`, zero where `|g_i|` is below the guard.
pub fn normalized_direction(g: &[Complex64], alpha: f64) -> Vec<Complex64> {
    g.iter()
        .map(|gi| {
            let n = gi.norm();
            if n < ZERO_GRADIENT_GUARD {
                Complex64::new(0.0, 0.0)
            } else {
                J * alpha * (gi / n)
            }
        })
        .collect()
}

/// One descent step on scaled kernels.
pub fn nbgd_step(mut state: OptimizerState, batch: &TripletBatch, config: &OptimizerConfig) -> Result<OptimizerState> {
    if state.status != Status::Running {
        return Err(Error::config("optimizer step requires a running state"));
    }
    let grad = wirtinger_gradient(batch, &state.r_hat, 1.0)?;
    if grad.g.iter().all(|g| g.norm() < ZERO_GRADIENT_GUARD) {
        state.status = Status::Converged;
        return Ok(state);
    }
    for (s, d) in state.s_hat.iter_mut().zip(normalized_direction(&grad.g, state.alpha)) {
        *s += d;
    }
    state.iteration += 1;
    state.r_hat = model_output(batch, &state.s_hat)?;
    state.mse_trace.push(mse(&state.r_hat, batch.outputs())?);
    if state.iteration % config.schedule_period == 0 {
        state.alpha *= config.schedule_decay;
    }
    Ok(state)
}

/// Supplies training and validation batches for one power and memory.
pub trait BatchSource {
    fn memory(&self) -> usize;
    /// `(8/9) gamma E_s`, relating physical and scaled kernels.
    fn coefficient(&self) -> f64;
    fn training_batch(&mut self) -> Result<TripletBatch>;
    /// A batch disjoint from training; `attempt` counts validations.
    fn validation_batch(&mut self, attempt: usize) -> Result<TripletBatch>;
}

/// Batches drawn from one transmitted/received frame: training rows from
/// the first half, validation rows from the second.
pub struct SequenceSource {
    tx: DualPolSymbolSeq,
    rx: DualPolSymbolSeq,
    memory: usize,
    pol: Polarization,
    batch_size: usize,
    coefficient: f64,
    rng: ChaCha8Rng,
}

impl SequenceSource {
    pub fn new(
        tx: DualPolSymbolSeq,
        rx: DualPolSymbolSeq,
        memory: usize,
        config: &OptimizerConfig,
        coefficient: f64,
        seed: u64,
    ) -> Result<Self> {
        if tx.len() != rx.len() {
            return Err(Error::Dimension {
                what: "received sequence length",
                expected: tx.len(),
                got: rx.len(),
            });
        }
        if tx.len() < 2 {
            return Err(Error::config("training frame needs at least two symbols"));
        }
        Ok(Self {
            tx,
            rx,
            memory,
            pol: config.polarization,
            batch_size: config.batch_size,
            coefficient,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Noiseless data generated by the FRP model itself from `kernels`.
    pub fn synthetic(
        constellation: &Constellation,
        kernels: &KernelTensor,
        coefficient: f64,
        frame_len: usize,
        config: &OptimizerConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tx = DualPolSymbolSeq::random(constellation, frame_len, &mut rng);
        // predict_sequence applies (8/9) gamma E_s; gamma = 9/8 and E_s = c
        // give exactly c.
        let rx = predict_sequence(&tx, kernels, 9.0 / 8.0, coefficient)?;
        Self::new(tx, rx, kernels.memory(), config, coefficient, seed ^ 0x5eed)
    }

    fn draw(&mut self, offset: usize, span: usize) -> Result<TripletBatch> {
        let count = self.batch_size.min(span);
        let mut centers: Vec<usize> = sample(&mut self.rng, span, count).into_iter().map(|i| i + offset).collect();
        centers.sort_unstable();
        TripletBatch::from_sequences(&self.tx, &self.rx, &centers, self.memory, self.pol)
    }
}

impl BatchSource for SequenceSource {
    fn memory(&self) -> usize {
        self.memory
    }

    fn coefficient(&self) -> f64 {
        self.coefficient
    }

    fn training_batch(&mut self) -> Result<TripletBatch> {
        let half = self.tx.len() / 2;
        self.draw(0, half)
    }

    fn validation_batch(&mut self, _attempt: usize) -> Result<TripletBatch> {
        let half = self.tx.len() / 2;
        self.draw(half, self.tx.len() - half)
    }
}

/// Outcome summary, serialized next to optimized kernel files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: OptimizerConfig,
    pub memory: usize,
    pub kernel_count: usize,
    pub batch_rows: usize,
    pub coefficient: f64,
    /// Gradient scale `j c / B` (magnitude), which normalization removes.
    pub eta_magnitude: f64,
    pub alpha0: f64,
    pub final_alpha: f64,
    pub iterations: usize,
    pub attempt_iterations: Vec<usize>,
    pub final_mse: f64,
    pub validation_mse: Vec<f64>,
    pub status: Status,
    pub wall_time_s: f64,
    pub mse_trace: Vec<f64>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

fn converged(state: &OptimizerState, prev_mse: f64, history: &[Vec<Complex64>], config: &OptimizerConfig) -> bool {
    let threshold = config.mse_threshold_factor * state.alpha;
    match config.criterion {
        ConvergenceCriterion::MseDifference => (state.last_mse() - prev_mse).abs() < threshold,
        ConvergenceCriterion::ParameterDistance => {
            if history.len() <= config.schedule_period {
                return false;
            }
            let old = &history[history.len() - 1 - config.schedule_period];
            let d: f64 = state.s_hat.iter().zip(old).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            d < threshold
        }
    }
}

/// Runs descent to convergence and validates, retrying with a smaller step
/// from the converged point when validation fails.
pub fn run(
    source: &mut dyn BatchSource,
    config: &OptimizerConfig,
    kernels_init: Option<&KernelTensor>,
) -> Result<(KernelTensor, Report)> {
    config.validate()?;
    let started = Instant::now();
    let memory = source.memory();
    let c = source.coefficient();
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::config(format!("kernel scale must be positive, got {c}")));
    }
    let init: Vec<Complex64> = match kernels_init {
        Some(t) if t.memory() != memory => {
            return Err(Error::Dimension {
                what: "initial kernel memory",
                expected: memory,
                got: t.memory(),
            })
        }
        Some(t) => t.values().iter().map(|v| v * c).collect(),
        None => vec![Complex64::new(0.0, 0.0); kernel_count(memory)],
    };
    let batch = source.training_batch()?;
    let first = OptimizerState::new(&batch, init.clone(), 1.0)?;
    let mut alpha0 = match config.alpha0 {
        Some(a) => a,
        None => {
            let grad = wirtinger_gradient(&batch, first.r_hat(), 1.0)?;
            let mut mags: Vec<f64> = grad.g.iter().map(|g| g.norm()).collect();
            mags.sort_by(f64::total_cmp);
            mags[mags.len() / 2] / batch.rows() as f64
        }
    };

    let mut start = init;
    let mut trace = Vec::new();
    let mut attempt_iterations = Vec::new();
    let mut validation_mse = Vec::new();
    let mut final_alpha = alpha0;
    let mut final_mse;
    let mut status = Status::Failed;
    let mut solution = start.clone();
    let initial_alpha0 = alpha0;

    for attempt in 0..config.validation_retries {
        let mut state = OptimizerState::new(&batch, start.clone(), alpha0)?;
        let mut history = vec![state.s_hat.clone()];
        if alpha0 > 0.0 {
            while state.iteration < config.max_iterations {
                let prev = state.last_mse();
                state = nbgd_step(state, &batch, config)?;
                if state.status == Status::Converged {
                    break;
                }
                if config.criterion == ConvergenceCriterion::ParameterDistance {
                    history.push(state.s_hat.clone());
                    if history.len() > config.schedule_period + 1 {
                        history.remove(0);
                    }
                }
                if !state.last_mse().is_finite() {
                    return Err(Error::Numerical("optimizer MSE became non-finite".into()));
                }
                if converged(&state, prev, &history, config) {
                    break;
                }
            }
        }
        trace.extend_from_slice(&state.mse_trace);
        attempt_iterations.push(state.iteration);
        final_alpha = state.alpha;
        final_mse = state.last_mse();
        solution = state.s_hat.clone();

        let validation = source.validation_batch(attempt)?;
        let val = mse(&model_output(&validation, &state.s_hat)?, validation.outputs())?;
        validation_mse.push(val);
        log::info!(
            "attempt {attempt}: {} iterations, mse {final_mse:.4e}, validation {val:.4e}",
            state.iteration
        );
        if val <= config.validation_factor * final_mse || val == 0.0 {
            status = Status::Validated;
            break;
        }
        alpha0 *= config.alpha_retry_shrink;
        start = state.s_hat;
    }

    let report = Report {
        config: config.clone(),
        memory,
        kernel_count: kernel_count(memory),
        batch_rows: batch.rows(),
        coefficient: c,
        eta_magnitude: c / batch.rows() as f64,
        alpha0: initial_alpha0,
        final_alpha,
        iterations: attempt_iterations.iter().sum(),
        attempt_iterations,
        final_mse: *trace.last().unwrap_or(&f64::NAN),
        validation_mse,
        status,
        wall_time_s: started.elapsed().as_secs_f64(),
        mse_trace: trace,
    };
    if status != Status::Validated {
        return Err(Error::OptimizerFailed(format!(
            "validation failed {} times; validation MSEs {:?}, final training MSE {:.4e}",
            config.validation_retries, report.validation_mse, report.final_mse
        )));
    }
    let values = solution.iter().map(|u| u / c).collect();
    let tensor = KernelTensor::new(memory, values)?.with_provenance(Provenance {
        source: KernelSource::Nbgd,
        ..Provenance::default()
    });
    Ok((tensor, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::make_constellation;
    use rand_distr::{Distribution, StandardNormal};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_tensor(memory: usize, scale: f64, seed: u64) -> KernelTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..kernel_count(memory))
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                c(re, im) * scale
            })
            .collect();
        KernelTensor::new(memory, values).unwrap()
    }

    fn batch(memory: usize, rows: usize, seed: u64) -> TripletBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cons = make_constellation("16QAM").unwrap();
        let tx = DualPolSymbolSeq::random(&cons, rows, &mut rng);
        let rx = DualPolSymbolSeq::random(&cons, rows, &mut rng);
        let centers: Vec<usize> = (0..rows).collect();
        TripletBatch::from_sequences(&tx, &rx, &centers, memory, Polarization::X).unwrap()
    }

    #[test]
    fn mse_definition() {
        assert_eq!(mse(&[c(1.0, 2.0)], &[c(1.0, 2.0)]).unwrap(), 0.0);
        assert_eq!(mse(&[c(1.0, 0.0)], &[c(0.0, 0.0)]).unwrap(), 0.5);
        let a = [c(0.3, -1.0), c(2.0, 0.5), c(-0.1, 0.0)];
        let b = [c(0.0, 0.0), c(1.0, 1.0), c(0.4, -0.2)];
        let mut direct = 0.0;
        for i in 0..3 {
            let d = a[i] - b[i];
            direct += d.re * d.re + d.im * d.im;
        }
        assert!((mse(&a, &b).unwrap() - direct / 6.0).abs() < 1e-15);
        assert!(mse(&a, &b[..2]).is_err());
    }

    #[test]
    fn scalar_gradient() {
        let b = TripletBatch::new(vec![c(0.0, 0.0)], vec![c(0.0, 0.0)], vec![c(1.0, 0.0)], 0, Polarization::X).unwrap();
        let g = wirtinger_gradient(&b, &[c(0.0, 1.0)], 1.0).unwrap();
        assert_eq!(g.g, vec![c(0.0, 1.0)]);
        let zero = wirtinger_gradient(&b, &[c(0.0, 0.0)], 1.0).unwrap();
        assert_eq!(zero.g, vec![c(0.0, 0.0)]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = batch(1, 64, 1);
        let s = random_tensor(1, 0.05, 2);
        let coefficient = 0.7;
        let loss = |v: &[Complex64]| {
            let scaled: Vec<Complex64> = v.iter().map(|x| x * coefficient).collect();
            mse(&model_output(&b, &scaled).unwrap(), b.outputs()).unwrap()
        };
        let scaled: Vec<Complex64> = s.values().iter().map(|x| x * coefficient).collect();
        let grad = wirtinger_gradient(&b, &model_output(&b, &scaled).unwrap(), coefficient).unwrap().full();
        let h = 1e-6;
        let scale = grad.iter().map(|g| g.norm()).fold(0.0, f64::max);
        for i in 0..s.len() {
            let mut v = s.values().to_vec();
            v[i] += h;
            let up = loss(&v);
            v[i] -= 2.0 * h;
            let down = loss(&v);
            let mut w = s.values().to_vec();
            w[i] += c(0.0, h);
            let iu = loss(&w);
            w[i] -= c(0.0, 2.0 * h);
            let id = loss(&w);
            let fd = c((up - down) / (2.0 * h), (iu - id) / (2.0 * h));
            assert!((fd - grad[i]).norm() < 1e-6 * scale, "component {i}");
        }
    }

    #[test]
    fn every_component_moves_by_alpha() {
        let b = batch(1, 128, 3);
        let config = OptimizerConfig::default();
        let state = OptimizerState::new(&b, random_tensor(1, 0.05, 4).values().to_vec(), 0.01).unwrap();
        let before = state.s_hat.clone();
        let after = nbgd_step(state, &b, &config).unwrap();
        for (x, y) in before.iter().zip(&after.s_hat) {
            assert!(((x - y).norm() - 0.01).abs() < 1e-12);
        }
        assert_eq!(after.iteration, 1);
        assert_eq!(after.mse_trace.len(), 2);
    }

    #[test]
    fn exact_fit_is_flagged_converged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tx = DualPolSymbolSeq::random(&make_constellation("QPSK").unwrap(), 32, &mut rng);
        let centers: Vec<usize> = (0..32).collect();
        let b = TripletBatch::from_sequences(&tx, &tx, &centers, 1, Polarization::X).unwrap();
        let state = OptimizerState::new(&b, vec![c(0.0, 0.0); 27], 0.1).unwrap();
        let after = nbgd_step(state, &b, &OptimizerConfig::default()).unwrap();
        assert_eq!(after.status, Status::Converged);
        assert!(after.s_hat.iter().all(|s| s.norm() == 0.0));
        assert!(normalized_direction(&[c(0.0, 0.0), c(2.0, 0.0)], 0.5)
            .iter()
            .zip([c(0.0, 0.0), c(0.0, 0.5)])
            .all(|(a, b)| *a == b));
    }

    #[test]
    fn schedule_decays_on_period_multiples() {
        let b = batch(0, 64, 6);
        let config = OptimizerConfig::default();
        let mut state = OptimizerState::new(&b, vec![c(0.0, 0.0)], 1e-3).unwrap();
        for l in 1..=30 {
            state = nbgd_step(state, &b, &config).unwrap();
            let decays = l / 15;
            assert!((state.alpha - 1e-3 * 0.9f64.powi(decays as i32)).abs() < 1e-18, "l = {l}");
        }
    }

    #[test]
    fn direction_ignores_positive_residual_scale() {
        let b = batch(1, 64, 7);
        let r_hat: Vec<Complex64> = b.outputs().iter().map(|r| r * c(1.3, 0.2)).collect();
        let g1 = wirtinger_gradient(&b, &r_hat, 1.0).unwrap().g;
        let g2: Vec<Complex64> = g1.iter().map(|g| g * 37.5).collect();
        let d1 = normalized_direction(&g1, 0.01);
        let d2 = normalized_direction(&g2, 0.01);
        for (a, b) in d1.iter().zip(&d2) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn normalized_step_equals_generic_normalized_descent() {
        // -alpha grad / |grad| with grad = -eta g and eta = j kappa, kappa > 0.
        let b = batch(1, 64, 8);
        let r_hat: Vec<Complex64> = b.inputs().to_vec();
        let grad = wirtinger_gradient(&b, &r_hat, 0.37).unwrap();
        let generic: Vec<Complex64> = grad.full().iter().map(|v| -0.02 * v / v.norm()).collect();
        for (a, b) in generic.iter().zip(normalized_direction(&grad.g, 0.02)) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn deterministic_trajectory() {
        let cons = make_constellation("16QAM").unwrap();
        let truth = random_tensor(1, 0.02, 9);
        let config = OptimizerConfig {
            batch_size: 256,
            alpha0: Some(1e-3),
            max_iterations: 10,
            ..OptimizerConfig::default()
        };
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut src = SequenceSource::synthetic(&cons, &truth, 1.0, 1024, &config, 10).unwrap();
            let b = src.training_batch().unwrap();
            let mut state = OptimizerState::new(&b, vec![c(0.0, 0.0); 27], 1e-3).unwrap();
            for _ in 0..10 {
                state = nbgd_step(state, &b, &config).unwrap();
            }
            runs.push(state.s_hat);
        }
        assert_eq!(runs[0], runs[1]);
    }

    #[test]
    fn recovers_synthetic_kernels() {
        let cons = make_constellation("16QAM").unwrap();
        let truth = random_tensor(1, 0.02, 11);
        let config = OptimizerConfig {
            batch_size: 256,
            ..OptimizerConfig::default()
        };
        let mut src = SequenceSource::synthetic(&cons, &truth, 1.0, 1024, &config, 12).unwrap();
        let (est, report) = run(&mut src, &config, None).unwrap();
        assert_eq!(report.status, Status::Validated);
        assert!(report.iterations < 100_000);
        let err = est
            .values()
            .iter()
            .zip(truth.values())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err <= 10.0 * report.final_alpha, "err {err}, alpha {}", report.final_alpha);
    }

    #[test]
    fn report_echoes_defaults() {
        let json = serde_json::to_string(&OptimizerConfig::default()).unwrap();
        assert!(json.contains("\"schedule_decay\":0.9"));
        assert!(json.contains("\"schedule_period\":15"));
        assert!(json.contains("\"validation_retries\":5"));
        assert!(json.contains("\"alpha_retry_shrink\":0.75"));
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            schedule_decay: 1.5,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            alpha0: Some(-1.0),
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
