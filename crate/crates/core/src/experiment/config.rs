//! Experiment configuration, read from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nbgd::OptimizerConfig;
use crate::signal::{make_constellation, Constellation, LinkPower, PulseShape};
use crate::ssfm::{AseConfig, FiberParams};

/// Largest memory accepted from configuration; keeps triplet matrices
/// within desk memory.
pub const MAX_MEMORY: usize = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberSection {
    pub alpha_db_per_km: f64,
    pub beta2_ps2_per_km: f64,
    pub gamma_per_w_km: f64,
    pub length_km: f64,
    /// Split-step length in meters.
    pub step_m: f64,
}

impl Default for FiberSection {
    fn default() -> Self {
        Self {
            alpha_db_per_km: 0.2,
            beta2_ps2_per_km: -21.7,
            gamma_per_w_km: 1.2,
            length_km: 120.0,
            step_m: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    pub constellation: String,
    pub symbol_rate_gbaud: f64,
    pub rolloff: f64,
    pub samples_per_symbol: usize,
    /// Pulse half-length in symbols, used for the kernel time window.
    pub pulse_span: usize,
    pub n_symbols: usize,
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            constellation: "16QAM".into(),
            symbol_rate_gbaud: 60.0,
            rolloff: 0.01,
            samples_per_symbol: 4,
            pulse_span: 64,
            n_symbols: 16384,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AseSection {
    pub enabled: bool,
    pub noise_figure_db: f64,
}

impl Default for AseSection {
    fn default() -> Self {
        let ase = AseConfig::default();
        Self {
            enabled: ase.enabled,
            noise_figure_db: ase.noise_figure_db,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub powers_dbm: Vec<f64>,
    pub memories: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            powers_dbm: (-1..=8).map(|i| 2.0 * i as f64).collect(),
            memories: (0..=5).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    /// Number of z samples in the kernel integral.
    pub n_z: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { n_z: 686 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it by label.
    pub seed: u64,
    pub output_dir: String,
    pub fiber: FiberSection,
    pub signal: SignalSection,
    pub ase: AseSection,
    pub sweep: SweepSection,
    pub kernels: KernelSection,
    pub optimizer: OptimizerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: "results".into(),
            fiber: FiberSection::default(),
            signal: SignalSection::default(),
            ase: AseSection::default(),
            sweep: SweepSection::default(),
            kernels: KernelSection::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document; absent keys take defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.fiber_params()?;
        self.pulse()?;
        self.constellation()?;
        let f = &self.fiber;
        if !(f.step_m > 0.0) || !f.step_m.is_finite() {
            return Err(Error::config(format!("fiber.step_m must be positive, got {}", f.step_m)));
        }
        if self.sweep.powers_dbm.is_empty() || self.sweep.memories.is_empty() {
            return Err(Error::config("sweep.powers_dbm and sweep.memories must be nonempty"));
        }
        if let Some(p) = self.sweep.powers_dbm.iter().find(|p| !p.is_finite()) {
            return Err(Error::config(format!("launch power {p} dBm is not finite")));
        }
        let max_memory = *self.sweep.memories.iter().max().expect("nonempty");
        if max_memory > MAX_MEMORY {
            return Err(Error::config(format!("memory {max_memory} exceeds {MAX_MEMORY}")));
        }
        if self.signal.n_symbols < 2 * (2 * max_memory + 1) {
            return Err(Error::config(format!(
                "signal.n_symbols = {} is too short for memory {max_memory}",
                self.signal.n_symbols
            )));
        }
        if self.kernels.n_z < 2 {
            return Err(Error::config("kernels.n_z must be at least 2"));
        }
        if !(self.ase.noise_figure_db.is_finite()) {
            return Err(Error::config("ase.noise_figure_db must be finite"));
        }
        self.optimizer.validate()
    }

    pub fn fiber_params(&self) -> Result<FiberParams> {
        let f = &self.fiber;
        FiberParams::from_engineering(f.alpha_db_per_km, f.beta2_ps2_per_km, f.gamma_per_w_km, f.length_km)
    }

    pub fn symbol_rate(&self) -> f64 {
        self.signal.symbol_rate_gbaud * 1e9
    }

    pub fn pulse(&self) -> Result<PulseShape> {
        let s = &self.signal;
        if !(s.symbol_rate_gbaud > 0.0) || !s.symbol_rate_gbaud.is_finite() {
            return Err(Error::config("signal.symbol_rate_gbaud must be positive"));
        }
        PulseShape::new(s.rolloff, 1.0 / self.symbol_rate(), s.pulse_span, s.samples_per_symbol)
    }

    pub fn constellation(&self) -> Result<Constellation> {
        make_constellation(&self.signal.constellation)
    }

    pub fn link_power(&self, power_dbm: f64) -> LinkPower {
        LinkPower::new(power_dbm, self.symbol_rate())
    }

    pub fn ase_config(&self) -> AseConfig {
        AseConfig {
            enabled: self.ase.enabled,
            noise_figure_db: self.ase.noise_figure_db,
            ..AseConfig::default()
        }
    }

    /// Short stable digest of the canonical TOML form, carried in every
    /// output row. The output directory does not take part.
    pub fn hash(&self) -> Result<String> {
        let canonical = Self {
            output_dir: String::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Independent seed for the random stream named `label`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
