//! Resumable power x memory sweep.
//!
//! Output layout under the sweep directory:
//!
//! ```text
//! config.toml                     configuration echo
//! kernels/analytical_m{M}.frpk    analytical tensors (power independent)
//! kernels/nbgd_p{P}_m{M}.frpk     optimized tensors, with .json reports
//! cells/p{P}_ref.csv              split-step reference row
//! cells/p{P}_m{M}.csv             analytical and nbgd rows of one cell
//! cells/*_means.csv               conditional statistics of the same
//! cells/p{P}_m{M}.failed          error text of a failed cell
//! symbols/p{P}.csv                transmitted and received symbols
//! evaluate.csv, means.csv         all completed cells merged
//! ```
//!
//! A cell is complete when its CSV exists; reruns skip complete cells and
//! retry failed ones.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::pipeline::{
    analytical_kernels, evaluate_kernels, evaluate_reference, optimized_kernels, simulate_with, symbol_rows,
    transmitted_symbols, EvaluationRow, MeanRow,
};
use super::{read_csv, write_atomic, write_csv};
use crate::error::{Error, Result};
use crate::kernels::{load_tensor, save_tensor, KernelTensor};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepSummary {
    pub computed: usize,
    pub skipped: usize,
    /// `(power, memory, error)` of cells that failed this run.
    pub failed: Vec<(f64, usize, String)>,
}

/// Paths of one sweep directory.
#[derive(Clone, Debug)]
pub struct SweepLayout {
    root: PathBuf,
}

impl SweepLayout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn analytical(&self, memory: usize) -> PathBuf {
        self.root.join("kernels").join(format!("analytical_m{memory}.frpk"))
    }

    pub fn nbgd(&self, power: f64, memory: usize) -> PathBuf {
        self.root.join("kernels").join(format!("nbgd_p{power}_m{memory}.frpk"))
    }

    pub fn reference(&self, power: f64) -> PathBuf {
        self.root.join("cells").join(format!("p{power}_ref.csv"))
    }

    pub fn cell(&self, power: f64, memory: usize) -> PathBuf {
        self.root.join("cells").join(format!("p{power}_m{memory}.csv"))
    }

    pub fn failure(&self, power: f64, memory: usize) -> PathBuf {
        self.root.join("cells").join(format!("p{power}_m{memory}.failed"))
    }

    pub fn symbols(&self, power: f64) -> PathBuf {
        self.root.join("symbols").join(format!("p{power}.csv"))
    }

    pub fn evaluate(&self) -> PathBuf {
        self.root.join("evaluate.csv")
    }

    pub fn means(&self) -> PathBuf {
        self.root.join("means.csv")
    }
}

fn means_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("cell");
    csv.with_file_name(format!("{stem}_means.csv"))
}

fn cached_analytical(config: &ExperimentConfig, layout: &SweepLayout, memory: usize) -> Result<KernelTensor> {
    let path = layout.analytical(memory);
    if path.exists() {
        return load_tensor(&path);
    }
    let tensor = analytical_kernels(config, memory)?;
    save_tensor(&path, &tensor)?;
    Ok(tensor)
}

fn run_cell(
    config: &ExperimentConfig,
    layout: &SweepLayout,
    data: &super::pipeline::Transmission,
    analytical: &KernelTensor,
    memory: usize,
) -> Result<()> {
    let power = data.power_dbm;
    let (nbgd, report) = optimized_kernels(config, data, memory)?;
    save_tensor(&layout.nbgd(power, memory), &nbgd)?;
    write_atomic(
        &layout.nbgd(power, memory).with_extension("json"),
        report.to_json()?.as_bytes(),
    )?;
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for tensor in [analytical, &nbgd] {
        let (row, m) = evaluate_kernels(config, data, tensor, Some(memory))?;
        rows.push(row);
        means.extend(m);
    }
    let cell = layout.cell(power, memory);
    write_csv(&means_path(&cell), &means)?;
    write_csv(&cell, &rows)
}

/// Runs every missing cell of the configured grid, then merges all
/// completed cells into `evaluate.csv` and `means.csv`.
pub fn sweep(config: &ExperimentConfig, out: &Path) -> Result<SweepSummary> {
    config.validate()?;
    let layout = SweepLayout::new(out);
    fs::create_dir_all(out)?;
    write_atomic(&out.join("config.toml"), config.to_toml()?.as_bytes())?;

    let analytical: Vec<KernelTensor> = config
        .sweep
        .memories
        .iter()
        .map(|&m| cached_analytical(config, &layout, m))
        .collect::<Result<_>>()?;
    let tx = transmitted_symbols(config)?;

    let per_power: Vec<SweepSummary> = config
        .sweep
        .powers_dbm
        .par_iter()
        .map(|&power| {
            let mut summary = SweepSummary::default();
            let pending: Vec<(usize, &KernelTensor)> = config
                .sweep
                .memories
                .iter()
                .copied()
                .zip(&analytical)
                .filter(|(m, _)| !layout.cell(power, *m).exists())
                .collect();
            summary.skipped = config.sweep.memories.len() - pending.len();
            let need_reference = !layout.reference(power).exists() || !layout.symbols(power).exists();
            if pending.is_empty() && !need_reference {
                return summary;
            }
            let data = match simulate_with(config, &tx, power) {
                Ok(d) => d,
                Err(e) => {
                    for (m, _) in pending {
                        let msg = format!("simulation failed: {e}");
                        let _ = write_atomic(&layout.failure(power, m), msg.as_bytes());
                        summary.failed.push((power, m, msg));
                    }
                    return summary;
                }
            };
            if need_reference {
                let written = evaluate_reference(config, &data).and_then(|(row, means)| {
                    write_csv(&layout.symbols(power), &symbol_rows(config, &data)?)?;
                    write_csv(&means_path(&layout.reference(power)), &means)?;
                    write_csv(&layout.reference(power), &[row])
                });
                if let Err(e) = written {
                    log::error!("reference at {power} dBm failed: {e}");
                }
            }
            for (memory, tensor) in pending {
                match run_cell(config, &layout, &data, tensor, memory) {
                    Ok(()) => {
                        let _ = fs::remove_file(layout.failure(power, memory));
                        summary.computed += 1;
                    }
                    Err(e) => {
                        log::error!("cell {power} dBm, M = {memory} failed: {e}");
                        let _ = write_atomic(&layout.failure(power, memory), e.to_string().as_bytes());
                        summary.failed.push((power, memory, e.to_string()));
                    }
                }
            }
            summary
        })
        .collect();

    let mut total = SweepSummary::default();
    for s in per_power {
        total.computed += s.computed;
        total.skipped += s.skipped;
        total.failed.extend(s.failed);
    }
    merge(config, &layout)?;
    Ok(total)
}

/// Concatenates completed cells in grid order.
pub fn merge(config: &ExperimentConfig, layout: &SweepLayout) -> Result<()> {
    let mut rows: Vec<EvaluationRow> = Vec::new();
    let mut means: Vec<MeanRow> = Vec::new();
    for &power in &config.sweep.powers_dbm {
        let mut files = vec![layout.reference(power)];
        files.extend(config.sweep.memories.iter().map(|&m| layout.cell(power, m)));
        for file in files.iter().filter(|f| f.exists()) {
            rows.extend(read_csv::<EvaluationRow>(file)?);
            let m = means_path(file);
            if m.exists() {
                means.extend(read_csv::<MeanRow>(&m)?);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Numerical("sweep produced no completed cells".into()));
    }
    write_csv(&layout.evaluate(), &rows)?;
    write_csv(&layout.means(), &means)
}
