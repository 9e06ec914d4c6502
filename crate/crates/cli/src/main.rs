//! `fiberfrp` command line: split-step simulation, kernel computation,
//! kernel optimization, model evaluation and resumable sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use fiberfrp::error::{Error, Result};
use fiberfrp::experiment::{
    analytical_kernels, evaluate_kernels, evaluate_reference, kernel_rows, optimized_kernels, simulate_field, simulate_with,
    symbol_rows, sweep, transmitted_symbols, write_atomic, write_csv, ExperimentConfig,
};
use fiberfrp::kernels::{load_tensor, save_tensor, KernelTensor};
use fiberfrp::waveform::save_waveform;

/// Exit status when a sweep finishes with some failed cells.
const EXIT_PARTIAL: u8 = 6;

#[derive(Parser, Debug)]
#[command(name = "fiberfrp", version, about = "FRP fiber channel modeling experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Launch power in dBm; repeat to replace the configured sweep.
    #[arg(long, global = true, value_name = "DBM", allow_negative_numbers = true)]
    power: Vec<f64>,
    /// FRP memory; repeat to replace the configured sweep.
    #[arg(long, global = true, value_name = "M")]
    memory: Vec<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the split-step chain and write per-symbol CSV.
    Simulate {
        /// Also dump the dispersion-compensated waveform per power.
        #[arg(long)]
        dump_waveform: bool,
    },
    /// Compute analytical kernel tensors.
    Kernels,
    /// Train NBGD kernels on split-step data generated on the fly.
    Optimize,
    /// Evaluate kernel files against split-step data.
    Evaluate {
        /// Kernel tensor files.
        #[arg(required = true)]
        kernels: Vec<PathBuf>,
    },
    /// Run the power x memory grid, skipping completed cells.
    Sweep,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::IndexOutOfRange { .. } => 2,
        Error::Numerical(_) => 3,
        Error::OptimizerFailed(_) => 4,
        Error::Io(_) | Error::Csv(_) | Error::Format(_) | Error::Version { .. } => 5,
    }
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_toml(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.to_string_lossy().into_owned();
    }
    if !common.power.is_empty() {
        config.sweep.powers_dbm = common.power.clone();
    }
    if !common.memory.is_empty() {
        config.sweep.memories = common.memory.clone();
    }
    config.validate()?;
    let out = PathBuf::from(&config.output_dir);
    fs::create_dir_all(&out)?;
    Ok((config, out))
}

fn kernel_file(out: &Path, name: &str) -> PathBuf {
    out.join("kernels").join(format!("{name}.frpk"))
}

fn cmd_simulate(config: &ExperimentConfig, out: &Path, dump_waveform: bool) -> Result<()> {
    let tx = transmitted_symbols(config)?;
    let mut rows = Vec::new();
    for &power in &config.sweep.powers_dbm {
        info!("simulating {power} dBm");
        let data = simulate_with(config, &tx, power)?;
        rows.extend(symbol_rows(config, &data)?);
        if dump_waveform {
            let field = simulate_field(config, &tx, power)?;
            save_waveform(&out.join(format!("waveform_p{power}.ffwv")), &field)?;
        }
    }
    write_csv(&out.join("simulate.csv"), &rows)
}

fn cmd_kernels(config: &ExperimentConfig, out: &Path) -> Result<()> {
    for &memory in &config.sweep.memories {
        let tensor = analytical_kernels(config, memory)?;
        let path = kernel_file(out, &format!("analytical_m{memory}"));
        save_tensor(&path, &tensor)?;
        write_csv(&path.with_extension("csv"), &kernel_rows(config, &tensor)?)?;
        info!(
            "M = {memory}: {} kernels, grid certificate {:.2e} -> {}",
            tensor.len(),
            tensor.provenance.convergence.unwrap_or(f64::NAN),
            path.display()
        );
    }
    Ok(())
}

fn cmd_optimize(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let tx = transmitted_symbols(config)?;
    for &power in &config.sweep.powers_dbm {
        let data = simulate_with(config, &tx, power)?;
        for &memory in &config.sweep.memories {
            let (tensor, report) = optimized_kernels(config, &data, memory)?;
            let path = kernel_file(out, &format!("nbgd_p{power}_m{memory}"));
            save_tensor(&path, &tensor)?;
            write_atomic(&path.with_extension("json"), report.to_json()?.as_bytes())?;
            info!(
                "{power} dBm, M = {memory}: {} iterations, MSE {:.3e} -> {}",
                report.iterations,
                report.final_mse,
                path.display()
            );
        }
    }
    Ok(())
}

fn cmd_evaluate(config: &ExperimentConfig, out: &Path, files: &[PathBuf], memory_filter: &[usize]) -> Result<()> {
    let tensors: Vec<KernelTensor> = files.iter().map(|f| load_tensor(f)).collect::<Result<_>>()?;
    if !memory_filter.is_empty() {
        for t in &tensors {
            if !memory_filter.contains(&t.memory()) {
                return Err(Error::Dimension {
                    what: "kernel file memory",
                    expected: memory_filter[0],
                    got: t.memory(),
                });
            }
        }
    }
    let tx = transmitted_symbols(config)?;
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for &power in &config.sweep.powers_dbm {
        let data = simulate_with(config, &tx, power)?;
        let (row, m) = evaluate_reference(config, &data)?;
        rows.push(row);
        means.extend(m);
        for t in &tensors {
            let (row, m) = evaluate_kernels(config, &data, t, None)?;
            rows.push(row);
            means.extend(m);
        }
    }
    write_csv(&out.join("means.csv"), &means)?;
    write_csv(&out.join("evaluate.csv"), &rows)
}

fn run(cli: Cli) -> Result<u8> {
    let (config, out) = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate { dump_waveform } => cmd_simulate(&config, &out, dump_waveform)?,
        Command::Kernels => cmd_kernels(&config, &out)?,
        Command::Optimize => cmd_optimize(&config, &out)?,
        Command::Evaluate { kernels } => {
            // Evaluate honors --memory only as a consistency check.
            let filter = if cli.common.memory.is_empty() { Vec::new() } else { config.sweep.memories.clone() };
            cmd_evaluate(&config, &out, &kernels, &filter)?
        }
        Command::Sweep => {
            let summary = sweep(&config, &out)?;
            info!(
                "sweep: {} cells computed, {} skipped, {} failed",
                summary.computed,
                summary.skipped,
                summary.failed.len()
            );
            if !summary.failed.is_empty() {
                for (p, m, e) in &summary.failed {
                    warn!("cell {p} dBm, M = {m}: {e}");
                }
                return Ok(EXIT_PARTIAL);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
