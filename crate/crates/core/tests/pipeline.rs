//! Small end-to-end pipeline runs through the library API.

use fiberfrp::experiment::{
    analytical_kernels, evaluate_kernels, evaluate_reference, kernel_grid, read_csv, simulate, sweep, EvaluationRow,
    ExperimentConfig, SweepLayout,
};
use fiberfrp::kernels::{compute_kernel, KernelSource};
use fiberfrp::metrics::relative_error;

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(include_str!("../../../configs/smoke.toml")).unwrap();
    c.signal.n_symbols = 1024;
    c
}

#[test]
fn linear_channel_returns_transmitted_symbols() {
    let mut c = small();
    c.fiber.gamma_per_w_km = 0.0;
    let data = simulate(&c, 10.0).unwrap();
    assert!(relative_error(&data.tx, &data.rx).unwrap() < 1e-10);
}

#[test]
fn frp_error_is_a_fixed_fraction_of_the_distortion_at_low_power() {
    let c = small();
    let short = analytical_kernels(&c, 2).unwrap();
    let long = analytical_kernels(&c, 5).unwrap();
    assert_eq!(long.provenance.source, KernelSource::Analytical);
    let mut ratios = Vec::new();
    for power in [-4.0, 0.0] {
        let data = simulate(&c, power).unwrap();
        let (reference, _) = evaluate_reference(&c, &data).unwrap();
        assert_eq!(reference.epsilon, 0.0);
        // Distortion and model error are both first order in gamma here, so
        // their ratio is set by the memory truncation alone.
        let distortion = relative_error(&data.tx, &data.rx).unwrap();
        let ratio = |k| evaluate_kernels(&c, &data, k, None).unwrap().0.epsilon / distortion;
        ratios.push((ratio(&short), ratio(&long)));
    }
    for (short, long) in &ratios {
        assert!(long < short, "{ratios:?}");
        assert!(*long < 0.2, "{ratios:?}");
    }
    assert!((ratios[0].0 / ratios[1].0 - 1.0).abs() < 0.02, "{ratios:?}");
    assert!((ratios[0].1 / ratios[1].1 - 1.0).abs() < 0.02, "{ratios:?}");
}

#[test]
fn analytical_kernels_share_values_across_memory() {
    let c = small();
    let m1 = analytical_kernels(&c, 1).unwrap();
    let m2 = analytical_kernels(&c, 2).unwrap();
    assert_eq!(m2.restrict(1).unwrap().values(), m1.values());
    let grid = kernel_grid(&c).unwrap();
    let (pulse, fiber) = (c.pulse().unwrap(), c.fiber_params().unwrap());
    for (k, l, m) in [(0, 0, 0), (1, -1, 2), (-2, 2, 0)] {
        let direct = compute_kernel(k, l, m, &pulse, &fiber, &grid).unwrap();
        let tensor = m2.get(k, l, m).unwrap();
        assert!((direct - tensor).norm() <= 1e-9 * m2.get(0, 0, 0).unwrap().norm());
        assert!((m2.get(k, m, l).unwrap() - tensor).norm() <= 1e-12 * tensor.norm().max(1e-300));
    }
}

#[test]
fn sweep_merges_cells_in_grid_order() {
    let c = small();
    let dir = tempfile::tempdir().unwrap();
    let summary = sweep(&c, dir.path()).unwrap();
    assert_eq!(summary.computed, 4);
    assert!(summary.failed.is_empty());
    let rows: Vec<EvaluationRow> = read_csv(&SweepLayout::new(dir.path()).evaluate()).unwrap();
    let keys: Vec<(f64, Option<usize>, &str)> = rows.iter().map(|r| (r.power_dbm, r.memory, r.source.as_str())).collect();
    assert_eq!(
        keys,
        [
            (0.0, None, "ssfm"),
            (0.0, Some(0), "analytical"),
            (0.0, Some(0), "nbgd"),
            (0.0, Some(1), "analytical"),
            (0.0, Some(1), "nbgd"),
            (10.0, None, "ssfm"),
            (10.0, Some(0), "analytical"),
            (10.0, Some(0), "nbgd"),
            (10.0, Some(1), "analytical"),
            (10.0, Some(1), "nbgd"),
        ]
    );
    assert!(rows.iter().all(|r| r.config_hash == c.hash().unwrap()));
    assert!(rows.iter().all(|r| r.kernel_count == r.memory.map_or(0, |m| (2 * m + 1).pow(3))));

    let again = sweep(&c, dir.path()).unwrap();
    assert_eq!((again.computed, again.skipped), (0, 4));
}

#[test]
fn reference_link_is_nearly_linear_at_minus_10_dbm() {
    let c = ExperimentConfig::default();
    let data = simulate(&c, -10.0).unwrap();
    let eps = relative_error(&data.tx, &data.rx).unwrap();
    assert!(eps < 0.01, "epsilon {eps}");
}

#[test]
fn shipped_default_config_matches_built_in_defaults() {
    let shipped = ExperimentConfig::from_toml(include_str!("../../../configs/default.toml")).unwrap();
    assert_eq!(shipped, ExperimentConfig::default());
}
