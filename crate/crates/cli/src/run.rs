use cat_ifm::dispersive::{
    ideal_second_moment, ideal_signal, ideal_signal_slope, pipeline_moments, uncertainty_ratio, PulseSequence,
};
use cat_ifm::exact::{
    exact_curve, exact_points_per_n, exact_poisson_truncation, poisson_average_points, run_full_experiment_exact,
    ExactPoint, ExperimentConfig, EXACT_POISSON_TAIL,
};
use cat_ifm::stats::{
    conditional_jz_squared, conditional_signal, monte_carlo_conditional_moments, poisson_curve,
    poisson_jz_squared_per_n, poisson_signal_per_n, DetectionModel, SignalCurve,
};
use cat_ifm::weights::{
    detection_cutoff, detection_probability, optimal_signal_curve, weighted_moments, WeightVector,
};
use rayon::prelude::*;

use crate::args::{CommonArgs, ExactArgs, IdealArgs, OptimizeArgs, PoissonArgs};
use crate::config::ConfigSource;
use crate::error::CliError;
use crate::output::{manifest_path, weights_path, Cell, Check, RunManifest, Table};

fn curve_row(curve: &SignalCurve, i: usize) -> Vec<Cell> {
    vec![
        Cell::Num(curve.phi_grid[i]),
        Cell::Num(curve.jz_mean[i]),
        Cell::Num(curve.jz_second_moment[i]),
        Cell::Num(curve.delta_phi[i]),
    ]
}

/// Writes the table and manifest, then turns failed checks into an error.
fn finish(common: &CommonArgs, table: &Table, mut manifest: RunManifest, checks: Vec<Check>) -> Result<(), CliError> {
    table.write(&common.out)?;
    manifest.outputs.insert(0, common.out.display().to_string());
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} = {:e} exceeds {:e}", c.name, c.value, c.tolerance))
        .collect();
    if common.verify {
        for c in &checks {
            eprintln!(
                "verify {}: {} = {:e} (tolerance {:e})",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance
            );
        }
        manifest.verification = Some(checks);
    }
    manifest.write(&manifest_path(&common.out))?;
    if common.verify && !failed.is_empty() {
        return Err(CliError::Verification(failed.join("; ")));
    }
    Ok(())
}

pub fn ideal(args: &IdealArgs) -> Result<(), CliError> {
    let n = args.n_atoms;
    if n == 0 {
        return Err(CliError::Usage("--n-atoms must be at least 1".into()));
    }
    let grid = args.common.phi_grid.0;
    let phis = grid.values();
    let mut table = Table::new(&["phi", "source", "jz_mean", "jz_second_moment", "delta_phi"]);
    let mut mean_gap = 0.0f64;
    let mut second_gap = 0.0f64;
    let pipeline: Vec<_> = phis
        .iter()
        .map(|&phi| PulseSequence::new(n, phi, args.inversion).map(|s| pipeline_moments(&s)))
        .collect::<Result<_, _>>()?;
    for &phi in &phis {
        let mean = ideal_signal(n, phi, args.inversion);
        let second = ideal_second_moment(n, phi);
        let dphi = uncertainty_ratio(second - mean * mean, ideal_signal_slope(n, phi, args.inversion));
        table.push(vec![Cell::Num(phi), Cell::Text("closed-form"), Cell::Num(mean), Cell::Num(second), Cell::Num(dphi)]);
    }
    for (&phi, p) in phis.iter().zip(&pipeline) {
        mean_gap = mean_gap.max((p.jz_mean - ideal_signal(n, phi, args.inversion)).abs());
        second_gap = second_gap.max((p.jz_second_moment - ideal_second_moment(n, phi)).abs());
        table.push(vec![
            Cell::Num(phi),
            Cell::Text("pipeline"),
            Cell::Num(p.jz_mean),
            Cell::Num(p.jz_second_moment),
            Cell::Num(p.delta_phi()),
        ]);
    }
    let scale = (n * n) as f64 / 4.0;
    let checks = vec![
        Check::at_most("max |closed-form − pipeline| ⟨Ĵz⟩", mean_gap, 1e-9 * scale),
        Check::at_most("max |closed-form − pipeline| ⟨Ĵz²⟩", second_gap, 1e-9 * scale),
    ];
    let mut manifest = RunManifest::new("ideal", grid, args.common.seed);
    manifest.param("n_atoms", n).param("inversion", args.inversion);
    finish(&args.common, &table, manifest, checks)
}

pub fn poisson(args: &PoissonArgs) -> Result<(), CliError> {
    let mean = args.mean;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(CliError::Usage("--mean must be positive".into()));
    }
    let grid = args.common.phi_grid.0;
    let curve = poisson_curve(mean, &grid.values(), args.inversion)?;
    let mut table = Table::new(&[
        "phi",
        "jz_mean",
        "jz_second_moment",
        "delta_phi",
        "jz_mean_per_n",
        "jz_second_moment_per_n",
    ]);
    let (mut mean_gap, mut second_gap) = (0.0f64, 0.0f64);
    for i in 0..curve.len() {
        let phi = curve.phi_grid[i];
        let m = poisson_signal_per_n(mean, phi, args.inversion);
        let q = poisson_jz_squared_per_n(mean, phi);
        mean_gap = mean_gap.max((m - curve.jz_mean[i]).abs());
        second_gap = second_gap.max((q - curve.jz_second_moment[i]).abs());
        let mut row = curve_row(&curve, i);
        row.extend([Cell::Num(m), Cell::Num(q)]);
        table.push(row);
    }
    let scale = mean.max(1.0).powi(2);
    let checks = vec![
        Check::at_most("max |closed-form − per-N sum| ⟨Ĵz⟩", mean_gap, 1e-10 * scale),
        Check::at_most("max |closed-form − per-N sum| ⟨Ĵz²⟩", second_gap, 1e-10 * scale),
    ];
    if let Some((phi, d)) = curve.min_delta_phi() {
        eprintln!("minimum Δφ = {d:.6} at φ = {phi:.6}");
    }
    let mut manifest = RunManifest::new("poisson", grid, args.common.seed);
    manifest.param("mean_atoms", mean).param("inversion", args.inversion);
    finish(&args.common, &table, manifest, checks)
}

fn load_config(args: &ExactArgs) -> Result<ExperimentConfig, CliError> {
    let mut source = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            ConfigSource::parse(&text, &path.display().to_string())?
        }
        None => ConfigSource::default(),
    };
    for entry in &args.overrides {
        source.push(entry, "--set")?;
    }
    if let Some(v) = args.velocity {
        source.push(&format!("velocity = {v}"), "--velocity")?;
    }
    source.resolve(args.auto_detuning)
}

fn with_atom_number(n: usize, e: cat_ifm::Error) -> CliError {
    match e {
        cat_ifm::Error::CutoffTooSmall { .. } => {
            CliError::Leakage { n_atoms: n, source: e }
        }
        other => CliError::Core(other),
    }
}

pub fn exact(args: &ExactArgs) -> Result<(), CliError> {
    let config = load_config(args)?;
    let grid = args.common.phi_grid.0;
    let phis = grid.values();
    let (curve, normaliser, verify_n) = match (args.n_atoms, args.poisson_mean) {
        (Some(n), _) => {
            if n == 0 {
                return Err(CliError::Usage("--n-atoms must be at least 1".into()));
            }
            let curve = exact_curve(n, &phis, &config, args.inversion).map_err(|e| with_atom_number(n, e))?;
            (curve, n as f64, n)
        }
        (None, Some(mean)) => {
            if !(mean > 0.0 && mean.is_finite()) {
                return Err(CliError::Usage("--poisson-mean must be positive".into()));
            }
            let n_max = exact_poisson_truncation(mean, EXACT_POISSON_TAIL);
            let per_n: Vec<Vec<ExactPoint>> = (0..=n_max)
                .into_par_iter()
                .map(|n| {
                    exact_points_per_n(&[n], &phis, &config, args.inversion)
                        .map(|mut v| v.remove(0))
                        .map_err(|e| with_atom_number(n, e))
                })
                .collect::<Result<_, _>>()?;
            let curve = poisson_average_points(&per_n, &phis, mean)?;
            (curve, mean, (mean.round() as usize).max(1))
        }
        (None, None) => return Err(CliError::Usage("one of --n-atoms or --poisson-mean is required".into())),
    };

    let mut table = Table::new(&["phi", "jz_mean", "jz_second_moment", "delta_phi", "jz_mean_normalized"]);
    for i in 0..curve.len() {
        let mut row = curve_row(&curve, i);
        row.push(Cell::Num(2.0 * curve.jz_mean[i] / normaliser));
        table.push(row);
    }

    let mut checks = Vec::new();
    if args.common.verify {
        // Heisenberg sweep against forward propagation at three phases.
        let single = exact_curve(verify_n, &phis, &config, args.inversion)?;
        let mut gap = 0.0f64;
        for i in [0, phis.len() / 2, phis.len() - 1] {
            let (m, q) = run_full_experiment_exact(verify_n, phis[i], &config, args.inversion)?;
            gap = gap.max((m - single.jz_mean[i]).abs()).max((q - single.jz_second_moment[i]).abs());
        }
        let scale = (verify_n * verify_n) as f64 / 4.0;
        checks.push(Check::at_most(
            format!("N = {verify_n}: max |sweep − forward run|"),
            gap,
            1e-8 * scale.max(1.0),
        ));
    }
    if let Some((phi, d)) = curve.min_delta_phi() {
        eprintln!("minimum Δφ = {d:.6} at φ = {phi:.6}");
    }
    let mut manifest = RunManifest::new("exact", grid, args.common.seed);
    manifest.detuning_ratio = Some(config.detuning_ratio());
    manifest.config = Some(config);
    manifest.param("inversion", args.inversion);
    match args.n_atoms {
        Some(n) => manifest.param("n_atoms", n),
        None => manifest.param("poisson_mean", args.poisson_mean),
    };
    eprintln!("δ/Ω₀ = {:.4}", config.detuning_ratio());
    finish(&args.common, &table, manifest, checks)
}

pub fn optimize(args: &OptimizeArgs) -> Result<(), CliError> {
    let model = DetectionModel::new(args.efficiency, args.mean).map_err(|e| CliError::Usage(e.to_string()))?;
    let grid = args.common.phi_grid.0;
    let phis = grid.values();
    let cutoff = detection_cutoff(&model);
    let optimal = optimal_signal_curve(&phis, &model, cutoff)?;
    let uniform = WeightVector::uniform(cutoff);

    let mut table = Table::new(&[
        "phi",
        "jz_mean",
        "jz_second_moment",
        "delta_phi",
        "jz_mean_equal",
        "jz_second_moment_equal",
        "delta_phi_equal",
    ]);
    let mut worst_ratio = 0.0f64;
    for (i, &phi) in phis.iter().enumerate() {
        if optimal.weights[i].is_none() {
            eprintln!("warning: no sensitivity at φ = {phi}; row kept with delta_phi = inf");
        }
        let eq = weighted_moments(&uniform, phi, &model)?;
        let d = optimal.curve.delta_phi[i];
        if d.is_finite() && eq.delta_phi.is_finite() {
            worst_ratio = worst_ratio.max(d / eq.delta_phi);
        }
        let mut row = curve_row(&optimal.curve, i);
        row.extend([Cell::Num(eq.jz_mean), Cell::Num(eq.jz_second_moment), Cell::Num(eq.delta_phi)]);
        table.push(row);
    }

    let weights_file = args.weights_out.clone().unwrap_or_else(|| weights_path(&args.common.out));
    let mut manifest = RunManifest::new("optimize", grid, args.common.seed);
    manifest
        .param("mean_atoms", args.mean)
        .param("efficiency", args.efficiency)
        .param("detection_cutoff", cutoff);
    let best = optimal.best_index.zip(optimal.best_weights());
    let mut weights_table = Table::new(&["n_detected", "probability", "weight"]);
    if let Some((i, w)) = best {
        let w = w.normalized(&model);
        for (k, &x) in w.weights().iter().enumerate() {
            weights_table.push(vec![
                Cell::Int(k as u64),
                Cell::Num(detection_probability(k, &model)),
                Cell::Num(x),
            ]);
        }
        manifest.param("best_phi", phis[i]).param("best_delta_phi", optimal.curve.delta_phi[i]);
        eprintln!("minimum Δφ = {:.6} at φ = {:.6}", optimal.curve.delta_phi[i], phis[i]);
    }
    weights_table.write(&weights_file)?;
    manifest.outputs.push(weights_file.display().to_string());

    let mut checks = vec![Check::at_most("max Δφ(optimal)/Δφ(equal) − 1", worst_ratio - 1.0, 1e-9)];
    if args.common.verify {
        if let Some((i, _)) = best {
            checks.push(monte_carlo_check(&model, phis[i], args.common.seed)?);
        }
    }
    finish(&args.common, &table, manifest, checks)
}

/// Conditional closed forms against the detection Monte Carlo, as the
/// largest deviation in standard errors over the likely classes.
fn monte_carlo_check(model: &DetectionModel, phi: f64, seed: u64) -> Result<Check, CliError> {
    let classes: Vec<usize> = (0..=detection_cutoff(model))
        .filter(|&k| k >= 1 && detection_probability(k, model) >= 0.02)
        .collect();
    let estimates = monte_carlo_conditional_moments(model, phi, true, &classes, 200_000, seed)?;
    let mut worst = 0.0f64;
    for e in estimates {
        let zm = (e.jz_mean - conditional_signal(e.n_detected, phi, model)).abs() / e.jz_mean_std_error;
        let zq = (e.jz_second_moment - conditional_jz_squared(e.n_detected, phi, model)).abs()
            / e.jz_second_moment_std_error;
        for z in [zm, zq] {
            if z.is_finite() {
                worst = worst.max(z);
            }
        }
    }
    Ok(Check::at_most(
        format!("max |Monte Carlo − closed form| at φ = {phi:.4} (standard errors)"),
        worst,
        4.0,
    ))
}
