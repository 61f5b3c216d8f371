use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::grid::GridSpec;

/// Simulate the N-atom cavity Ramsey interferometer and write curve data.
#[derive(Parser, Debug)]
#[command(name = "cat-ifm", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ideal dispersive dynamics for a fixed atom number.
    Ideal(IdealArgs),
    /// Poisson-averaged dispersive signal.
    Poisson(PoissonArgs),
    /// Full Tavis-Cummings dynamics with cavity damping.
    Exact(ExactArgs),
    /// Optimally weighted estimator over detected-atom classes.
    Optimize(OptimizeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Output CSV path; the run manifest goes to PATH.manifest.json.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,

    /// Phase grid START:STOP:POINTS; endpoints accept forms like -pi, pi/2, 0.3.
    #[arg(long, value_name = "SPEC", allow_hyphen_values = true, default_value = "-pi:pi:401")]
    pub phi_grid: GridSpec,

    /// Seed for Monte-Carlo cross-checks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Cross-check independent routes and exit with status 1 on disagreement.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Args, Debug)]
pub struct IdealArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    #[arg(long, value_name = "N")]
    pub n_atoms: usize,

    /// Invert the second cavity.
    #[arg(long, value_name = "BOOL", default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub inversion: bool,
}

#[derive(Args, Debug)]
pub struct PoissonArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Mean atom number N̄.
    #[arg(long, value_name = "N̄")]
    pub mean: f64,

    #[arg(long, value_name = "BOOL", default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub inversion: bool,
}

#[derive(Args, Debug)]
pub struct ExactArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// key = value parameter file; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Extra KEY=VALUE overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Atomic velocity in m/s.
    #[arg(long)]
    pub velocity: Option<f64>,

    /// Derive the detuning from the π/2 pulse condition even if one is given.
    #[arg(long)]
    pub auto_detuning: bool,

    /// Fixed atom number.
    #[arg(long, value_name = "N", conflicts_with = "poisson_mean", required_unless_present = "poisson_mean")]
    pub n_atoms: Option<usize>,

    /// Average per-N results over a Poisson distribution with this mean.
    #[arg(long, value_name = "N̄")]
    pub poisson_mean: Option<f64>,

    #[arg(long, value_name = "BOOL", default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub inversion: bool,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    #[arg(long, value_name = "N̄")]
    pub mean: f64,

    /// Detector efficiency η.
    #[arg(long, value_name = "η")]
    pub efficiency: f64,

    /// Weights CSV; defaults to the output path with a .weights.csv suffix.
    #[arg(long, value_name = "PATH")]
    pub weights_out: Option<PathBuf>,
}
