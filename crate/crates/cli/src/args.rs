use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "wdiff",
    version,
    about = "Simulate weighted degenerate diffusions and check their estimates"
)]
pub struct Cli {
    /// Directory for reports and manifests [env: WDIFF_OUT_DIR, default: wdiff-out]
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample balls and check a weight-class condition.
    CheckWeight(CheckWeightArgs),
    /// Exponent windows, local norms and ellipticity of a coefficient field.
    CheckConditions(CheckConditionsArgs),
    /// Simulate a batch of paths.
    Simulate(SimulateArgs),
    /// Compare E‖X_t‖² of the isotropic field with the squared Bessel mean.
    VerifyMoments(VerifyMomentsArgs),
    /// Fit the heat-kernel envelope constant from a simulated batch.
    VerifyHeatkernel(VerifyHeatkernelArgs),
    /// Fraction of paths entering a small ball around the origin.
    Hitting(HittingArgs),
    /// Riesz potential of a compactly supported function.
    Potentials(PotentialsArgs),
    /// Closed-form squared Bessel quantities.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightCondition {
    A2,
    Doubling,
}

#[derive(Debug, Args)]
pub struct CheckWeightArgs {
    /// Weight as inline JSON or a path to a JSON file.
    #[arg(long)]
    pub weight: String,
    #[arg(long, value_enum)]
    pub condition: WeightCondition,
    /// Number of sampled balls.
    #[arg(long, default_value_t = 64)]
    pub n_balls: usize,
    /// Ball centers are drawn from [-half, half]^d.
    #[arg(long, default_value_t = 2.0)]
    pub half: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub r_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub r_max: f64,
    /// Pass threshold; the condition's default when omitted.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegionChoice {
    /// B₁(0)
    Ball,
    /// {0.5 < ‖x‖ < 2}
    Annulus,
    Both,
}

#[derive(Debug, Args)]
pub struct CheckConditionsArgs {
    /// Field as inline JSON or a path to a JSON file.
    #[arg(long)]
    pub field: String,
    /// hp3-i, hp3-ii, hp3-iii, hp3prime, hp5 or hp6.
    #[arg(long)]
    pub condition: String,
    /// Exponent for the local drift norm; taken from the window when omitted.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, value_enum, default_value_t = RegionChoice::Both)]
    pub region: RegionChoice,
    /// Points sampled for the ellipticity estimate.
    #[arg(long, default_value_t = 2000)]
    pub ellipticity_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainChoice {
    Full,
    Annulus,
    Ball,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub field: String,
    /// Starting point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long)]
    pub t: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DomainChoice::Full)]
    pub domain: DomainChoice,
    /// k for the annulus {1/k < ‖x‖ < k}, or the ball radius.
    #[arg(long, default_value_t = 10.0)]
    pub domain_size: f64,
    /// Use fixed steps instead of the adaptive policy.
    #[arg(long)]
    pub fixed_step: bool,
    #[arg(long)]
    pub taming: bool,
    #[arg(long, default_value_t = 1e6)]
    pub r_max: f64,
    /// Extra snapshot times, comma separated.
    #[arg(long)]
    pub snapshots: Option<String>,
    /// Record every k-th step; 0 keeps only the start and the end.
    #[arg(long, default_value_t = 0)]
    pub record_stride: usize,
    /// Where to write the full batch; inside the output directory by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-path states as CSV (path, t, x1..xd).
    #[arg(long)]
    pub paths_csv: bool,
}

#[derive(Debug, Args)]
pub struct VerifyMomentsArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Starting point; the first unit vector when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Tolerance in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub k: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct VerifyHeatkernelArgs {
    /// Batch written by `simulate`.
    #[arg(long)]
    pub batch: PathBuf,
    /// JSON with `points` or `radii` (about x0), and optional `times`.
    #[arg(long)]
    pub grid: String,
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    /// Fixed isotropic KDE bandwidth; Silverman's rule when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Largest admissible ratio between fitted constants across times.
    #[arg(long, default_value_t = 10.0)]
    pub max_spread: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HittingArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 5.0)]
    pub t: f64,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Largest admissible hit fraction when the origin is polar.
    #[arg(long, default_value_t = 0.005)]
    pub max_fraction: f64,
    #[arg(long, default_value_t = 0.99)]
    pub confidence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PotentialsArgs {
    /// Function as inline JSON or a path to a JSON file.
    #[arg(long)]
    pub g: String,
    #[arg(long)]
    pub eta: f64,
    /// Evaluation point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x: String,
    /// Also check the Hölder hypotheses for g ∈ Lᵖ.
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConventionChoice {
    Reflecting,
    Absorbing,
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// E‖X_t‖² = ‖x0‖² + (d + α)t.
    BesqMean {
        #[arg(long)]
        d: usize,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long)]
        t: f64,
    },
    /// Bessel dimension and whether the origin is hit.
    Dimension {
        #[arg(long)]
        d: usize,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
    },
    /// Density and distribution function of the radius at time t.
    Density {
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        r0: f64,
        #[arg(long)]
        t: f64,
        /// Radii, comma separated.
        #[arg(long)]
        r: String,
        #[arg(long, value_enum, default_value_t = ConventionChoice::Reflecting)]
        convention: ConventionChoice,
    },
}
