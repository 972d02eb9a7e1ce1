//! Command-line workflows: simulate phantoms, train models, segment images,
//! evaluate and produce the with/without shape-prior comparison table.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "levelseg", version, about = "Level-set segmentation with curvature-distribution shape priors")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom dataset (one contrast, or every configured contrast under --root).
    Simulate(SimulateArgs),
    /// Train a target model from the training split of a dataset.
    Train(TrainArgs),
    /// Segment one image.
    Segment(SegmentArgs),
    /// Segment the test split of one dataset and score it.
    Evaluate(EvaluateArgs),
    /// With/without shape-prior table over the datasets under --root.
    Report(ReportArgs),
}

/// Segmentation parameters shared by several subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    /// Photometric weight [default: 0.5]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Shape-prior weight [default: 2.5]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Heaviside/delta half-width in pixels [default: 2]
    #[arg(long)]
    pub eps: Option<f64>,
    /// Edge-detector sensitivity [default: 3]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Explicit step [default: 1]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Geodesic AOS step [default: 0.3]
    #[arg(long)]
    pub aos_dt: Option<f64>,
    /// Iteration cap [default: 500]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Stop when the mean band change falls below this [default: 1e-4]
    #[arg(long)]
    pub conv_tol: Option<f64>,
    /// Disable the shape prior (beta = 0)
    #[arg(long)]
    pub no_shape_prior: bool,
}

impl ParamArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            alpha: self.alpha,
            beta: self.beta,
            eps: self.eps,
            lambda: self.lambda,
            dt: self.dt,
            aos_dt: self.aos_dt,
            max_iters: self.max_iters,
            conv_tol: self.conv_tol,
            no_shape_prior: self.no_shape_prior,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Dataset directory for a single contrast.
    #[arg(long, conflicts_with = "root", required_unless_present = "root")]
    pub out: Option<PathBuf>,
    /// Write one dataset per configured contrast into <root>/contrast-<c>.
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Inside:outside variance ratio, > 1 [default: 4]
    #[arg(long, value_parser = parse_contrast)]
    pub contrast: Option<f64>,
    /// Images per dataset [default: 40]
    #[arg(long)]
    pub n: Option<usize>,
    /// Base seed; image i uses seed + i [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training fraction [default: 0.5]
    #[arg(long)]
    pub split: Option<f64>,
    /// Image rows and columns [default: 128]
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model file [default: <dataset>/model.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input image (.grd1 or .pgm).
    #[arg(long)]
    pub image: PathBuf,
    /// Output directory for mask.pgm, phi.grd1, trace.csv and overlay.ppm.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model file; trained from the dataset when absent [default: <dataset>/model.json]
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding contrast-<c> datasets (see `simulate --root`).
    #[arg(long)]
    pub root: PathBuf,
    /// Output directory for the CSV, JSON, text table and trace CSVs.
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict to these contrasts (repeatable) [default: configured contrasts]
    #[arg(long, value_parser = parse_contrast)]
    pub contrast: Vec<f64>,
    /// Skip the beta = 0 runs.
    #[arg(long)]
    pub only_with_priors: bool,
    #[command(flatten)]
    pub params: ParamArgs,
}

fn parse_contrast(s: &str) -> Result<f64, String> {
    let c: f64 = s.parse().map_err(|e| format!("{e}"))?;
    config::validate_contrast(c).map_err(|e| e.to_string())?;
    Ok(c)
}

/// Caps the worker pool when `LEVELSEG_THREADS` is set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LEVELSEG_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("LEVELSEG_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("LEVELSEG_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Parses `args` (without the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(std::iter::once("levelseg".into()).chain(args.into_iter().map(Into::into)))?;
    run(cli)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Simulate(a) => commands::simulate(cfg, &a),
        Command::Train(a) => commands::train(cfg, &a),
        Command::Segment(a) => commands::segment(cfg, &a),
        Command::Evaluate(a) => commands::evaluate(cfg, &a),
        Command::Report(a) => commands::report(cfg, &a),
    }
}
