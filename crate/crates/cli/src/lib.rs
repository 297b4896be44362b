//! The `qct` command-line tool.
//!
//! `run` parses arguments, executes one subcommand and returns the process
//! exit code: 0 ok, 2 configuration, 3 I/O, 4 segmentation, 5 calibration,
//! 6 grid mismatch.

mod commands;
pub mod config;
mod error;
mod svg;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

pub use error::CliError;

use config::Config;

#[derive(Debug, Parser)]
#[command(
    name = "qct",
    version,
    about = "Calibration-phantom segmentation and HU-to-density calibration"
)]
pub struct Cli {
    /// `key = value` configuration file; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Random seed (dataset generation, fold assignment).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-site dataset.
    Gen(GenArgs),
    /// Segment phantom regions.
    Segment(SegmentArgs),
    /// Fit HU-to-density calibration models.
    Calibrate(CalibrateArgs),
    /// Score predicted label maps against references.
    Evaluate(EvaluateArgs),
    /// Compare calibration models of two sites over an HU range.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Sites and case counts, e.g. `A:10,B:10`.
    #[arg(long)]
    pub sites: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Classical,
    Mask,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Dataset manifest for batch mode.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Single CT volume (.mhd).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Externally produced mask for `--input` (mask backend).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Directory of `<case_id>.mhd` masks (mask backend, batch mode).
    #[arg(long)]
    pub mask_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelSource {
    /// `<case_id>_pred.mhd` written by `segment`.
    Pred,
    /// Ground-truth label maps listed in the manifest.
    Truth,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Label map for `--input`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Which labels to use in batch mode.
    #[arg(long, value_enum)]
    pub labels_from: Option<LabelSource>,
    /// Directory holding predicted label maps (default: manifest directory).
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    /// Erosion radius in pixels.
    #[arg(long)]
    pub erode: Option<usize>,
    /// `mean` or `median`.
    #[arg(long)]
    pub stat: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    /// Single-case CT volume.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Single-case predicted label map.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Single-case reference label map.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub erode: Option<usize>,
    /// Number of cross-validation folds to aggregate over.
    #[arg(long)]
    pub crossval: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Directory of site-A model records (`*.model`).
    #[arg(long)]
    pub site_a: Option<PathBuf>,
    #[arg(long)]
    pub site_b: Option<PathBuf>,
    /// Inclusive HU range `lo:hi`.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
    /// Significance level for BH-adjusted p-values.
    #[arg(long)]
    pub significance: Option<f64>,
}

/// Shared state of one invocation.
pub(crate) struct Ctx<'a> {
    pub config: Config,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
    pub stdout: &'a mut dyn Write,
    pub command: &'static str,
}

impl Ctx<'_> {
    pub fn say(&mut self, line: impl AsRef<str>) {
        if !self.quiet {
            let _ = writeln!(self.stdout, "{}", line.as_ref());
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        Ok(self.config.pick(self.seed, "seed")?.unwrap_or(0))
    }

    /// The output directory, created if needed.
    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        let out = self
            .config
            .pick(self.out.clone(), "out")?
            .ok_or_else(|| CliError::Config(format!("--out is required\n{}", usage(self.command))))?;
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        Ok(out)
    }
}

fn usage(command: &str) -> String {
    let mut cmd = Cli::command();
    match cmd.find_subcommand_mut(command) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                2
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    match execute(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "qct: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let quiet = cli.quiet || config.get::<bool>("quiet")?.unwrap_or(false);
    let command = match &cli.command {
        Command::Gen(_) => "gen",
        Command::Segment(_) => "segment",
        Command::Calibrate(_) => "calibrate",
        Command::Evaluate(_) => "evaluate",
        Command::Compare(_) => "compare",
    };
    let mut ctx = Ctx {
        config,
        seed: cli.seed,
        out: cli.out,
        quiet,
        stdout,
        command,
    };
    match cli.command {
        Command::Gen(a) => commands::gen(&mut ctx, a),
        Command::Segment(a) => commands::segment(&mut ctx, a),
        Command::Calibrate(a) => commands::calibrate(&mut ctx, a),
        Command::Evaluate(a) => commands::evaluate(&mut ctx, a),
        Command::Compare(a) => commands::compare(&mut ctx, a),
    }
}
