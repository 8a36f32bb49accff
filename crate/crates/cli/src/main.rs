//! `porogen`: porosity-conditioned thin-section image synthesis.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use porogen::evaluation::MarginMode;

#[derive(Parser, Debug)]
#[command(
    name = "porogen",
    version,
    about = "Porosity-conditioned GAN pipeline for thin-section images"
)]
pub struct Cli {
    /// Pipeline config file (TOML, or JSON with a .json extension).
    #[arg(long, global = true, env = "POROGEN_CONFIG")]
    pub config: Option<PathBuf>,

    /// Print a JSON summary on stdout.
    #[arg(long, global = true, env = "POROGEN_JSON")]
    pub json: bool,

    /// Validate the configuration, print it and exit without side effects.
    #[arg(long, global = true, env = "POROGEN_DRY_RUN")]
    pub dry_run: bool,

    /// Cap on worker threads; 1 gives the single-worker mode.
    #[arg(long, global = true, env = "POROGEN_WORKERS")]
    pub workers: Option<usize>,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(flatten)]
    pub thresholds: ThresholdArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct ThresholdArgs {
    #[arg(long, global = true, env = "POROGEN_HUE_LO")]
    pub hue_lo: Option<f64>,
    #[arg(long, global = true, env = "POROGEN_HUE_HI")]
    pub hue_hi: Option<f64>,
    #[arg(long, global = true, env = "POROGEN_SAT_MIN")]
    pub sat_min: Option<f64>,
    #[arg(long, global = true, env = "POROGEN_VAL_MIN")]
    pub val_min: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tile, label and balance a directory of thin-section PNGs.
    Ingest(IngestArgs),
    /// Build a procedural corpus with known porosities.
    SynthCorpus(SynthArgs),
    /// Train the conditional GAN on a corpus directory.
    Train(TrainArgs),
    /// Generate images for a porosity or class.
    Generate(GenerateArgs),
    /// Measure conditioning accuracy of a checkpoint.
    Validate(ValidateArgs),
    /// Generate an image track along a well log.
    Logsynth(LogsynthArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long, env = "POROGEN_SRC")]
    pub src: PathBuf,
    #[arg(long, env = "POROGEN_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "POROGEN_TILE")]
    pub tile: Option<usize>,
    #[arg(long, env = "POROGEN_STRIDE")]
    pub stride: Option<usize>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, env = "POROGEN_OUT", default_value = "corpus")]
    pub out: PathBuf,
    #[arg(long, env = "POROGEN_CLASSES")]
    pub classes: Option<usize>,
    #[arg(long, env = "POROGEN_PER_CLASS")]
    pub per_class: Option<usize>,
    #[arg(long, env = "POROGEN_SIZE")]
    pub size: Option<usize>,
    #[arg(long, env = "POROGEN_BLUR_RADIUS")]
    pub blur_radius: Option<usize>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    #[arg(long, env = "POROGEN_SEED")]
    pub seed: Option<u64>,
    /// Grow every class to this many tiles (default: the largest class).
    #[arg(long, env = "POROGEN_TARGET_PER_CLASS")]
    pub target_per_class: Option<usize>,
    /// Allow dropping tiles from classes above the target.
    #[arg(long, env = "POROGEN_DOWNSAMPLE")]
    pub downsample: bool,
    #[arg(long, env = "POROGEN_NO_BALANCE")]
    pub no_balance: bool,
    #[arg(long, env = "POROGEN_HOLDOUT_FRACTION")]
    pub holdout_fraction: Option<f64>,
    /// Porosity outside the binning becomes a data error instead of clamping.
    #[arg(long, env = "POROGEN_NO_CLAMP")]
    pub no_clamp: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, env = "POROGEN_CORPUS")]
    pub corpus: PathBuf,
    #[arg(long, env = "POROGEN_OUT", default_value = "ckpt")]
    pub out: PathBuf,
    /// Defaults to the corpus tile size.
    #[arg(long, env = "POROGEN_IMAGE_SIZE")]
    pub image_size: Option<usize>,
    /// Defaults to the corpus class count.
    #[arg(long, env = "POROGEN_CLASSES")]
    pub classes: Option<usize>,
    #[arg(long, env = "POROGEN_EPOCHS")]
    pub epochs: Option<u64>,
    #[arg(long, env = "POROGEN_BATCH")]
    pub batch: Option<usize>,
    #[arg(long, env = "POROGEN_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "POROGEN_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "POROGEN_BASE_CHANNELS")]
    pub base_channels: Option<usize>,
    #[arg(long, env = "POROGEN_LATENT_DIM")]
    pub latent_dim: Option<usize>,
    #[arg(long, env = "POROGEN_CHECKPOINT_EVERY")]
    pub checkpoint_every: Option<u64>,
    /// Decay the learning rate linearly to the end of the run after this epoch.
    #[arg(long, env = "POROGEN_LR_DECAY_FROM")]
    pub lr_decay_from: Option<u64>,
    /// Continue from this checkpoint instead of fresh weights.
    #[arg(long, env = "POROGEN_RESUME")]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["phi", "class"])))]
pub struct GenerateArgs {
    #[arg(long, env = "POROGEN_CKPT")]
    pub ckpt: PathBuf,
    #[arg(long, env = "POROGEN_PHI")]
    pub phi: Option<f64>,
    #[arg(long, env = "POROGEN_CLASS")]
    pub class: Option<usize>,
    #[arg(long, env = "POROGEN_N")]
    pub n: Option<usize>,
    #[arg(long, env = "POROGEN_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "POROGEN_OUT", default_value = "generated")]
    pub out: PathBuf,
    #[arg(long, env = "POROGEN_NO_CLAMP")]
    pub no_clamp: bool,
    #[arg(long, env = "POROGEN_ALLOW_UNTRAINED")]
    pub allow_untrained: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MarginModeArg {
    Relative,
    Absolute,
}

impl From<MarginModeArg> for MarginMode {
    fn from(m: MarginModeArg) -> Self {
        match m {
            MarginModeArg::Relative => MarginMode::Relative,
            MarginModeArg::Absolute => MarginMode::Absolute,
        }
    }
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long, env = "POROGEN_CKPT")]
    pub ckpt: PathBuf,
    #[arg(long, env = "POROGEN_PER_CLASS")]
    pub per_class: Option<usize>,
    #[arg(long, env = "POROGEN_MARGIN")]
    pub margin: Option<f64>,
    #[arg(long, value_enum, env = "POROGEN_MARGIN_MODE")]
    pub margin_mode: Option<MarginModeArg>,
    #[arg(long, env = "POROGEN_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "POROGEN_OUT", default_value = "report")]
    pub out: PathBuf,
    #[arg(long, env = "POROGEN_ALLOW_UNTRAINED")]
    pub allow_untrained: bool,
}

#[derive(Args, Debug)]
pub struct LogsynthArgs {
    #[arg(long, env = "POROGEN_LOG")]
    pub log: PathBuf,
    #[arg(long, env = "POROGEN_CKPT")]
    pub ckpt: PathBuf,
    #[arg(long, env = "POROGEN_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "POROGEN_K_PER_DEPTH")]
    pub k_per_depth: Option<usize>,
    #[arg(long, env = "POROGEN_OUT", default_value = "track")]
    pub out: PathBuf,
    #[arg(long, env = "POROGEN_ALLOW_UNTRAINED")]
    pub allow_untrained: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = commands::exit_code(&err);
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
