//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "unetcd", version, about = "U-net segmentation and feature-map change detection")]
pub struct Cli {
    /// Run single-threaded so outputs are bit-reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes, change pairs and noisy variants.
    Synth(SynthArgs),
    /// Train a segmentation model on a synthetic or real dataset.
    Train(TrainArgs),
    /// Segment one image.
    Segment(SegmentArgs),
    /// Detect change between two images.
    Detect(DetectArgs),
    /// Score change detection over every pair of a manifest.
    Eval(EvalArgs),
    /// Check analytic gradients of a small model against finite differences.
    Gradcheck(GradcheckArgs),
    /// Repeat the run recorded in a run manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Scene edge in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Change fractions; one pair per scene and fraction.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.10, 0.15])]
    pub fractions: Vec<f64>,
    /// Noise variances in squared 8-bit units, applied to the after image
    /// of a 5% change pair.
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 20.0, 40.0])]
    pub variances: Vec<f64>,
    /// Amplitude of irrelevant texture jitter outside the change (0 to 8).
    #[arg(long, default_value_t = 0)]
    pub foliage_jitter: u8,
    /// Write scenes only.
    #[arg(long)]
    pub no_pairs: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset directory containing manifest.tsv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f32,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 16)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 64)]
    pub input_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of the scenes held out for model selection.
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    /// Use at most this many scenes.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Checkpoint path for the final model.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SegmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output PNG: probabilities on the left, argmax classes on the right.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Earlier image.
    #[arg(long)]
    pub before: PathBuf,
    /// Later image.
    #[arg(long)]
    pub after: PathBuf,
    /// One threshold per level, level 1 first.
    #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.6, 0.8, 1.0, 1.2])]
    pub thresholds: Vec<f32>,
    /// L1 distance from the null response above which a pixel is changed.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f32,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest listing the change pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.6, 0.8, 1.0, 1.2])]
    pub thresholds: Vec<f32>,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f32,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-2)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parameters sampled per layer kind.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    /// Feed an all-zero batch.
    #[arg(long)]
    pub zero_input: bool,
    /// Report path (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    /// A run manifest written by an earlier command.
    pub manifest: PathBuf,
}
