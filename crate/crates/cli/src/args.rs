use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use retinexdual_core::{Preset, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "retinexdual", version, about = "Train, run and inspect RetinexDual restoration models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a paired dataset and write checkpoints and a log.
    Train(TrainArgs),
    /// Restore one image or every image in a directory.
    Restore(RestoreArgs),
    /// Per-image and mean PSNR/SSIM of a checkpoint on a paired dataset.
    Evaluate(EvaluateArgs),
    /// Spatial versus spectral PSNR of every pair, with a verdict histogram.
    AnalyzeFrequency(AnalyzeArgs),
    /// Parameter counts per group for a configuration.
    CountParams(CountArgs),
    /// Train the baseline and each ablation variant, then compare them.
    Ablate(AblateArgs),
    /// Write a synthetic paired dataset.
    Synthesize(SynthesizeArgs),
}

/// How a run configuration is assembled: preset or file, then `--set`, `--ablate` and `--seed`.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Named configuration (desk or full); ignored when --config is given.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override such as train.lr_init=2e-4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Ablation switch such as loss.fft=off (repeatable).
    #[arg(long = "ablate", value_name = "KEY=off")]
    pub ablations: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| retinexdual_core::Error::io(format!("reading {}", path.display()), e))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::preset(self.preset.parse::<Preset>()?),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        for a in &self.ablations {
            cfg.apply_ablation(a)?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Whether anything beyond the default preset was requested.
    pub fn is_explicit(&self) -> bool {
        self.config.is_some() || !self.overrides.is_empty() || !self.ablations.is_empty() || self.preset != "desk"
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Paired dataset root with input/ and gt/.
    #[arg(long)]
    pub data: PathBuf,
    /// Optional validation dataset root.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Largest side restored in one pass; larger images are tiled.
    #[arg(long, default_value_t = 512)]
    pub tile: usize,
    /// Expected configuration; must describe the checkpoint's model when given.
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub tile: usize,
    /// Also write the table as JSON lines to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset used for the comparison; defaults to the training data.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Ablation keys to compare (comma separated); defaults to all of them.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// haze, blur, rain or lowlight.
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
