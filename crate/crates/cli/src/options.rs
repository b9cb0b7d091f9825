use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use lvnet::arch::{apply_variant, ArchConfig};
use lvnet::metrics::{EmptyGtPolicy, MetricConfig};
use lvnet::train::TrainConfig;

use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "lvnet", version, about = "Salient object detection for optical remote-sensing images")]
pub struct Cli {
    /// Force a single worker thread so every output is bit-reproducible.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write log.jsonl plus checkpoints.
    Train(TrainCmd),
    /// Score saliency maps against ground truth.
    Eval(EvalCmd),
    /// Write one saliency PNG per input image.
    Predict(PredictCmd),
    /// Print the per-unit shape plan and parameter totals.
    Shapes(ShapesCmd),
    /// Build, run and optionally train every named variant.
    Ablate(AblateCmd),
    /// Generate a synthetic dataset on disk.
    Synth(SynthCmd),
    /// Save intermediate feature maps as images.
    #[command(name = "dump-features")]
    DumpFeatures(DumpCmd),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON file with any of: arch, train, metrics, variant, seed, data, out, ckpt.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub mcu_base: Option<usize>,
    #[arg(long)]
    pub cu_base: Option<usize>,
    /// Named variant applied after the other overrides; `none` keeps the base network.
    #[arg(long)]
    pub variant: Option<String>,
    /// Square input size in pixels.
    #[arg(long)]
    pub size: Option<usize>,
}

impl ArchArgs {
    pub fn is_set(&self) -> bool {
        self.scales.is_some() || self.mcu_base.is_some() || self.cu_base.is_some() || self.variant.is_some() || self.size.is_some()
    }

    pub fn resolve(&self, file: &RunFile) -> CliResult<ArchConfig> {
        let mut cfg = file.arch.clone().unwrap_or_default();
        if let Some(s) = self.scales {
            cfg.scales = s;
        }
        if let Some(b) = self.mcu_base {
            cfg.mcu_base = b;
        }
        if let Some(b) = self.cu_base {
            cfg.cu_base = b;
        }
        if let Some(s) = self.size {
            cfg.input_size = (s, s);
        }
        if let Some(v) = self.variant.as_ref().or(file.variant.as_ref()) {
            cfg = apply_variant(&cfg, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset root holding images/ and GT/.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate data instead: `n=8[,size=32][,empty=0.1]`.
    #[arg(long)]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Total optimiser steps.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Write a checkpoint every N steps.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Expand the training set with all eight flips and rotations.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Score existing `<id>_sal.png` maps from this directory instead of running a model.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Count images without foreground in precision, recall, F and S.
    #[arg(long)]
    pub include_empty_gt: bool,
}

#[derive(Debug, Args)]
pub struct PredictCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Image directory, or a dataset root containing images/.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ShapesCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Also train each variant for N steps and report training-set metrics.
    #[arg(long)]
    pub train_steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "n=8")]
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Args)]
pub struct DumpCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Image directory, or a dataset root containing images/.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Without a checkpoint a freshly initialised model is used.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Comma-separated units, e.g. `M-CU_1,CU_(0,0)`.
    #[arg(long, required = true)]
    pub units: String,
}

/// `n=<count>[,size=<pixels>][,empty=<fraction>]`
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub size: Option<usize>,
    pub empty_fraction: Option<f64>,
}

impl FromStr for SyntheticSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut spec = SyntheticSpec {
            n: 0,
            size: None,
            empty_fraction: None,
        };
        let mut saw_n = false;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            let bad = |e: &dyn std::fmt::Display| format!("bad value for {key}: {e}");
            match key {
                "n" => {
                    spec.n = value.parse().map_err(|e| bad(&e))?;
                    saw_n = true;
                }
                "size" => spec.size = Some(value.parse().map_err(|e| bad(&e))?),
                "empty" => spec.empty_fraction = Some(value.parse().map_err(|e| bad(&e))?),
                _ => return Err(format!("unknown key {key:?}; expected n, size or empty")),
            }
        }
        if !saw_n || spec.n == 0 {
            return Err("n must be given and at least 1".into());
        }
        Ok(spec)
    }
}

/// Contents of a `--config` file; flags override every field.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    pub arch: Option<ArchConfig>,
    pub train: Option<TrainConfig>,
    pub metrics: Option<MetricConfig>,
    pub variant: Option<String>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
}

impl CommonArgs {
    pub fn run_file(&self) -> CliResult<RunFile> {
        let Some(path) = &self.config else {
            return Ok(RunFile::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn seed(&self, file: &RunFile) -> u64 {
        self.seed.or(file.seed).unwrap_or(0)
    }

    pub fn out_dir(&self, file: &RunFile, fallback: &str) -> CliResult<PathBuf> {
        let dir = self.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(fallback));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }
}

/// Fails early on a path that must already exist.
pub fn existing(path: Option<PathBuf>, what: &str) -> CliResult<Option<PathBuf>> {
    match path {
        Some(p) if !p.exists() => Err(CliError::Usage(format!("{what} {} does not exist", p.display()))),
        other => Ok(other),
    }
}

pub fn require(path: Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

pub fn image_dir(root: &Path) -> PathBuf {
    let nested = root.join("images");
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

pub fn train_config(file: &RunFile, seed: u64, steps: Option<u64>, batch: Option<usize>, lr: Option<f64>) -> CliResult<TrainConfig> {
    let mut cfg = file.train.clone().unwrap_or_default();
    cfg.seed = seed;
    if let Some(s) = steps {
        cfg.max_steps = s;
    }
    if let Some(b) = batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = lr {
        cfg.learning_rate = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn metric_config(file: &RunFile, cmd: &EvalCmd) -> CliResult<MetricConfig> {
    let mut cfg = file.metrics.clone().unwrap_or_default();
    if let Some(b) = cmd.beta2 {
        cfg.beta2 = b;
    }
    if let Some(a) = cmd.alpha {
        cfg.alpha = a;
    }
    if cmd.include_empty_gt {
        cfg.empty_gt_policy = EmptyGtPolicy::Include;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_spec_parsing() {
        let s: SyntheticSpec = "n=8,size=32,empty=0.25".parse().unwrap();
        assert_eq!(s, SyntheticSpec { n: 8, size: Some(32), empty_fraction: Some(0.25) });
        assert_eq!("n=3".parse::<SyntheticSpec>().unwrap().size, None);
        assert!("size=3".parse::<SyntheticSpec>().is_err());
        assert!("n=0".parse::<SyntheticSpec>().is_err());
        assert!("n=2,colour=red".parse::<SyntheticSpec>().is_err());
    }

    #[test]
    fn flags_override_file_then_variant_applies() {
        let file = RunFile {
            arch: Some(ArchConfig { scales: 4, ..ArchConfig::default() }),
            ..RunFile::default()
        };
        let args = ArchArgs { scales: None, mcu_base: Some(4), cu_base: Some(8), variant: Some("v_net_d".into()), size: Some(32) };
        let cfg = args.resolve(&file).unwrap();
        assert_eq!((cfg.scales, cfg.mcu_base, cfg.cu_base, cfg.input_size), (4, 8, 16, (32, 32)));
    }
}
