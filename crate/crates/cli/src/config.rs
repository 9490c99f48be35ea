//! Command-line flags, the `key = value` config file, and their merge.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qtune::optimizer::{LossWeights, Relaxation};
use qtune::Layout;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "qtune", version, about = "Optimize JPEG quantization tables by gradient descent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    Natural,
    Labeled,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Universal rate-distortion tables (defaults c_r = c_d = 1, c_c = 0).
    OptimizeRd,
    /// Universal rate-accuracy tables (defaults c_r = 10, c_d = 0, c_c = 1).
    OptimizeRa,
    /// Tables fitted to each image separately.
    OptimizePerImage,
    /// Rate-distortion (and accuracy) sweep over quality factors.
    EvalCurve,
    /// Scatter of estimated against actual bits per pixel.
    EstimateVsActual,
    /// Write float tables and, with --quality, the scaled integer tables.
    ExportTables,
    /// Write a procedurally generated PPM corpus.
    GenCorpus {
        #[arg(long, value_enum, default_value = "natural")]
        kind: CorpusKind,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::OptimizeRd => "optimize-rd",
            Command::OptimizeRa => "optimize-ra",
            Command::OptimizePerImage => "optimize-per-image",
            Command::EvalCurve => "eval-curve",
            Command::EstimateVsActual => "estimate-vs-actual",
            Command::ExportTables => "export-tables",
            Command::GenCorpus { .. } => "gen-corpus",
        }
    }
}

/// Flags shared by every command. Unset flags fall back to the config file,
/// then to command defaults.
#[derive(Debug, Default, Args)]
pub struct Opts {
    /// Config file with `key = value` lines (keys are the flag names).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory of PPM/PGM images.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Label index file: `filename label` per line.
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Step size for the entropy models (defaults to --lr).
    #[arg(long, global = true)]
    pub entropy_lr: Option<f64>,
    /// Initial steps that train only the entropy models.
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    /// Train the entropy models jointly (default: on for universal, off per image).
    #[arg(long, global = true)]
    pub train_entropy: Option<bool>,
    /// Rounding relaxation used in training: noise (additive uniform noise) or soft (cubic).
    #[arg(long, global = true)]
    pub relaxation: Option<Relaxation>,
    #[arg(long, global = true)]
    pub cr: Option<f64>,
    #[arg(long, global = true)]
    pub cd: Option<f64>,
    #[arg(long, global = true)]
    pub cc: Option<f64>,
    #[arg(long, global = true)]
    pub qmin: Option<u32>,
    #[arg(long, global = true)]
    pub qmax: Option<u32>,
    /// Comma-separated evaluation quality factors.
    #[arg(long, global = true)]
    pub qlist: Option<String>,
    /// Chroma layout: 420 or 444.
    #[arg(long, global = true)]
    pub layout: Option<Layout>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Input tables (text format); defaults to the standard tables.
    #[arg(long, global = true)]
    pub tables: Option<PathBuf>,
    #[arg(long, global = true)]
    pub entropy_ckpt: Option<PathBuf>,
    #[arg(long, global = true)]
    pub classifier_ckpt: Option<PathBuf>,
    /// Square size images are resized to at ingestion.
    #[arg(long, global = true)]
    pub size: Option<usize>,
    /// Quality factor for integer table export.
    #[arg(long, global = true)]
    pub quality: Option<u32>,
    /// Use at most this many dataset images.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
}

/// Fully resolved settings of one run, echoed into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub dataset: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: PathBuf,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub entropy_lr: f64,
    pub warmup: usize,
    pub train_entropy: bool,
    pub relaxation: Relaxation,
    pub weights: LossWeights,
    pub qmin: u32,
    pub qmax: u32,
    pub qlist: Vec<u32>,
    pub layout: Layout,
    pub seed: u64,
    pub tables: Option<PathBuf>,
    pub entropy_ckpt: Option<PathBuf>,
    pub classifier_ckpt: Option<PathBuf>,
    pub size: usize,
    pub quality: Option<u32>,
    pub limit: Option<usize>,
}

const KEYS: &[&str] = &[
    "dataset", "labels", "out", "steps", "batch", "lr", "entropy-lr", "warmup", "train-entropy", "relaxation", "cr", "cd", "cc",
    "qmin", "qmax", "qlist", "layout", "seed", "tables", "entropy-ckpt", "classifier-ckpt", "size", "quality",
    "limit",
];

/// Parses `key = value` lines; `#` starts a comment, `_` and `-` are
/// interchangeable in keys.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("config line {}: expected `key = value`", i + 1))?;
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            bail!("config line {}: unknown key {key:?}", i + 1);
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

struct Merge {
    file: BTreeMap<String, String>,
    base: PathBuf,
}

impl Merge {
    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key {key}: invalid value {v:?}: {e}")),
            None => Ok(None),
        }
    }

    /// Paths from the config file are relative to the file's directory.
    fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.file.get(key).map(|v| self.base.join(v)))
    }
}

pub fn parse_qlist(s: &str) -> Result<Vec<u32>> {
    let mut qs = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let q: u32 = part.parse().with_context(|| format!("bad quality {part:?} in --qlist"))?;
        if !(1..=100).contains(&q) {
            bail!("quality {q} in --qlist outside [1, 100]");
        }
        qs.push(q);
    }
    if qs.is_empty() {
        bail!("--qlist is empty");
    }
    qs.sort_unstable();
    qs.dedup();
    Ok(qs)
}

fn default_weights(cmd: &Command) -> LossWeights {
    match cmd {
        Command::OptimizeRa => LossWeights::rate_accuracy(),
        _ => LossWeights::rate_distortion(),
    }
}

pub fn resolve(cmd: &Command, opts: Opts) -> Result<RunConfig> {
    let merge = match &opts.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Merge {
                file: parse_config_file(&text)?,
                base: p.parent().map(Path::to_path_buf).unwrap_or_default(),
            }
        }
        None => Merge { file: BTreeMap::new(), base: PathBuf::new() },
    };
    let dw = default_weights(cmd);
    let lr = merge.get(opts.lr, "lr")?.unwrap_or(1e-4);
    let weights = LossWeights {
        rate: merge.get(opts.cr, "cr")?.unwrap_or(dw.rate),
        distortion: merge.get(opts.cd, "cd")?.unwrap_or(dw.distortion),
        task: merge.get(opts.cc, "cc")?.unwrap_or(dw.task),
    };
    weights.validate()?;
    let qmin = merge.get(opts.qmin, "qmin")?.unwrap_or(10);
    let qmax = merge.get(opts.qmax, "qmax")?.unwrap_or(90);
    if !(1 <= qmin && qmin <= qmax && qmax <= 100) {
        bail!("need 1 <= qmin <= qmax <= 100, got qmin {qmin}, qmax {qmax}");
    }
    let qlist = match merge.get(opts.qlist, "qlist")? {
        Some(s) => parse_qlist(&s)?,
        None => (1..=9).map(|k| 10 * k).collect(),
    };
    let quality = merge.get(opts.quality, "quality")?;
    if let Some(q) = quality {
        qtune::Quality::new(q)?;
    }
    let cfg = RunConfig {
        command: cmd.name().to_string(),
        dataset: merge.path(opts.dataset, "dataset"),
        labels: merge.path(opts.labels, "labels"),
        out: merge.path(opts.out, "out").unwrap_or_else(|| PathBuf::from("out")),
        steps: merge.get(opts.steps, "steps")?.unwrap_or(1000),
        batch: merge.get(opts.batch, "batch")?.unwrap_or(4),
        lr,
        entropy_lr: merge.get(opts.entropy_lr, "entropy-lr")?.unwrap_or(lr),
        warmup: merge.get(opts.warmup, "warmup")?.unwrap_or(0),
        train_entropy: merge
            .get(opts.train_entropy, "train-entropy")?
            .unwrap_or(!matches!(cmd, Command::OptimizePerImage)),
        relaxation: merge.get(opts.relaxation, "relaxation")?.unwrap_or_default(),
        weights,
        qmin,
        qmax,
        qlist,
        layout: merge.get(opts.layout, "layout")?.unwrap_or(Layout::Yuv420),
        seed: merge.get(opts.seed, "seed")?.unwrap_or(0),
        tables: merge.path(opts.tables, "tables"),
        entropy_ckpt: merge.path(opts.entropy_ckpt, "entropy-ckpt"),
        classifier_ckpt: merge.path(opts.classifier_ckpt, "classifier-ckpt"),
        size: merge.get(opts.size, "size")?.unwrap_or(299),
        quality,
        limit: merge.get(opts.limit, "limit")?,
    };
    if cfg.batch == 0 {
        bail!("--batch must be at least 1");
    }
    if cfg.size < 16 {
        bail!("--size must be at least 16");
    }
    for (flag, path) in [
        ("--dataset", &cfg.dataset),
        ("--labels", &cfg.labels),
        ("--tables", &cfg.tables),
        ("--entropy-ckpt", &cfg.entropy_ckpt),
        ("--classifier-ckpt", &cfg.classifier_ckpt),
    ] {
        if let Some(p) = path {
            if !p.exists() {
                bail!("{flag} {} does not exist", p.display());
            }
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let m = parse_config_file("# c\nsteps = 5\nentropy_lr=0.1 # x\n").unwrap();
        assert_eq!(m["steps"], "5");
        assert_eq!(m["entropy-lr"], "0.1");
        assert!(parse_config_file("bogus = 1").is_err());
        assert!(parse_config_file("steps 5").is_err());
    }

    #[test]
    fn qlist_parsing() {
        assert_eq!(parse_qlist("90, 10,50,10").unwrap(), vec![10, 50, 90]);
        assert!(parse_qlist("0").is_err());
        assert!(parse_qlist("").is_err());
    }

    #[test]
    fn flags_override_file_and_command_defaults_apply() {
        let dir = std::env::temp_dir().join(format!("qtune-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "steps = 7\nseed = 3\ncr = 2.5\n").unwrap();
        let opts = Opts { config: Some(path), steps: Some(9), ..Default::default() };
        let cfg = resolve(&Command::OptimizeRa, opts).unwrap();
        assert_eq!(cfg.steps, 9);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.weights.rate, 2.5);
        assert_eq!(cfg.weights.task, 1.0);
        assert_eq!(cfg.weights.distortion, 0.0);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
