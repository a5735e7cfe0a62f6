//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; missing
//! keys take the defaults listed in [`KEYS`]. Unknown keys, repeated keys,
//! malformed values and out-of-range values are errors that name the line.

use std::path::PathBuf;

use bcgan::data::GmmSpec;
use bcgan::nn::{Activation, NormScope};
use bcgan::objectives::RegimeKind;
use bcgan::trainer::{Inference, TrainConfig};
use bcgan::Exec;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    Gmm,
    Idx,
}

/// Generator output activation; `Auto` is identity for mixture data and
/// sigmoid for images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenOutput {
    Auto,
    Fixed(Activation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: DatasetKind,
    pub gmm: GmmSpec,
    pub gmm_test_per_class: usize,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Use only the first rows of an IDX training file (0 = all).
    pub max_train_rows: usize,
    pub regime: RegimeKind,
    pub labeled_per_class: usize,
    pub disc_hidden: Vec<usize>,
    pub gen_hidden: Vec<usize>,
    pub gen_output: GenOutput,
    pub data_seed: u64,
    pub coverage_radius: Option<f64>,
    pub out_dir: PathBuf,
    /// Write a checkpoint every this many epochs (0 = final only).
    pub snapshot_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            dataset: DatasetKind::Gmm,
            gmm: GmmSpec {
                means: vec![[-2.0, 0.0], [2.0, 0.0]],
                cov_scale: 0.25,
                per_class_count: 500,
            },
            gmm_test_per_class: 500,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            max_train_rows: 0,
            regime: RegimeKind::SemiSupervised,
            labeled_per_class: 25,
            disc_hidden: Vec::new(),
            gen_hidden: vec![500, 500, 500],
            gen_output: GenOutput::Auto,
            data_seed: 1,
            coverage_radius: None,
            out_dir: PathBuf::from("bcgan-run"),
            snapshot_every: 10,
        }
    }
}

impl RunConfig {
    pub fn gen_output_activation(&self) -> Activation {
        match (self.gen_output, &self.dataset) {
            (GenOutput::Fixed(a), _) => a,
            (GenOutput::Auto, DatasetKind::Gmm) => Activation::Identity,
            (GenOutput::Auto, DatasetKind::Idx) => Activation::Sigmoid,
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "dataset",
    "gmm_means",
    "gmm_cov_scale",
    "gmm_per_class",
    "gmm_test_per_class",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "max_train_rows",
    "regime",
    "labeled_per_class",
    "disc_hidden",
    "gen_hidden",
    "gen_output",
    "eta0",
    "lambda",
    "disc_drop_rate",
    "disc_gaussian_variance",
    "gen_drop_rate",
    "gen_gaussian_variance",
    "m",
    "m_prime",
    "gen_rounds",
    "batch_real",
    "batch_fake",
    "epochs",
    "inference",
    "sgld_noise_scale",
    "tau",
    "seed",
    "data_seed",
    "fake_class_term",
    "norm_scope",
    "exec",
    "coverage_radius",
    "out_dir",
    "snapshot_every",
];

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<(&str, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| CliError::ConfigLine { line, message };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(err(format!("unknown key `{key}`")));
        }
        if let Some((_, first)) = seen.iter().find(|(k, _)| *k == key) {
            return Err(err(format!("`{key}` already set on line {first}")));
        }
        seen.push((key, line));
        apply(&mut cfg, key, value).map_err(err)?;
    }
    check(&cfg)?;
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, key: &str, v: &str) -> std::result::Result<(), String> {
    let t = &mut cfg.train;
    match key {
        "dataset" => {
            cfg.dataset = match v {
                "gmm" => DatasetKind::Gmm,
                "idx" => DatasetKind::Idx,
                _ => return Err(format!("dataset must be `gmm` or `idx`, got `{v}`")),
            }
        }
        "gmm_means" => cfg.gmm.means = means(v)?,
        "gmm_cov_scale" => cfg.gmm.cov_scale = at_least(real(v)?, 0.0, key)?,
        "gmm_per_class" => cfg.gmm.per_class_count = positive_count(v, key)?,
        "gmm_test_per_class" => cfg.gmm_test_per_class = positive_count(v, key)?,
        "train_images" => cfg.train_images = Some(path(v)?),
        "train_labels" => cfg.train_labels = Some(path(v)?),
        "test_images" => cfg.test_images = Some(path(v)?),
        "test_labels" => cfg.test_labels = Some(path(v)?),
        "max_train_rows" => cfg.max_train_rows = count(v)?,
        "regime" => {
            cfg.regime = RegimeKind::from_name(v).ok_or_else(|| {
                format!("regime must be semi_supervised, supervised or unsupervised, got `{v}`")
            })?
        }
        "labeled_per_class" => cfg.labeled_per_class = count(v)?,
        "disc_hidden" => cfg.disc_hidden = widths(v)?,
        "gen_hidden" => cfg.gen_hidden = widths(v)?,
        "gen_output" => {
            cfg.gen_output = match v {
                "auto" => GenOutput::Auto,
                "identity" => GenOutput::Fixed(Activation::Identity),
                "sigmoid" => GenOutput::Fixed(Activation::Sigmoid),
                _ => return Err(format!("gen_output must be auto, identity or sigmoid, got `{v}`")),
            }
        }
        "eta0" => t.eta0 = at_least(real(v)?, 0.0, key)?,
        "lambda" => t.lambda = at_least(real(v)?, 0.0, key)?,
        "disc_drop_rate" => t.disc_dropout.bernoulli_drop_rate = rate(v, key)?,
        "disc_gaussian_variance" => t.disc_dropout.gaussian_std = at_least(real(v)?, 0.0, key)?.sqrt(),
        "gen_drop_rate" => t.gen_dropout.bernoulli_drop_rate = rate(v, key)?,
        "gen_gaussian_variance" => t.gen_dropout.gaussian_std = at_least(real(v)?, 0.0, key)?.sqrt(),
        "m" => t.m = positive_count(v, key)?,
        "m_prime" => t.m_prime = positive_count(v, key)?,
        "gen_rounds" => t.gen_rounds = positive_count(v, key)?,
        "batch_real" => t.batch_real = positive_count(v, key)?,
        "batch_fake" => t.batch_fake = positive_count(v, key)?,
        "epochs" => t.epochs = count(v)?,
        "inference" => {
            t.inference = Inference::from_name(v)
                .ok_or_else(|| format!("inference must be map_mc or sgld, got `{v}`"))?
        }
        "sgld_noise_scale" => t.sgld_noise_scale = at_least(real(v)?, 0.0, key)?,
        "tau" => {
            let tau = real(v)?;
            if tau <= 0.0 {
                return Err(format!("tau must be positive, got {tau}"));
            }
            t.tau = tau;
        }
        "seed" => t.seed = v.parse().map_err(|_| format!("expected an unsigned integer, got `{v}`"))?,
        "data_seed" => cfg.data_seed = v.parse().map_err(|_| format!("expected an unsigned integer, got `{v}`"))?,
        "fake_class_term" => t.fake_class_term = boolean(v)?,
        "norm_scope" => {
            t.norm_scope = NormScope::from_name(v)
                .ok_or_else(|| format!("norm_scope must be global or last_layer, got `{v}`"))?
        }
        "exec" => {
            t.exec = match v {
                "parallel" => Exec::Parallel,
                "sequential" => Exec::Sequential,
                _ => return Err(format!("exec must be parallel or sequential, got `{v}`")),
            }
        }
        "coverage_radius" => {
            cfg.coverage_radius = match v {
                "auto" => None,
                _ => Some(at_least(real(v)?, 0.0, key)?),
            }
        }
        "out_dir" => cfg.out_dir = path(v)?,
        "snapshot_every" => cfg.snapshot_every = count(v)?,
        _ => unreachable!("key list and parser disagree on `{key}`"),
    }
    Ok(())
}

/// Constraints that involve more than one key.
fn check(cfg: &RunConfig) -> Result<()> {
    if cfg.dataset == DatasetKind::Idx {
        let missing: Vec<&str> = [
            ("train_images", &cfg.train_images),
            ("train_labels", &cfg.train_labels),
            ("test_images", &cfg.test_images),
            ("test_labels", &cfg.test_labels),
        ]
        .iter()
        .filter(|(_, p)| p.is_none())
        .map(|(k, _)| *k)
        .collect();
        if !missing.is_empty() {
            return Err(CliError::Config(format!("dataset = idx needs {}", missing.join(", "))));
        }
    } else {
        cfg.gmm.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))
}

fn real(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("expected a number, got `{v}`"))?;
    if !x.is_finite() {
        return Err(format!("expected a finite number, got `{v}`"));
    }
    Ok(x)
}

fn at_least(x: f64, min: f64, key: &str) -> std::result::Result<f64, String> {
    if x < min {
        return Err(format!("{key} must be at least {min}, got {x}"));
    }
    Ok(x)
}

fn rate(v: &str, key: &str) -> std::result::Result<f64, String> {
    let x = real(v)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(format!("{key} must lie in [0, 1], got {x}"));
    }
    Ok(x)
}

fn count(v: &str) -> std::result::Result<usize, String> {
    v.parse().map_err(|_| format!("expected a nonnegative integer, got `{v}`"))
}

fn positive_count(v: &str, key: &str) -> std::result::Result<usize, String> {
    match count(v)? {
        0 => Err(format!("{key} must be at least 1")),
        n => Ok(n),
    }
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" => Ok(true),
        "false" | "off" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn path(v: &str) -> std::result::Result<PathBuf, String> {
    if v.is_empty() {
        return Err("expected a path".into());
    }
    Ok(PathBuf::from(v))
}

/// `500, 500` or `none` (no hidden layers).
fn widths(v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|w| match w.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("layer widths must be positive integers, got `{}`", w.trim())),
            Ok(n) => Ok(n),
        })
        .collect()
}

/// `x, y; x, y; ...`
fn means(v: &str) -> std::result::Result<Vec<[f64; 2]>, String> {
    v.split(';')
        .map(|pair| {
            let coords: Vec<&str> = pair.split(',').map(str::trim).collect();
            match coords.as_slice() {
                [x, y] => Ok([real(x)?, real(y)?]),
                _ => Err(format!("means are `x, y` pairs separated by `;`, got `{}`", pair.trim())),
            }
        })
        .collect()
}
