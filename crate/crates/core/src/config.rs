//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional
//! and falls back to its default; unknown keys and malformed values are
//! rejected. [`ExperimentConfig::to_text`] writes every key, so the output
//! loads back to an equal value.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::BackboneKind;
use crate::distill::PairNormalization;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistillMethod {
    None,
    Rd,
    Cd,
    Unkd,
}

impl DistillMethod {
    pub fn name(self) -> &'static str {
        match self {
            DistillMethod::None => "none",
            DistillMethod::Rd => "rd",
            DistillMethod::Cd => "cd",
            DistillMethod::Unkd => "unkd",
        }
    }
}

impl fmt::Display for DistillMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistillMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(DistillMethod::None),
            "rd" => Ok(DistillMethod::Rd),
            "cd" => Ok(DistillMethod::Cd),
            "unkd" => Ok(DistillMethod::Unkd),
            other => Err(Error::Config(format!(
                "unknown distillation method {other:?}"
            ))),
        }
    }
}

/// Where interactions come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// A delimited interaction file.
    File(PathBuf),
    /// The built-in long-tailed generator.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset_name: String,
    pub source: DataSource,
    pub delimiter: String,
    pub rating_threshold: f64,
    pub min_interactions: usize,
    pub user_fraction: f64,
    pub test_fraction: f64,
    pub valid_fraction: f64,
    pub synthetic_users: usize,
    pub synthetic_items: usize,

    pub backbone: BackboneKind,
    pub lightgcn_layers: usize,
    pub teacher_dim: usize,
    pub student_dim: usize,
    pub init_scale: f64,

    pub learning_rate: f64,
    pub l2_coeff: f64,
    pub teacher_learning_rate: f64,
    pub teacher_l2_coeff: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,

    pub method: DistillMethod,
    pub k: usize,
    pub lambda: f64,
    pub mu: f64,
    pub soft_labels: usize,
    /// Pairs drawn per (user, group) each epoch; 0 means one per candidate.
    pub pairs_per_group: usize,
    pub freeze_pairs: bool,
    /// Averaging of the pairwise distillation loss over a batch.
    pub distill_normalization: PairNormalization,
    pub sweep_k_max: usize,

    pub eval_n: usize,
    pub seed: u64,

    pub causal_users: usize,
    pub causal_items: usize,
    pub causal_gammas: Vec<f64>,
    pub causal_exponent: f64,
    pub causal_max_popularity: u32,
    /// `None` picks the median-popularity item.
    pub causal_baseline: Option<usize>,

    pub allow_off_grid: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_name: "synthetic".into(),
            source: DataSource::Synthetic,
            delimiter: "::".into(),
            rating_threshold: 0.0,
            min_interactions: 20,
            user_fraction: 1.0,
            test_fraction: 0.1,
            valid_fraction: 0.1,
            synthetic_users: 600,
            synthetic_items: 400,
            backbone: BackboneKind::Mf,
            lightgcn_layers: 2,
            teacher_dim: 100,
            student_dim: 10,
            init_scale: 0.1,
            learning_rate: 1e-3,
            l2_coeff: 1e-4,
            teacher_learning_rate: 1e-3,
            teacher_l2_coeff: 1e-4,
            batch_size: 2048,
            max_epochs: 1000,
            patience: 100,
            method: DistillMethod::Unkd,
            k: 4,
            lambda: 0.5,
            mu: 10.0,
            soft_labels: 40,
            pairs_per_group: 0,
            freeze_pairs: false,
            distill_normalization: PairNormalization::PerUser,
            sweep_k_max: 8,
            eval_n: 10,
            seed: 0,
            causal_users: 50,
            causal_items: 200,
            causal_gammas: vec![0.0, 0.5, 1.0, 2.0],
            causal_exponent: 1.5,
            causal_max_popularity: 30,
            causal_baseline: None,
            allow_off_grid: false,
        }
    }
}

const RATE_GRID: [f64; 3] = [0.01, 0.001, 0.0001];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

/// Shortest text that parses back to the same `f64`.
fn real(x: f64) -> String {
    format!("{x:?}")
}

impl ExperimentConfig {
    /// Assigns one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset_name" => self.dataset_name = v.to_string(),
            "dataset_path" => {
                self.source = if v.is_empty() || v == "synthetic" {
                    DataSource::Synthetic
                } else {
                    DataSource::File(PathBuf::from(v))
                }
            }
            "delimiter" => {
                self.delimiter = match v {
                    "tab" | "\\t" => "\t".into(),
                    "comma" => ",".into(),
                    "space" | "whitespace" => " ".into(),
                    other => other.into(),
                }
            }
            "rating_threshold" => self.rating_threshold = parse(key, v)?,
            "min_interactions" => self.min_interactions = parse(key, v)?,
            "user_fraction" => self.user_fraction = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "valid_fraction" => self.valid_fraction = parse(key, v)?,
            "synthetic_users" => self.synthetic_users = parse(key, v)?,
            "synthetic_items" => self.synthetic_items = parse(key, v)?,
            "backbone" => self.backbone = parse(key, v)?,
            "lightgcn_layers" => self.lightgcn_layers = parse(key, v)?,
            "teacher_dim" => self.teacher_dim = parse(key, v)?,
            "student_dim" => self.student_dim = parse(key, v)?,
            "init_scale" => self.init_scale = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "l2_coeff" => self.l2_coeff = parse(key, v)?,
            "teacher_learning_rate" => self.teacher_learning_rate = parse(key, v)?,
            "teacher_l2_coeff" => self.teacher_l2_coeff = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "method" => self.method = v.parse()?,
            "k" => self.k = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "mu" => self.mu = parse(key, v)?,
            "soft_labels" => self.soft_labels = parse(key, v)?,
            "pairs_per_group" => self.pairs_per_group = parse(key, v)?,
            "freeze_pairs" => self.freeze_pairs = parse_bool(key, v)?,
            "distill_normalization" => self.distill_normalization = v.parse()?,
            "sweep_k_max" => self.sweep_k_max = parse(key, v)?,
            "eval_n" => self.eval_n = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "causal_users" => self.causal_users = parse(key, v)?,
            "causal_items" => self.causal_items = parse(key, v)?,
            "causal_gammas" => {
                self.causal_gammas = v
                    .split(',')
                    .map(|g| parse(key, g.trim()))
                    .collect::<Result<_>>()?
            }
            "causal_exponent" => self.causal_exponent = parse(key, v)?,
            "causal_max_popularity" => self.causal_max_popularity = parse(key, v)?,
            "causal_baseline" => {
                self.causal_baseline = match v {
                    "" | "median" => None,
                    idx => Some(parse(key, idx)?),
                }
            }
            "allow_off_grid" => self.allow_off_grid = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses config text over the defaults, then validates.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", idx + 1)))?;
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", idx + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative dataset paths resolve
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse_text(&text)?;
        if let DataSource::File(p) = &cfg.source {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.source = DataSource::File(dir.join(p));
                }
            }
        }
        cfg.check_files()?;
        Ok(cfg)
    }

    /// Fails if the configured dataset file does not exist.
    pub fn check_files(&self) -> Result<()> {
        match &self.source {
            DataSource::File(p) if !p.is_file() => Err(Error::Config(format!(
                "dataset file {} not found",
                p.display()
            ))),
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.dataset_name.is_empty() || self.dataset_name.contains([',', '\n']) {
            return err(format!(
                "dataset_name {:?} must be nonempty without commas",
                self.dataset_name
            ));
        }
        if self.delimiter.is_empty() {
            return err("delimiter must be nonempty".into());
        }
        if self.min_interactions == 0 {
            return err("min_interactions must be at least 1".into());
        }
        if !(self.user_fraction > 0.0 && self.user_fraction <= 1.0) {
            return err(format!(
                "user_fraction {} must be in (0, 1]",
                self.user_fraction
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0)
            || !(self.valid_fraction >= 0.0 && self.valid_fraction < 1.0)
        {
            return err("test_fraction must be in (0, 1) and valid_fraction in [0, 1)".into());
        }
        if self.teacher_dim == 0
            || self.student_dim == 0
            || self.synthetic_users == 0
            || self.synthetic_items == 0
        {
            return err("dimensions and synthetic sizes must be positive".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return err(format!(
                "init_scale {} must be finite and >= 0",
                self.init_scale
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_n == 0 {
            return err("batch_size, max_epochs and eval_n must be positive".into());
        }
        if !(1..=10).contains(&self.k) {
            return err(format!("k = {} outside [1, 10]", self.k));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return err(format!("lambda = {} outside [0, 1]", self.lambda));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return err(format!("mu = {} must be positive", self.mu));
        }
        if self.soft_labels < self.k {
            return err(format!(
                "soft_labels {} smaller than k {}",
                self.soft_labels, self.k
            ));
        }
        if !(1..=10).contains(&self.sweep_k_max) {
            return err(format!(
                "sweep_k_max = {} outside [1, 10]",
                self.sweep_k_max
            ));
        }
        for rate in [
            self.learning_rate,
            self.l2_coeff,
            self.teacher_learning_rate,
            self.teacher_l2_coeff,
        ] {
            if !(rate >= 0.0 && rate.is_finite()) {
                return err(format!("rate {rate} must be finite and >= 0"));
            }
        }
        if self.learning_rate == 0.0 || self.teacher_learning_rate == 0.0 {
            return err("learning rates must be positive".into());
        }
        if self.causal_users == 0 || self.causal_items == 0 || self.causal_max_popularity == 0 {
            return err("causal sizes must be positive".into());
        }
        if self.causal_gammas.is_empty()
            || self
                .causal_gammas
                .iter()
                .any(|g| !(*g >= 0.0 && g.is_finite()))
        {
            return err("causal_gammas must be a nonempty list of values >= 0".into());
        }
        if !(self.causal_exponent.is_finite()) {
            return err("causal_exponent must be finite".into());
        }
        if matches!(self.causal_baseline, Some(b) if b >= self.causal_items) {
            return err("causal_baseline out of range".into());
        }
        if !self.allow_off_grid {
            let off = |what: &str, v: f64| {
                err(format!("{what} = {v} is off the experiment grid (set allow_off_grid = true to override)"))
            };
            if ![10.0, 20.0].contains(&self.mu) {
                return off("mu", self.mu);
            }
            if ![30, 40].contains(&self.soft_labels) {
                return off("soft_labels", self.soft_labels as f64);
            }
            for (what, v) in [
                ("learning_rate", self.learning_rate),
                ("l2_coeff", self.l2_coeff),
                ("teacher_learning_rate", self.teacher_learning_rate),
                ("teacher_l2_coeff", self.teacher_l2_coeff),
            ] {
                if !RATE_GRID.contains(&v) {
                    return off(what, v);
                }
            }
        }
        Ok(())
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        let dataset_path = match &self.source {
            DataSource::Synthetic => "synthetic".to_string(),
            DataSource::File(p) => p.display().to_string(),
        };
        let delimiter = match self.delimiter.as_str() {
            "\t" => "tab".to_string(),
            " " => "space".to_string(),
            d => d.to_string(),
        };
        let gammas: Vec<String> = self.causal_gammas.iter().map(|g| real(*g)).collect();
        let lines: Vec<(&str, String)> = vec![
            ("dataset_name", self.dataset_name.clone()),
            ("dataset_path", dataset_path),
            ("delimiter", delimiter),
            ("rating_threshold", real(self.rating_threshold)),
            ("min_interactions", self.min_interactions.to_string()),
            ("user_fraction", real(self.user_fraction)),
            ("test_fraction", real(self.test_fraction)),
            ("valid_fraction", real(self.valid_fraction)),
            ("synthetic_users", self.synthetic_users.to_string()),
            ("synthetic_items", self.synthetic_items.to_string()),
            ("backbone", self.backbone.name().to_string()),
            ("lightgcn_layers", self.lightgcn_layers.to_string()),
            ("teacher_dim", self.teacher_dim.to_string()),
            ("student_dim", self.student_dim.to_string()),
            ("init_scale", real(self.init_scale)),
            ("learning_rate", real(self.learning_rate)),
            ("l2_coeff", real(self.l2_coeff)),
            ("teacher_learning_rate", real(self.teacher_learning_rate)),
            ("teacher_l2_coeff", real(self.teacher_l2_coeff)),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("method", self.method.name().to_string()),
            ("k", self.k.to_string()),
            ("lambda", real(self.lambda)),
            ("mu", real(self.mu)),
            ("soft_labels", self.soft_labels.to_string()),
            ("pairs_per_group", self.pairs_per_group.to_string()),
            ("freeze_pairs", self.freeze_pairs.to_string()),
            (
                "distill_normalization",
                self.distill_normalization.name().to_string(),
            ),
            ("sweep_k_max", self.sweep_k_max.to_string()),
            ("eval_n", self.eval_n.to_string()),
            ("seed", self.seed.to_string()),
            ("causal_users", self.causal_users.to_string()),
            ("causal_items", self.causal_items.to_string()),
            ("causal_gammas", gammas.join(",")),
            ("causal_exponent", real(self.causal_exponent)),
            (
                "causal_max_popularity",
                self.causal_max_popularity.to_string(),
            ),
            (
                "causal_baseline",
                self.causal_baseline
                    .map_or("median".into(), |b| b.to_string()),
            ),
            ("allow_off_grid", self.allow_off_grid.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn teacher_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.teacher_learning_rate,
            l2_coeff: self.teacher_l2_coeff,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            eval_n: self.eval_n,
        }
    }

    pub fn student_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            l2_coeff: self.l2_coeff,
            ..self.teacher_train_config()
        }
    }

    /// Layers for the configured backbone (0 for MF).
    pub fn layers(&self) -> usize {
        match self.backbone {
            BackboneKind::Mf => 0,
            BackboneKind::LightGcn => self.lightgcn_layers,
        }
    }
}
