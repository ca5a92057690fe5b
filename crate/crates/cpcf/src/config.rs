//! `key = value` experiment configuration.
//!
//! List-valued keys (`method`, `seed`, `alpha`, `calib_ratio`, `lr`) take
//! comma-separated values; `run` needs a single value for all but `seed`.
//! Lines starting with `#` are comments, so the echo block at the top of a run
//! log parses back into the configuration that produced it.

use std::path::PathBuf;

use cpcf_core::continual::{
    AIdealMode, CurriculumConfig, Method, DEFAULT_ALPHA, DEFAULT_BASE_EPOCHS, DEFAULT_BATCH_SIZE, DEFAULT_CALIB_RATIO,
    DEFAULT_FISHER_SAMPLES, DEFAULT_INCR_EPOCHS, DEFAULT_LAMBDA, DEFAULT_LR,
};
use cpcf_core::metrics::Pooling;
use cpcf_core::optim::OptimizerKind;

use crate::{CliError, Result};

pub const DATA_DIR_ENV: &str = "CPCF_DATA_DIR";
pub const DATASETS: [&str; 5] = ["mnist", "kmnist", "fashionmnist", "cifar10", "blobs"];

/// Synthetic corpus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobsConfig {
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub test_fraction: f64,
    pub data_seed: u64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            per_class: 200,
            dim: 784,
            spread: 0.3,
            test_fraction: 0.2,
            data_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
    pub calib_ratios: Vec<f64>,
    pub lrs: Vec<f64>,
    pub lambda: f64,
    pub base_epochs: usize,
    pub incr_epochs: usize,
    pub batch_size: usize,
    pub fisher_samples: usize,
    pub optimizer: OptimizerKind,
    pub a_ideal: AIdealMode,
    pub hidden: Option<[usize; 2]>,
    pub pooling: Pooling,
    pub blobs: BlobsConfig,
    pub output_dir: PathBuf,
    pub save_model: bool,
    pub reset_optimizer: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: "mnist".into(),
            data_dir: PathBuf::from("data"),
            methods: vec![Method::Plain],
            seeds: vec![0],
            alphas: vec![DEFAULT_ALPHA],
            calib_ratios: vec![DEFAULT_CALIB_RATIO],
            lrs: vec![DEFAULT_LR],
            lambda: DEFAULT_LAMBDA,
            base_epochs: DEFAULT_BASE_EPOCHS,
            incr_epochs: DEFAULT_INCR_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            fisher_samples: DEFAULT_FISHER_SAMPLES,
            optimizer: OptimizerKind::Adam,
            a_ideal: AIdealMode::PostBase,
            hidden: None,
            pooling: Pooling::Pooled,
            blobs: BlobsConfig::default(),
            output_dir: PathBuf::from("out"),
            save_model: false,
            reset_optimizer: false,
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> CliError {
    CliError::Config(format!("{key}={value}: expected {want}"))
}

fn list<T>(key: &str, value: &str, want: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(bad(key, value, want));
    }
    items.into_iter().map(|s| parse(s).ok_or_else(|| bad(key, value, want))).collect()
}

fn one<T: std::str::FromStr>(key: &str, value: &str, want: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value, want))
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Defaults, with `data_dir` taken from `CPCF_DATA_DIR` when set.
    pub fn from_env() -> Self {
        let mut cfg = ExperimentConfig::default();
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            cfg.data_dir = PathBuf::from(dir);
        }
        cfg
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        let v = value;
        match key {
            "dataset" => {
                if !DATASETS.contains(&v) {
                    return Err(bad(key, value, &format!("one of {}", DATASETS.join(", "))));
                }
                self.dataset = v.to_string();
            }
            "data_dir" => self.data_dir = PathBuf::from(v),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "method" => self.methods = list(key, v, "plain, ewc_single or ewc_multi", Method::parse)?,
            "seed" => self.seeds = list(key, v, "unsigned integers", |s| s.parse().ok())?,
            "alpha" => self.alphas = list(key, v, "numbers in (0, 1)", |s| s.parse().ok())?,
            "calib_ratio" => self.calib_ratios = list(key, v, "numbers in (0, 1)", |s| s.parse().ok())?,
            "lr" => self.lrs = list(key, v, "non-negative numbers", |s| s.parse().ok())?,
            "lambda" => self.lambda = one(key, v, "a non-negative number")?,
            "base_epochs" => self.base_epochs = one(key, v, "an integer")?,
            "incr_epochs" => self.incr_epochs = one(key, v, "an integer")?,
            "batch_size" => self.batch_size = one(key, v, "an integer")?,
            "fisher_samples" => self.fisher_samples = one(key, v, "an integer")?,
            "optimizer" => self.optimizer = OptimizerKind::parse(v).ok_or_else(|| bad(key, value, "adam or sgd"))?,
            "a_ideal" => self.a_ideal = AIdealMode::parse(v).ok_or_else(|| bad(key, value, "post_base or offline"))?,
            "hidden" => {
                self.hidden = match v {
                    "default" => None,
                    _ => {
                        let dims = list(key, v, "default or two widths h1,h2", |s| s.parse::<usize>().ok())?;
                        match dims[..] {
                            [h1, h2] if h1 > 0 && h2 > 0 => Some([h1, h2]),
                            _ => return Err(bad(key, value, "default or two widths h1,h2")),
                        }
                    }
                }
            }
            "pooling" => {
                self.pooling = match v {
                    "pooled" => Pooling::Pooled,
                    "mean_of_runs" => Pooling::MeanOfRuns,
                    _ => return Err(bad(key, value, "pooled or mean_of_runs")),
                }
            }
            "blobs_per_class" => self.blobs.per_class = one(key, v, "an integer")?,
            "blobs_dim" => self.blobs.dim = one(key, v, "an integer")?,
            "blobs_spread" => self.blobs.spread = one(key, v, "a number")?,
            "blobs_test_fraction" => self.blobs.test_fraction = one(key, v, "a number in (0, 1)")?,
            "blobs_seed" => self.blobs.data_seed = one(key, v, "an unsigned integer")?,
            "reset_optimizer" => self.reset_optimizer = one(key, v, "true or false")?,
            "save_model" => self.save_model = one(key, v, "true or false")?,
            other => return Err(CliError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` assignments, as given to `--set`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        for a in assignments {
            let a = a.as_ref();
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{a}' is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. Blank lines and `#` comments
    /// are skipped. Errors name the line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CliError::Config(m));
        if self.methods.is_empty() || self.seeds.is_empty() || self.alphas.is_empty() || self.calib_ratios.is_empty() || self.lrs.is_empty() {
            return err("method, seed, alpha, calib_ratio and lr need at least one value".into());
        }
        let dup = |v: &[f64]| v.iter().enumerate().any(|(i, a)| v[..i].contains(a));
        if dup(&self.alphas) || dup(&self.calib_ratios) || dup(&self.lrs) {
            return err("alpha, calib_ratio and lr lists must not repeat values".into());
        }
        if self.methods.iter().enumerate().any(|(i, m)| self.methods[..i].contains(m)) || self.seeds.iter().enumerate().any(|(i, s)| self.seeds[..i].contains(s)) {
            return err("method and seed lists must not repeat values".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return err(format!("alpha {a} outside (0, 1)"));
        }
        if let Some(c) = self.calib_ratios.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
            return err(format!("calib_ratio {c} outside (0, 1)"));
        }
        if let Some(lr) = self.lrs.iter().find(|lr| !(**lr >= 0.0 && lr.is_finite())) {
            return err(format!("lr {lr} must be finite and >= 0"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return err(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        if self.fisher_samples == 0 {
            return err("fisher_samples must be at least 1".into());
        }
        if self.dataset == "blobs" {
            let b = &self.blobs;
            if b.per_class < 2 || b.dim == 0 {
                return err("blobs_per_class must be >= 2 and blobs_dim >= 1".into());
            }
            if !(b.test_fraction > 0.0 && b.test_fraction < 1.0) {
                return err(format!("blobs_test_fraction {} outside (0, 1)", b.test_fraction));
            }
            if !(b.spread >= 0.0 && b.spread.is_finite()) {
                return err(format!("blobs_spread {} must be finite and >= 0", b.spread));
            }
        }
        let input = self.input_dim();
        if self.hidden.is_none() && input != 784 && input != 1024 {
            return err(format!("input dimension {input} needs an explicit hidden=h1,h2 override"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.dataset.as_str() {
            "cifar10" => 1024,
            "blobs" => self.blobs.dim,
            _ => 784,
        }
    }

    /// Configuration of one sweep cell.
    pub fn cell(&self, method: Method, seed: u64, alpha: f64, calib_ratio: f64, lr: f64) -> ExperimentConfig {
        ExperimentConfig {
            methods: vec![method],
            seeds: vec![seed],
            alphas: vec![alpha],
            calib_ratios: vec![calib_ratio],
            lrs: vec![lr],
            ..self.clone()
        }
    }

    /// Curriculum settings for one run. Uses the first value of each list.
    pub fn curriculum(&self) -> CurriculumConfig {
        CurriculumConfig {
            base_epochs: self.base_epochs,
            incr_epochs: self.incr_epochs,
            lr: self.lrs[0],
            lambda: self.lambda,
            method: self.methods[0],
            alpha: self.alphas[0],
            calib_ratio: self.calib_ratios[0],
            seed: self.seeds[0],
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            fisher_samples: self.fisher_samples,
            a_ideal: self.a_ideal,
            hidden_override: self.hidden,
            reset_optimizer: self.reset_optimizer,
        }
    }

    /// Every setting that influences the data rows, as `(key, value)` pairs.
    /// Floats use the shortest representation that parses back exactly.
    pub fn echo(&self) -> Vec<(String, String)> {
        let f = |v: &f64| format!("{v}");
        let mut out = vec![
            ("dataset", self.dataset.clone()),
            ("data_dir", self.data_dir.display().to_string()),
            ("method", join(&self.methods, |m| m.name().to_string())),
            ("seed", join(&self.seeds, |s| s.to_string())),
            ("alpha", join(&self.alphas, f)),
            ("calib_ratio", join(&self.calib_ratios, f)),
            ("lr", join(&self.lrs, f)),
            ("lambda", f(&self.lambda)),
            ("base_epochs", self.base_epochs.to_string()),
            ("incr_epochs", self.incr_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("fisher_samples", self.fisher_samples.to_string()),
            ("optimizer", self.optimizer.name().to_string()),
            ("a_ideal", self.a_ideal.name().to_string()),
            ("reset_optimizer", self.reset_optimizer.to_string()),
            (
                "hidden",
                match self.hidden {
                    Some([a, b]) => format!("{a},{b}"),
                    None => "default".to_string(),
                },
            ),
        ];
        if self.dataset == "blobs" {
            out.extend([
                ("blobs_per_class", self.blobs.per_class.to_string()),
                ("blobs_dim", self.blobs.dim.to_string()),
                ("blobs_spread", f(&self.blobs.spread)),
                ("blobs_test_fraction", f(&self.blobs.test_fraction)),
                ("blobs_seed", self.blobs.data_seed.to_string()),
            ]);
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}
