//! Run configuration: a flat map of dotted keys.
//!
//! Values come from built-in defaults, then an optional config file (either
//! `key = value` lines or a previous run's manifest), then command-line
//! flags. The merged map is recorded in every manifest and can be replayed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use enkcvs::{Architecture, ModelSpec, NoiseModel, TrainConfig};

/// Known keys with their defaults. An empty default means "unset".
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("data.csv", ""),
    ("data.label_col", "label"),
    ("data.true_label_col", ""),
    ("data.num_classes", ""),
    ("data.blobs", ""),
    ("data.test_csv", ""),
    ("test.n", "1000"),
    ("noise", ""),
    ("selection.K", "10"),
    ("selection.M", "5"),
    ("selection.t", "2"),
    ("selection.file", ""),
    ("loss.gamma", "0.2"),
    ("train.alpha", "0.3"),
    ("train.epochs", "20"),
    ("train.batch_size", "64"),
    ("train.lr", "0.01"),
    ("train.momentum", "0.9"),
    ("train.weight_decay", "0.0001"),
    ("train.val_fraction", "0.1"),
    ("model.arch", "linear"),
    ("model.init_scale", "1"),
    ("model.file", ""),
    ("theory.Q", "10"),
    ("theory.epsilon", "0.2"),
    ("theory.q", "0.9"),
    ("theory.mode", "corrected"),
    ("theory.N", "1000000"),
    ("sweep.K", "2,4,6,8,10"),
    ("sweep.M", "1,2,3,4,5"),
    ("sweep.t", "1"),
    ("sweep.epsilon", "0.4"),
    ("sweep.pairs", ""),
    ("sweep.seeds", "0,1,2,3,4"),
    ("sweep.retrain", "false"),
];

/// A configuration problem, reported with exit status 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn fail<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        let values = KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Self { values }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => fail(format!("unknown config key `{key}`")),
        }
    }

    /// Applies a config file. `.json` files are read as run manifests.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .or_else(|e| fail(format!("cannot read config {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value = serde_json::from_str(&text)
                .or_else(|e| fail(format!("{}: {e}", path.display())))?;
            let Some(config) = manifest.get("config").and_then(|c| c.as_object()) else {
                return fail(format!("{}: no `config` object", path.display()));
            };
            for (k, v) in config {
                let Some(v) = v.as_str() else {
                    return fail(format!("{}: `{k}` must be a string", path.display()));
                };
                self.set(k, v)?;
            }
            return Ok(());
        }
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return fail(format!("{}:{}: expected `key = value`", path.display(), lineno + 1));
            };
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn opt(&self, key: &str) -> Option<&str> {
        Some(self.get(key)).filter(|v| !v.is_empty())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .or_else(|_| fail(format!("config `{key}`: cannot parse `{raw}`")))
    }

    fn parse_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.opt(key).map(|_| self.parse(key)).transpose()
    }

    fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .or_else(|_| fail(format!("config `{key}`: cannot parse `{s}`")))
            })
            .collect()
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub n: usize,
    pub dim: usize,
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        label_col: String,
        true_label_col: Option<String>,
        num_classes: Option<usize>,
        test_csv: Option<PathBuf>,
    },
    Blobs(BlobSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryArgs {
    pub num_classes: usize,
    pub epsilon: f64,
    pub q: f64,
    pub literal: bool,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepArgs {
    pub ks: Vec<usize>,
    pub ms: Vec<usize>,
    pub ts: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub pairs: Option<Vec<(usize, usize)>>,
    pub seeds: Vec<u64>,
    pub retrain: bool,
}

/// Typed view of [`Settings`], validated field by field.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<DataSource>,
    pub test_n: usize,
    pub noise: Option<String>,
    pub k: usize,
    pub m: usize,
    pub t: usize,
    pub selection_file: Option<PathBuf>,
    pub gamma: f64,
    pub train: TrainConfig,
    pub architecture: Architecture,
    pub init_scale: f64,
    pub model_file: Option<PathBuf>,
    pub theory: TheoryArgs,
    pub sweep: SweepArgs,
}

fn parse_blobs(raw: &str) -> Result<BlobSpec> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    let bad = || ConfigError(format!("config `data.blobs`: expected Q,N,D,SEPARATION, got `{raw}`"));
    if parts.len() != 4 {
        return Err(bad());
    }
    Ok(BlobSpec {
        num_classes: parts[0].parse().map_err(|_| bad())?,
        n: parts[1].parse().map_err(|_| bad())?,
        dim: parts[2].parse().map_err(|_| bad())?,
        separation: parts[3].parse().map_err(|_| bad())?,
    })
}

fn parse_architecture(raw: &str) -> Result<Architecture> {
    match raw.split_once(':') {
        None if raw == "linear" => Ok(Architecture::Linear),
        Some(("hidden", w)) => match w.parse() {
            Ok(width) if width > 0 => Ok(Architecture::OneHidden { width }),
            _ => fail(format!("config `model.arch`: bad hidden width `{w}`")),
        },
        _ => fail(format!("config `model.arch`: expected `linear` or `hidden:WIDTH`, got `{raw}`")),
    }
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let data = match (s.opt("data.csv"), s.opt("data.blobs")) {
            (Some(_), Some(_)) => return fail("config: set only one of `data.csv` and `data.blobs`"),
            (Some(path), None) => Some(DataSource::Csv {
                path: path.into(),
                label_col: s.get("data.label_col").to_string(),
                true_label_col: s.opt("data.true_label_col").map(str::to_string),
                num_classes: s.parse_opt("data.num_classes")?,
                test_csv: s.opt("data.test_csv").map(PathBuf::from),
            }),
            (None, Some(raw)) => Some(DataSource::Blobs(parse_blobs(raw)?)),
            (None, None) => None,
        };
        let train = TrainConfig {
            epochs: s.parse("train.epochs")?,
            batch_size: s.parse("train.batch_size")?,
            learning_rate: s.parse("train.lr")?,
            momentum: s.parse("train.momentum")?,
            weight_decay: s.parse("train.weight_decay")?,
            mixup_alpha: s.parse("train.alpha")?,
            val_fraction: s.parse("train.val_fraction")?,
            seed: 0,
        };
        train.validate().map_err(|e| ConfigError(e.to_string()))?;

        let mode = s.get("theory.mode");
        let literal = match mode {
            "corrected" => false,
            "literal" => true,
            other => return fail(format!("config `theory.mode`: expected corrected or literal, got `{other}`")),
        };
        let pairs = s
            .opt("sweep.pairs")
            .map(enkcvs::noise::parse_pairs)
            .transpose()
            .map_err(|e| ConfigError(format!("config `sweep.pairs`: {e}")))?;

        let cfg = Self {
            seed: s.parse("seed")?,
            data,
            test_n: s.parse("test.n")?,
            noise: s.opt("noise").map(str::to_string),
            k: s.parse("selection.K")?,
            m: s.parse("selection.M")?,
            t: s.parse("selection.t")?,
            selection_file: s.opt("selection.file").map(PathBuf::from),
            gamma: s.parse("loss.gamma")?,
            train,
            architecture: parse_architecture(s.get("model.arch"))?,
            init_scale: s.parse("model.init_scale")?,
            model_file: s.opt("model.file").map(PathBuf::from),
            theory: TheoryArgs {
                num_classes: s.parse("theory.Q")?,
                epsilon: s.parse("theory.epsilon")?,
                q: s.parse("theory.q")?,
                literal,
                samples: s.parse("theory.N")?,
            },
            sweep: SweepArgs {
                ks: s.parse_list("sweep.K")?,
                ms: s.parse_list("sweep.M")?,
                ts: s.parse_list("sweep.t")?,
                epsilons: s.parse_list("sweep.epsilon")?,
                pairs,
                seeds: s.parse_list("sweep.seeds")?,
                retrain: s.parse("sweep.retrain")?,
            },
        };
        cfg.check_ranges()?;
        Ok(cfg)
    }

    fn check_ranges(&self) -> Result<()> {
        if self.k < 2 {
            return fail(format!("config `selection.K`: {} must be at least 2", self.k));
        }
        if self.m == 0 {
            return fail("config `selection.M`: must be at least 1");
        }
        if self.t == 0 || self.t > self.m {
            return fail(format!("config `selection.t`: {} must satisfy 0 < t <= M = {}", self.t, self.m));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail("config `loss.gamma`: must be >= 0");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return fail("config `model.init_scale`: must be positive");
        }
        if let Some(DataSource::Blobs(b)) = &self.data {
            if b.num_classes < 2 || b.n < b.num_classes || b.dim == 0 || b.separation.is_nan() || b.separation < 0.0 {
                return fail("config `data.blobs`: need Q >= 2, N >= Q, D >= 1, SEPARATION >= 0");
            }
        }
        if let Some(DataSource::Csv { num_classes: Some(0), .. }) = &self.data {
            return fail("config `data.num_classes`: must be positive");
        }
        let th = &self.theory;
        if th.num_classes < 2 {
            return fail("config `theory.Q`: must be at least 2");
        }
        if !(0.0..=1.0).contains(&th.epsilon) {
            return fail("config `theory.epsilon`: must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&th.q) {
            return fail("config `theory.q`: must lie in [0, 1]");
        }
        if th.samples == 0 {
            return fail("config `theory.N`: must be at least 1");
        }
        if let Some(noise) = &self.noise {
            // Syntax only; the class count is checked against the data later.
            NoiseModel::parse(noise, 1000).map_err(|e| ConfigError(format!("config `noise`: {e}")))?;
        }
        Ok(())
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            architecture: self.architecture,
            input_dim,
            num_classes,
            init_scale: self.init_scale,
        }
    }
}
