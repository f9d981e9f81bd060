//! Run configuration files.
//!
//! The format is a flat `key = value` text with `[section]` headers. `#` and
//! `;` start comments. Every key is optional; unknown keys are errors.
//!
//! ```text
//! [data]
//! path = interactions.txt   # split per user into train/test
//! train_fraction = 0.8
//! split_seed = 0
//! min_user_interactions = 0
//! min_item_interactions = 0
//! # or a fixed split instead of `path`:
//! # train = train.txt
//! # test = test.txt
//!
//! [model]
//! encoder = lightgcn        # mf | gcmc | lrgccf | lightgcn
//! dim = 128
//! layers = 2
//! combination = sum         # sum | mean | last | concat
//! message_dropout = 0.2     # defaults to 0 when the graph term is active
//! activation = relu         # identity | relu | sigmoid | leaky_relu:<slope>
//!
//! [loss]
//! main = dcl                # dcl | bpr
//! t1 = 0.8
//! t2 = 0.1
//! tau_plus = 0.001
//! beta = 0.1
//! lambda = 0.0001
//! drop_probability = 0.1
//! use_clamp = true
//! clamp_floor = lower       # lower | upper
//!
//! [train]
//! epochs = 100
//! batch_size = 2048
//! lr = 0.001
//! seed = 0
//! eval_every = 1
//! early_stop_patience = none
//! k = 20
//! renormalize_views = true
//! scoring = auto            # auto | dot | cosine
//! eval_threads = 1
//!
//! [output]
//! dir = runs/example
//! name = example
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cgcf_core::autodiff::Activation;
use cgcf_core::losses::LossConfigError;
use cgcf_core::{
    ClampFloor, Combination, EncoderConfig, EncoderKind, FilterConfig, LossConfig, MainLoss,
    Scoring, TrainConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("`{field}`: path {path} does not exist")]
    MissingPath { field: String, path: PathBuf },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// One interaction file, split per user.
    Single {
        path: PathBuf,
        train_fraction: f64,
        split_seed: u64,
    },
    /// Fixed train and test files.
    Presplit { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// Applied to the single-file source before splitting.
    pub filter: FilterConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub eval_threads: usize,
}

pub const DEFAULT_MESSAGE_DROPOUT: f64 = 0.2;

/// Message dropout used when the config leaves it unset: off while the graph
/// term is active.
pub fn default_message_dropout(loss: &LossConfig) -> f64 {
    if loss.gcl_enabled() {
        0.0
    } else {
        DEFAULT_MESSAGE_DROPOUT
    }
}

impl RunConfig {
    /// Defaults for everything except the data source.
    pub fn with_data(data: DataConfig, output_dir: PathBuf) -> Self {
        let loss = LossConfig::default();
        let train = TrainConfig {
            encoder: EncoderConfig {
                message_dropout: default_message_dropout(&loss),
                ..EncoderConfig::lightgcn(128, 2)
            },
            loss,
            ..TrainConfig::default()
        };
        Self {
            name: "run".to_string(),
            data,
            train,
            output_dir,
            eval_threads: 1,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut entries = Entries::parse(text)?;
        let cfg = Self::from_entries(&mut entries, base)?;
        if let Some(key) = entries.map.keys().next() {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn from_entries(e: &mut Entries, base: &Path) -> Result<Self, ConfigError> {
        let path = e.take("data.path");
        let train_file = e.take("data.train");
        let test_file = e.take("data.test");
        let train_fraction: f64 = e.parse_or("data.train_fraction", 0.8)?;
        let split_seed: u64 = e.parse_or("data.split_seed", 0)?;
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(invalid(
                "data.train_fraction",
                "must lie strictly between 0 and 1",
            ));
        }
        let source = match (path, train_file, test_file) {
            (Some(p), None, None) => DataSource::Single {
                path: base.join(p),
                train_fraction,
                split_seed,
            },
            (None, Some(tr), Some(te)) => DataSource::Presplit {
                train: base.join(tr),
                test: base.join(te),
            },
            (None, None, None) => {
                return Err(invalid(
                    "data.path",
                    "no dataset given; set `path` or `train` and `test`",
                ))
            }
            (Some(_), _, _) => {
                return Err(invalid(
                    "data.path",
                    "give either `path` or `train` and `test`, not both",
                ))
            }
            (None, Some(_), None) => {
                return Err(invalid("data.test", "`train` needs a matching `test`"))
            }
            (None, None, Some(_)) => {
                return Err(invalid("data.train", "`test` needs a matching `train`"))
            }
        };
        let filter = FilterConfig {
            min_user_interactions: e.parse_or("data.min_user_interactions", 0)?,
            min_item_interactions: e.parse_or("data.min_item_interactions", 0)?,
        };

        let kind = e.parse_with(
            "model.encoder",
            EncoderKind::LightGcn,
            EncoderKind::parse,
            "mf, gcmc, lrgccf or lightgcn",
        )?;
        let default_layers = match kind {
            EncoderKind::Mf => 0,
            EncoderKind::GcMc => 1,
            _ => 2,
        };
        let default_combination = match kind {
            EncoderKind::LightGcn => Combination::Sum,
            EncoderKind::LrGccf => Combination::Concat,
            _ => Combination::Last,
        };
        let dim: usize = e.parse_or("model.dim", 128)?;
        let layers: usize = e.parse_or("model.layers", default_layers)?;
        let combination = e.parse_with(
            "model.combination",
            default_combination,
            Combination::parse,
            "sum, mean, last or concat",
        )?;
        let explicit_dropout: Option<f64> = e.parse_opt("model.message_dropout")?;
        let activation = e.parse_with(
            "model.activation",
            Activation::Relu,
            parse_activation,
            "identity, relu, sigmoid or leaky_relu:<slope>",
        )?;
        if dim == 0 {
            return Err(invalid("model.dim", "must be positive"));
        }
        match kind {
            EncoderKind::Mf if layers != 0 => {
                return Err(invalid("model.layers", "mf has no layers; use 0"))
            }
            EncoderKind::GcMc if layers != 1 => {
                return Err(invalid("model.layers", "gcmc uses exactly one layer"))
            }
            EncoderKind::LightGcn | EncoderKind::LrGccf if layers == 0 => {
                return Err(invalid("model.layers", "must be at least 1"))
            }
            _ => {}
        }

        let defaults = LossConfig::default();
        let loss = LossConfig {
            main: e.parse_with("loss.main", defaults.main, MainLoss::parse, "dcl or bpr")?,
            t1: e.parse_or("loss.t1", defaults.t1)?,
            t2: e.parse_or("loss.t2", defaults.t2)?,
            tau_plus: e.parse_or("loss.tau_plus", defaults.tau_plus)?,
            beta: e.parse_or("loss.beta", defaults.beta)?,
            lambda: e.parse_or("loss.lambda", defaults.lambda)?,
            drop_probability: e.parse_or("loss.drop_probability", defaults.drop_probability)?,
            use_clamp: e.parse_or("loss.use_clamp", defaults.use_clamp)?,
            clamp_floor: e.parse_with(
                "loss.clamp_floor",
                defaults.clamp_floor,
                ClampFloor::parse,
                "lower or upper",
            )?,
        };
        validate_loss(&loss)?;
        let message_dropout = explicit_dropout.unwrap_or_else(|| default_message_dropout(&loss));
        if !(0.0..1.0).contains(&message_dropout) {
            return Err(invalid("model.message_dropout", "must lie in [0, 1)"));
        }

        let td = TrainConfig::default();
        let train = TrainConfig {
            epochs: e.parse_or("train.epochs", td.epochs)?,
            batch_size: e.parse_or("train.batch_size", td.batch_size)?,
            lr: e.parse_or("train.lr", td.lr)?,
            seed: e.parse_or("train.seed", td.seed)?,
            encoder: EncoderConfig {
                kind,
                dim,
                layers,
                combination,
                message_dropout,
                activation,
            },
            loss,
            eval_every: e.parse_or("train.eval_every", td.eval_every)?,
            early_stop_patience: match e.take("train.early_stop_patience") {
                None => None,
                Some(v) if v == "none" => None,
                Some(v) => Some(parse_value::<usize>("train.early_stop_patience", &v)?),
            },
            k: e.parse_or("train.k", td.k)?,
            renormalize_views: e.parse_or("train.renormalize_views", td.renormalize_views)?,
            scoring: e.parse_with("train.scoring", None, parse_scoring, "auto, dot or cosine")?,
        };
        validate_train(&train)?;
        let eval_threads: usize = e.parse_or("train.eval_threads", 1)?;
        if eval_threads == 0 {
            return Err(invalid("train.eval_threads", "must be at least 1"));
        }

        let output_dir = e
            .take("output.dir")
            .map(|d| base.join(d))
            .ok_or_else(|| invalid("output.dir", "missing"))?;
        let name = e.take("output.name").unwrap_or_else(|| "run".to_string());
        Ok(Self {
            name,
            data: DataConfig { source, filter },
            train,
            output_dir,
            eval_threads,
        })
    }

    fn check_paths(&self) -> Result<(), ConfigError> {
        let paths: Vec<(&str, &Path)> = match &self.data.source {
            DataSource::Single { path, .. } => vec![("data.path", path)],
            DataSource::Presplit { train, test } => {
                vec![("data.train", train), ("data.test", test)]
            }
        };
        for (field, path) in paths {
            if !path.is_file() {
                return Err(ConfigError::MissingPath {
                    field: field.to_string(),
                    path: path.to_path_buf(),
                });
            }
        }
        Ok(())
    }

    /// Re-validates after programmatic edits (ablation variants, sweep values).
    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_loss(&self.train.loss)?;
        if !(0.0..1.0).contains(&self.train.encoder.message_dropout) {
            return Err(invalid("model.message_dropout", "must lie in [0, 1)"));
        }
        validate_train(&self.train)?;
        self.check_paths()
    }

    /// Every setting spelled out, with absolute paths; parsing the result
    /// gives back an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let enc = &t.encoder;
        let l = &t.loss;
        let mut s = String::new();
        let abs = |p: &Path| {
            std::path::absolute(p)
                .unwrap_or_else(|_| p.to_path_buf())
                .display()
                .to_string()
        };
        s.push_str("[data]\n");
        match &self.data.source {
            DataSource::Single {
                path,
                train_fraction,
                split_seed,
            } => {
                let _ = writeln!(s, "path = {}", abs(path));
                let _ = writeln!(s, "train_fraction = {train_fraction}");
                let _ = writeln!(s, "split_seed = {split_seed}");
            }
            DataSource::Presplit { train, test } => {
                let _ = writeln!(s, "train = {}", abs(train));
                let _ = writeln!(s, "test = {}", abs(test));
            }
        }
        let _ = writeln!(
            s,
            "min_user_interactions = {}",
            self.data.filter.min_user_interactions
        );
        let _ = writeln!(
            s,
            "min_item_interactions = {}",
            self.data.filter.min_item_interactions
        );
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "encoder = {}", enc.kind.name());
        let _ = writeln!(s, "dim = {}", enc.dim);
        let _ = writeln!(s, "layers = {}", enc.layers);
        let _ = writeln!(s, "combination = {}", enc.combination.name());
        let _ = writeln!(s, "message_dropout = {}", enc.message_dropout);
        let _ = writeln!(s, "activation = {}", activation_name(enc.activation));
        let _ = writeln!(s, "\n[loss]");
        let _ = writeln!(s, "main = {}", l.main.name());
        let _ = writeln!(s, "t1 = {}", l.t1);
        let _ = writeln!(s, "t2 = {}", l.t2);
        let _ = writeln!(s, "tau_plus = {}", l.tau_plus);
        let _ = writeln!(s, "beta = {}", l.beta);
        let _ = writeln!(s, "lambda = {}", l.lambda);
        let _ = writeln!(s, "drop_probability = {}", l.drop_probability);
        let _ = writeln!(s, "use_clamp = {}", l.use_clamp);
        let _ = writeln!(s, "clamp_floor = {}", l.clamp_floor.name());
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "lr = {}", t.lr);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "eval_every = {}", t.eval_every);
        match t.early_stop_patience {
            Some(p) => {
                let _ = writeln!(s, "early_stop_patience = {p}");
            }
            None => s.push_str("early_stop_patience = none\n"),
        }
        let _ = writeln!(s, "k = {}", t.k);
        let _ = writeln!(s, "renormalize_views = {}", t.renormalize_views);
        let _ = writeln!(s, "scoring = {}", t.scoring.map_or("auto", Scoring::name));
        let _ = writeln!(s, "eval_threads = {}", self.eval_threads);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", abs(&self.output_dir));
        let _ = writeln!(s, "name = {}", self.name);
        s
    }
}

fn validate_loss(l: &LossConfig) -> Result<(), ConfigError> {
    l.validate()
        .map_err(|LossConfigError::OutOfRange { field, range, .. }| {
            invalid(&format!("loss.{field}"), format!("must be {range}"))
        })
}

fn validate_train(t: &TrainConfig) -> Result<(), ConfigError> {
    if t.epochs == 0 {
        return Err(invalid("train.epochs", "must be at least 1"));
    }
    if t.batch_size < t.min_batch() {
        return Err(invalid(
            "train.batch_size",
            format!(
                "must be at least {} for loss {}",
                t.min_batch(),
                t.loss.main.name()
            ),
        ));
    }
    if !(t.lr >= 0.0 && t.lr.is_finite()) {
        return Err(invalid("train.lr", "must be a finite non-negative number"));
    }
    if t.eval_every == 0 {
        return Err(invalid("train.eval_every", "must be at least 1"));
    }
    if t.early_stop_patience == Some(0) {
        return Err(invalid(
            "train.early_stop_patience",
            "must be at least 1 or `none`",
        ));
    }
    if t.k == 0 {
        return Err(invalid("train.k", "must be at least 1"));
    }
    t.validate().map_err(|e| invalid("train", e.to_string()))
}

pub fn parse_activation(s: &str) -> Option<Activation> {
    match s {
        "identity" => Some(Activation::Identity),
        "relu" => Some(Activation::Relu),
        "sigmoid" => Some(Activation::Sigmoid),
        _ => {
            let slope: f64 = s.strip_prefix("leaky_relu:")?.parse().ok()?;
            slope.is_finite().then_some(Activation::LeakyRelu(slope))
        }
    }
}

pub fn activation_name(a: Activation) -> String {
    match a {
        Activation::Identity => "identity".to_string(),
        Activation::Relu => "relu".to_string(),
        Activation::Sigmoid => "sigmoid".to_string(),
        Activation::LeakyRelu(slope) => format!("leaky_relu:{slope}"),
    }
}

fn parse_scoring(s: &str) -> Option<Option<Scoring>> {
    if s == "auto" {
        Some(None)
    } else {
        Scoring::parse(s).map(Some)
    }
}

fn parse_value<T: FromStr>(field: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| {
        invalid(
            field,
            format!("cannot parse `{v}` as {}", std::any::type_name::<T>()),
        )
    })
}

/// `section.key -> value`, drained as fields are read.
struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        const SECTIONS: [&str; 5] = ["data", "model", "loss", "train", "output"];
        let mut map = BTreeMap::new();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |reason: String| ConfigError::Syntax {
                line: n + 1,
                reason,
            };
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| syntax("unterminated section header".into()))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(syntax(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected `key = value`".into()))?;
            let section = section
                .as_deref()
                .ok_or_else(|| syntax("key outside any section".into()))?;
            let full = format!("{section}.{}", key.trim());
            if map.insert(full.clone(), value.trim().to_string()).is_some() {
                return Err(syntax(format!("`{full}` set twice")));
            }
        }
        Ok(Self { map })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse_opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        self.take(key).map(|v| parse_value(key, &v)).transpose()
    }

    fn parse_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    fn parse_with<T>(
        &mut self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> Option<T>,
        expected: &str,
    ) -> Result<T, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => {
                parse(&v).ok_or_else(|| invalid(key, format!("`{v}` is not one of {expected}")))
            }
        }
    }
}
