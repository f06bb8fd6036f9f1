//! Line-oriented `key = value` run configuration with dotted keys.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::context_rep::Alignment;
use crate::decay::{DecayKind, DecayLevel, LevelConfig, Schedule};
use crate::decoder::{DEFAULT_BEAM_SIZE, DEFAULT_MAX_LEN};
use crate::model::ModelConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}:{line}: {message}")]
    Syntax { origin: String, line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot use `{value}`: {message}")]
    BadValue { key: String, value: String, message: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub schemas: PathBuf,
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    /// Split read by `evaluate`, `link` and `export-attention`; falls back
    /// to `dev`, then `train`.
    pub eval: Option<PathBuf>,
    /// Precomputed embedding records; trainable lookup embeddings when absent.
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankConfig {
    pub enabled: bool,
    /// First training epoch (1-based) after which beams are mined; none
    /// means mining happens in `rerank-train` from the final checkpoint.
    pub mine_start_epoch: Option<usize>,
    pub samples: PathBuf,
    pub checkpoint: PathBuf,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataPaths,
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub clip: f64,
    pub beam_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub predictions: PathBuf,
    pub log: PathBuf,
    /// Write gold queries as predictions (evaluator pass-through check).
    pub gold_passthrough: bool,
    pub rerank: RerankConfig,
}

impl RunConfig {
    /// Defaults with the given data files.
    pub fn new(schemas: impl Into<PathBuf>, train: impl Into<PathBuf>) -> Self {
        let model = ModelConfig::default();
        RunConfig {
            data: DataPaths {
                schemas: schemas.into(),
                train: train.into(),
                dev: None,
                eval: None,
                embeddings: None,
            },
            rerank: RerankConfig {
                enabled: false,
                mine_start_epoch: None,
                samples: "rerank_samples.tsv".into(),
                checkpoint: "reranker.ckpt".into(),
                embed_dim: model.embed_dim,
                hidden: model.hidden,
                lr: 1e-3,
                epochs: 5,
            },
            model,
            lr: 1e-3,
            epochs: 50,
            clip: 5.0,
            beam_size: DEFAULT_BEAM_SIZE,
            max_len: DEFAULT_MAX_LEN,
            seed: 0,
            checkpoint: "model.ckpt".into(),
            predictions: "predictions.sql".into(),
            log: "train.log".into(),
            gold_passthrough: false,
        }
    }

    pub fn eval_split(&self) -> &Path {
        self.data
            .eval
            .as_deref()
            .or(self.data.dev.as_deref())
            .unwrap_or(&self.data.train)
    }

    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: origin.to_string(),
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Syntax {
                    origin: origin.to_string(),
                    line: i + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        let path = |key: &str, entries: &BTreeMap<String, String>| entries.get(key).map(|v| base.join(v));
        let schemas = path("data.schemas", &entries).ok_or(ConfigError::Missing("data.schemas"))?;
        let train = path("data.train", &entries).ok_or(ConfigError::Missing("data.train"))?;
        let mut cfg = RunConfig::new(schemas, train);
        cfg.checkpoint = base.join(&cfg.checkpoint);
        cfg.predictions = base.join(&cfg.predictions);
        cfg.log = base.join(&cfg.log);
        cfg.rerank.samples = base.join(&cfg.rerank.samples);
        cfg.rerank.checkpoint = base.join(&cfg.rerank.checkpoint);

        // flat decay keys first so per-level keys override them
        let mut keys: Vec<&String> = entries.keys().collect();
        // and a schedule before its parameters
        keys.sort_by_key(|k| {
            (
                k.starts_with("decay.token.") || k.starts_with("decay.utterance."),
                !k.ends_with(".schedule"),
                k.as_str(),
            )
        });
        let mut rerank_widths = (None, None);
        for key in keys {
            let value = &entries[key];
            let bad = |message: &str| ConfigError::BadValue {
                key: key.clone(),
                value: value.clone(),
                message: message.to_string(),
            };
            let float = || value.parse::<f64>().map_err(|_| bad("not a number"));
            let int = || value.parse::<usize>().map_err(|_| bad("not a non-negative integer"));
            let boolean = || value.parse::<bool>().map_err(|_| bad("not true/false"));
            let d = &mut cfg.model.decay;
            match key.as_str() {
                "data.schemas" | "data.train" => {}
                "data.dev" => cfg.data.dev = Some(base.join(value)),
                "data.eval" => cfg.data.eval = Some(base.join(value)),
                "data.embeddings" => cfg.data.embeddings = Some(base.join(value)),
                "model.embed_dim" => cfg.model.embed_dim = int()?,
                "model.hidden" => cfg.model.hidden = int()?,
                "model.gate_hidden" => cfg.model.gate_hidden = int()?,
                "model.editing" => cfg.model.editing = boolean()?,
                "model.alignment" => cfg.model.alignment = parse_alignment(value).ok_or_else(|| bad("expected key_aligned or as_printed_swapped"))?,
                "dcre.heads" => cfg.model.heads = int()?,
                "dcre.layers" => cfg.model.dcre_layers = int()?,
                "decay.level" => d.level = parse_level(value).ok_or_else(|| bad("expected off, token, utterance or both"))?,
                "decay.floor" => d.floor = float()?,
                "decay.lambda" => d.lambda = float()?,
                "decay.kind" | "decay.schedule" | "decay.k" | "decay.c" => {
                    let field = &key["decay.".len()..];
                    set_level_field(&mut d.token, field, value).map_err(|m| bad(&m))?;
                    set_level_field(&mut d.utterance, field, value).map_err(|m| bad(&m))?;
                }
                k if k.starts_with("decay.token.") => {
                    set_level_field(&mut d.token, &k["decay.token.".len()..], value).map_err(|m| bad(&m))?
                }
                k if k.starts_with("decay.utterance.") => {
                    set_level_field(&mut d.utterance, &k["decay.utterance.".len()..], value).map_err(|m| bad(&m))?
                }
                "optim.lr" => cfg.lr = float()?,
                "optim.epochs" => cfg.epochs = int()?,
                "optim.clip" => cfg.clip = float()?,
                "decode.beam_size" => cfg.beam_size = int()?,
                "decode.max_len" => cfg.max_len = int()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("not a non-negative integer"))?,
                "checkpoint" => cfg.checkpoint = base.join(value),
                "predictions" => cfg.predictions = base.join(value),
                "log" => cfg.log = base.join(value),
                "evaluate.gold_passthrough" => cfg.gold_passthrough = boolean()?,
                "rerank.enabled" => cfg.rerank.enabled = boolean()?,
                "rerank.mine_start_epoch" => {
                    cfg.rerank.mine_start_epoch = if value == "none" { None } else { Some(int()?) }
                }
                "rerank.samples" => cfg.rerank.samples = base.join(value),
                "rerank.checkpoint" => cfg.rerank.checkpoint = base.join(value),
                "rerank.embed_dim" => rerank_widths.0 = Some(int()?),
                "rerank.hidden" => rerank_widths.1 = Some(int()?),
                "rerank.lr" => cfg.rerank.lr = float()?,
                "rerank.epochs" => cfg.rerank.epochs = int()?,
                _ => return Err(ConfigError::UnknownKey(key.clone())),
            }
        }
        // reranker widths follow the model's unless set
        cfg.rerank.embed_dim = rerank_widths.0.unwrap_or(cfg.model.embed_dim);
        cfg.rerank.hidden = rerank_widths.1.unwrap_or(cfg.model.hidden);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    // negated comparisons so that NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.lr > 0.0) || !(self.rerank.lr > 0.0) {
            return Err(ConfigError::Invalid("learning rates must be positive".into()));
        }
        if !(self.clip > 0.0) {
            return Err(ConfigError::Invalid("optim.clip must be positive".into()));
        }
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(ConfigError::Invalid("decode.beam_size and decode.max_len must be positive".into()));
        }
        if self.rerank.embed_dim == 0 || self.rerank.hidden == 0 {
            return Err(ConfigError::Invalid("reranker widths must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its value; paths are written as given (absolute after
    /// loading), so the output parses back to an equal configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            writeln!(s, "{k} = {v}").expect("write to string");
        };
        let p = |p: &Path| p.display().to_string();
        put("data.schemas", p(&self.data.schemas));
        put("data.train", p(&self.data.train));
        if let Some(d) = &self.data.dev {
            put("data.dev", p(d));
        }
        if let Some(d) = &self.data.eval {
            put("data.eval", p(d));
        }
        if let Some(d) = &self.data.embeddings {
            put("data.embeddings", p(d));
        }
        let m = &self.model;
        put("model.embed_dim", m.embed_dim.to_string());
        put("model.hidden", m.hidden.to_string());
        put("model.gate_hidden", m.gate_hidden.to_string());
        put("model.editing", m.editing.to_string());
        put("model.alignment", alignment_name(m.alignment).into());
        put("dcre.heads", m.heads.to_string());
        put("dcre.layers", m.dcre_layers.to_string());
        put("decay.level", level_name(m.decay.level).into());
        put("decay.floor", m.decay.floor.to_string());
        put("decay.lambda", m.decay.lambda.to_string());
        for (name, level) in [("token", &m.decay.token), ("utterance", &m.decay.utterance)] {
            put(&format!("decay.{name}.kind"), kind_name(level.kind).into());
            let (schedule, k, c) = match level.schedule {
                Schedule::Linear { k, c } => ("linear", k, Some(c)),
                Schedule::Exponential { k } => ("exponential", k, None),
                Schedule::InverseSigmoid { k } => ("inverse_sigmoid", k, None),
            };
            put(&format!("decay.{name}.schedule"), schedule.into());
            put(&format!("decay.{name}.k"), k.to_string());
            if let Some(c) = c {
                put(&format!("decay.{name}.c"), c.to_string());
            }
        }
        put("optim.lr", self.lr.to_string());
        put("optim.epochs", self.epochs.to_string());
        put("optim.clip", self.clip.to_string());
        put("decode.beam_size", self.beam_size.to_string());
        put("decode.max_len", self.max_len.to_string());
        put("seed", self.seed.to_string());
        put("checkpoint", p(&self.checkpoint));
        put("predictions", p(&self.predictions));
        put("log", p(&self.log));
        put("evaluate.gold_passthrough", self.gold_passthrough.to_string());
        let r = &self.rerank;
        put("rerank.enabled", r.enabled.to_string());
        put(
            "rerank.mine_start_epoch",
            r.mine_start_epoch.map_or("none".to_string(), |e| e.to_string()),
        );
        put("rerank.samples", p(&r.samples));
        put("rerank.checkpoint", p(&r.checkpoint));
        put("rerank.embed_dim", r.embed_dim.to_string());
        put("rerank.hidden", r.hidden.to_string());
        put("rerank.lr", r.lr.to_string());
        put("rerank.epochs", r.epochs.to_string());
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_text()).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn set_level_field(level: &mut LevelConfig, field: &str, value: &str) -> Result<(), String> {
    let number = || value.parse::<f64>().map_err(|_| "not a number".to_string());
    match field {
        "kind" => {
            level.kind = match value {
                "gate" => DecayKind::Gate,
                "schedule" => DecayKind::Schedule,
                _ => return Err("expected gate or schedule".into()),
            }
        }
        "schedule" => {
            level.schedule = match value {
                "linear" => Schedule::Linear { k: 1.0, c: 0.1 },
                "exponential" => Schedule::Exponential { k: 0.9 },
                "inverse_sigmoid" => Schedule::InverseSigmoid { k: 1.0 },
                _ => return Err("expected linear, exponential or inverse_sigmoid".into()),
            }
        }
        "k" => {
            let v = number()?;
            match &mut level.schedule {
                Schedule::Linear { k, .. } | Schedule::Exponential { k } | Schedule::InverseSigmoid { k } => *k = v,
            }
        }
        "c" => match &mut level.schedule {
            Schedule::Linear { c, .. } => *c = number()?,
            _ => return Err("only the linear schedule has c".into()),
        },
        _ => return Err(format!("unknown decay field `{field}`")),
    }
    Ok(())
}

fn parse_level(v: &str) -> Option<DecayLevel> {
    Some(match v {
        "off" => DecayLevel::Off,
        "token" => DecayLevel::Token,
        "utterance" => DecayLevel::Utterance,
        "both" => DecayLevel::Both,
        _ => return None,
    })
}

fn level_name(l: DecayLevel) -> &'static str {
    match l {
        DecayLevel::Off => "off",
        DecayLevel::Token => "token",
        DecayLevel::Utterance => "utterance",
        DecayLevel::Both => "both",
    }
}

fn kind_name(k: DecayKind) -> &'static str {
    match k {
        DecayKind::Gate => "gate",
        DecayKind::Schedule => "schedule",
    }
}

fn parse_alignment(v: &str) -> Option<Alignment> {
    match v {
        "key_aligned" => Some(Alignment::KeyAligned),
        "as_printed_swapped" => Some(Alignment::AsPrintedSwapped),
        _ => None,
    }
}

fn alignment_name(a: Alignment) -> &'static str {
    match a {
        Alignment::KeyAligned => "key_aligned",
        Alignment::AsPrintedSwapped => "as_printed_swapped",
    }
}
