//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid config; unknown and repeated keys are rejected.
//! The resolved config renders as sorted `key=value` lines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corpus::SyntheticSpec;
use crate::error::{Error, Result};
use crate::metrics::RobustnessOptions;
use crate::params::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// JSONL corpus; `None` generates the synthetic task from `synth`.
    pub corpus: Option<PathBuf>,
    pub synth: SyntheticSpec,
    pub split: (f64, f64, f64),
    /// Seeds the split, the initialization and the batch order.
    pub seed: u64,
    pub train: TrainConfig,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    pub t_max: usize,
    pub ctrl_hidden: usize,
    pub robust: RobustnessOptions,
    /// Trained parameters to evaluate instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            synth: SyntheticSpec::default(),
            split: (0.8, 0.1, 0.1),
            seed: 0,
            train: TrainConfig::default(),
            d_model: 32,
            heads: 2,
            layers: 2,
            ff: 128,
            t_max: 64,
            ctrl_hidden: 64,
            robust: RobustnessOptions::default(),
            checkpoint: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "adam_eps",
    "batch_size",
    "beta1",
    "beta2",
    "checkpoint",
    "clip_norm",
    "corpus",
    "ctrl_hidden",
    "d_model",
    "ff",
    "freeze_index",
    "heads",
    "k",
    "lambda",
    "layers",
    "lr",
    "max_len",
    "max_rouge_drop",
    "miss_penalty",
    "optimizer",
    "probe_interval",
    "refresh_interval",
    "robust_seed",
    "robust_substitutions",
    "robust_variants",
    "seed",
    "split",
    "steps",
    "synth_distractors",
    "synth_doc_len",
    "synth_docs",
    "synth_examples",
    "synth_seed",
    "synth_vocab",
    "t_max",
    "variant",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str, n: usize) -> Result<Vec<T>> {
    let items: Vec<T> = v.split(',').map(|s| num(key, s.trim())).collect::<Result<_>>()?;
    if items.len() != n {
        return Err(Error::Config(format!(
            "{key}: expected {n} comma-separated values, got {v:?}"
        )));
    }
    Ok(items)
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {raw:?}"),
            })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key {k:?}"),
                });
            }
            cfg.set(k, v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "corpus" => self.corpus = optional_path(v),
            "checkpoint" => self.checkpoint = optional_path(v),
            "synth_docs" => self.synth.n_docs = num(key, v)?,
            "synth_examples" => self.synth.n_examples = num(key, v)?,
            "synth_seed" => self.synth.seed = num(key, v)?,
            "synth_vocab" => self.synth.vocab_size = num(key, v)?,
            "synth_doc_len" => self.synth.doc_len = num(key, v)?,
            "synth_distractors" => {
                let d = list(key, v, 3)?;
                self.synth.distractors_per_query = [d[0], d[1], d[2]];
            }
            "split" => {
                let s = list(key, v, 3)?;
                self.split = (s[0], s[1], s[2]);
            }
            "seed" => self.seed = num(key, v)?,
            "steps" => t.steps = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "optimizer" => t.optimizer = v.parse()?,
            "beta1" => t.beta1 = num(key, v)?,
            "beta2" => t.beta2 = num(key, v)?,
            "adam_eps" => t.adam_eps = num(key, v)?,
            "lambda" => t.lambda = num(key, v)?,
            "k" => t.k = if v == "all" { None } else { Some(num(key, v)?) },
            "refresh_interval" => t.refresh_interval = num(key, v)?,
            "freeze_index" => t.freeze_index = num(key, v)?,
            "variant" => t.variant = v.parse()?,
            "probe_interval" => t.probe_interval = num(key, v)?,
            "clip_norm" => t.clip_norm = num(key, v)?,
            "miss_penalty" => t.miss_penalty = if v == "none" { None } else { Some(num(key, v)?) },
            "max_len" => t.max_len = num(key, v)?,
            "d_model" => self.d_model = num(key, v)?,
            "heads" => self.heads = num(key, v)?,
            "layers" => self.layers = num(key, v)?,
            "ff" => self.ff = num(key, v)?,
            "t_max" => self.t_max = num(key, v)?,
            "ctrl_hidden" => self.ctrl_hidden = num(key, v)?,
            "robust_seed" => self.robust.seed = num(key, v)?,
            "robust_variants" => self.robust.n_variants = num(key, v)?,
            "robust_substitutions" => self.robust.substitutions = num(key, v)?,
            "max_rouge_drop" => self.robust.max_rouge_drop = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model(1).validate()?;
        let (a, b, c) = self.split;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split must be three positive ratios summing to 1, got {a},{b},{c}"
            )));
        }
        Ok(())
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn model(&self, vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab,
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            ff: self.ff,
            t_max: self.t_max,
            ctrl_hidden: self.ctrl_hidden,
        }
    }

    pub fn resolved(&self) -> BTreeMap<&'static str, String> {
        let t = &self.train;
        let s = &self.synth;
        let d = s.distractors_per_query;
        let entries: Vec<(&'static str, String)> = vec![
            ("adam_eps", t.adam_eps.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("checkpoint", path_str(&self.checkpoint)),
            ("clip_norm", t.clip_norm.to_string()),
            ("corpus", path_str(&self.corpus)),
            ("ctrl_hidden", self.ctrl_hidden.to_string()),
            ("d_model", self.d_model.to_string()),
            ("ff", self.ff.to_string()),
            ("freeze_index", t.freeze_index.to_string()),
            ("heads", self.heads.to_string()),
            ("k", t.k.map_or("all".into(), |k| k.to_string())),
            ("lambda", t.lambda.to_string()),
            ("layers", self.layers.to_string()),
            ("lr", t.lr.to_string()),
            ("max_len", t.max_len.to_string()),
            ("max_rouge_drop", self.robust.max_rouge_drop.to_string()),
            ("miss_penalty", t.miss_penalty.map_or("none".into(), |p| p.to_string())),
            ("optimizer", t.optimizer.to_string()),
            ("probe_interval", t.probe_interval.to_string()),
            ("refresh_interval", t.refresh_interval.to_string()),
            ("robust_seed", self.robust.seed.to_string()),
            ("robust_substitutions", self.robust.substitutions.to_string()),
            ("robust_variants", self.robust.n_variants.to_string()),
            ("seed", self.seed.to_string()),
            ("split", format!("{},{},{}", self.split.0, self.split.1, self.split.2)),
            ("steps", t.steps.to_string()),
            ("synth_distractors", format!("{},{},{}", d[0], d[1], d[2])),
            ("synth_doc_len", s.doc_len.to_string()),
            ("synth_docs", s.n_docs.to_string()),
            ("synth_examples", s.n_examples.to_string()),
            ("synth_seed", s.seed.to_string()),
            ("synth_vocab", s.vocab_size.to_string()),
            ("t_max", self.t_max.to_string()),
            ("variant", t.variant.to_string()),
        ];
        entries.into_iter().collect()
    }

    /// Sorted `key=value` lines; parses back to the same config.
    pub fn render(&self) -> String {
        self.resolved().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
