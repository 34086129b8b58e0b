//! The experiment commands. Each writes into `<out>/<run_id>/`, where the
//! run id is derived from the command, the resolved config and the corpus
//! content, and finishes with a `manifest.json` listing every output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::gradcheck::{composite_gradcheck, GradCheckSummary};
use crate::controller::AblationVariant;
use crate::corpus::{generate_synthetic_raw, split, write_jsonl, Ambiguity, Corpus, QAExample, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::generator::GenerationResult;
use crate::index::build_index;
use crate::metrics::{evaluate, write_metrics_csv, MetricsReport};
use crate::params::{load_checkpoint, write_checkpoint, ModelConfig, ModelParams, CHECKPOINT_VERSION};
use crate::training::{train, TrainLog};

pub const MANIFEST_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The corpus plus the hash of its on-disk bytes.
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub fingerprint: String,
}

pub fn load_corpus(cfg: &RunConfig) -> Result<LoadedCorpus> {
    let (raw, bytes) = match &cfg.corpus {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Parse {
                line: 0,
                msg: e.to_string(),
            })?;
            (crate::corpus::parse_jsonl(&text)?, bytes)
        }
        None => {
            let raw = generate_synthetic_raw(&cfg.synth)?;
            let mut bytes = Vec::new();
            write_jsonl(&raw, &mut bytes).map_err(|e| Error::io("<memory>", e))?;
            (raw, bytes)
        }
    };
    Ok(LoadedCorpus {
        corpus: Corpus::from_raw(&raw)?,
        fingerprint: sha256_hex(&bytes),
    })
}

pub fn run_id(command: &str, resolved: &str, fingerprint: &str) -> String {
    let digest = sha256_hex(format!("{command}\n{resolved}\n{fingerprint}").as_bytes());
    format!("{command}-{}", &digest[..16])
}

#[derive(Serialize)]
struct Manifest<'a> {
    run_id: &'a str,
    command: &'a str,
    config: &'a BTreeMap<&'static str, String>,
    corpus_fingerprint: &'a str,
    seeds: BTreeMap<&'static str, u64>,
    outputs: Vec<String>,
    versions: BTreeMap<&'static str, String>,
}

/// A run directory that records what is written into it.
pub struct RunDir {
    pub run_id: String,
    pub path: PathBuf,
    outputs: Vec<String>,
}

impl RunDir {
    pub fn create(out_root: &Path, run_id: String) -> Result<Self> {
        let path = out_root.join(&run_id);
        std::fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            run_id,
            path,
            outputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        self.outputs.push(name.to_string());
        Ok(p)
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, fingerprint: &str) -> Result<PathBuf> {
        self.outputs.sort();
        let resolved = cfg.resolved();
        let m = Manifest {
            run_id: &self.run_id,
            command,
            config: &resolved,
            corpus_fingerprint: fingerprint,
            seeds: BTreeMap::from([
                ("seed", cfg.seed),
                ("synth_seed", cfg.synth.seed),
                ("robust_seed", cfg.robust.seed),
            ]),
            outputs: self.outputs.clone(),
            versions: BTreeMap::from([
                ("dynrag", env!("CARGO_PKG_VERSION").to_string()),
                ("checkpoint_format", CHECKPOINT_VERSION.to_string()),
                ("manifest_format", MANIFEST_VERSION.to_string()),
            ]),
        };
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        let p = self.path.join("manifest.json");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(self.path)
    }
}

/// What a command produced, for the CLI to print.
#[derive(Clone, Debug)]
pub struct CommandOutput {
    pub run_dir: Option<PathBuf>,
    pub summary: String,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

fn checkpoint_bytes(model: &ModelConfig, params: &ModelParams) -> Vec<u8> {
    csv_bytes(|b| write_checkpoint(model, params, b))
}

fn traces_jsonl(results: &[GenerationResult]) -> Vec<u8> {
    let mut s = String::new();
    for (i, r) in results.iter().enumerate() {
        for t in &r.traces {
            s.push_str(&t.to_json_line_for(i));
            s.push('\n');
        }
    }
    s.into_bytes()
}

struct Prepared {
    loaded: LoadedCorpus,
    split: Split<QAExample>,
    model: ModelConfig,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let loaded = load_corpus(cfg)?;
    let split = split(&loaded.corpus.examples, cfg.split, cfg.seed)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::contract("train and test splits must both be non-empty"));
    }
    let model = cfg.model(loaded.corpus.vocab.len());
    Ok(Prepared { loaded, split, model })
}

fn train_model(cfg: &RunConfig, p: &Prepared, variant: AblationVariant) -> Result<(ModelParams, TrainLog)> {
    let tc = crate::training::TrainConfig {
        variant,
        ..cfg.train_config()
    };
    let init = ModelParams::init(&p.model, cfg.seed)?;
    let out = train(
        &tc,
        &p.model,
        &p.split.train,
        &p.split.valid,
        &p.loaded.corpus.docs,
        init,
    )?;
    Ok((out.params, out.log))
}

/// Scores `examples` overall and per ambiguity bucket present.
fn evaluate_buckets(
    cfg: &RunConfig,
    p: &Prepared,
    params: &ModelParams,
    examples: &[QAExample],
    variant: AblationVariant,
) -> Result<(Vec<MetricsReport>, Vec<GenerationResult>)> {
    let index = build_index(&p.loaded.corpus.docs, &params.encoder)?;
    let gen = crate::training::TrainConfig {
        variant,
        ..cfg.train_config()
    }
    .generate_options(&p.model);
    let perturber = p.loaded.corpus.perturber();
    let robust = Some((&perturber, &cfg.robust));
    let (all, results) = evaluate(examples, None, params, &index, &gen, robust)?;
    let mut rows = vec![all];
    for b in Ambiguity::ALL {
        let subset: Vec<QAExample> = examples.iter().filter(|e| e.ambiguity == b).cloned().collect();
        if !subset.is_empty() {
            rows.push(evaluate(&subset, Some(b), params, &index, &gen, robust)?.0);
        }
    }
    Ok((rows, results))
}

fn summarize(rows: &[MetricsReport]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{:<5} bleu={:.4} rouge_l={:.4} retrieval_acc={:.4} robustness={:.1}% n={}",
            r.bucket.map_or("all", Ambiguity::as_str),
            r.bleu,
            r.rouge_l,
            r.retrieval_acc,
            r.robustness_pct,
            r.n_examples
        );
    }
    s
}

pub fn cmd_synth(spec: &SyntheticSpec, out_root: &Path) -> Result<CommandOutput> {
    let raw = generate_synthetic_raw(spec)?;
    let mut bytes = Vec::new();
    write_jsonl(&raw, &mut bytes).map_err(|e| Error::io("<memory>", e))?;
    let fingerprint = sha256_hex(&bytes);
    let cfg = RunConfig {
        synth: spec.clone(),
        ..RunConfig::default()
    };
    let resolved = cfg.render();
    let mut dir = RunDir::create(out_root, run_id("synth", &resolved, &fingerprint))?;
    let path = dir.write("corpus.jsonl", &bytes)?;
    let run_dir = dir.finish("synth", &cfg, &fingerprint)?;
    Ok(CommandOutput {
        run_dir: Some(run_dir),
        summary: format!(
            "{} docs, {} examples, sha256 {}\n{}\n",
            raw.docs.len(),
            raw.examples.len(),
            fingerprint,
            path.display()
        ),
    })
}

pub fn cmd_train(cfg: &RunConfig, out_root: &Path, trace: bool) -> Result<CommandOutput> {
    let p = prepare(cfg)?;
    let resolved = cfg.render();
    let id = run_id("train", &resolved, &p.loaded.fingerprint);
    let (params, log) = train_model(cfg, &p, cfg.train.variant)?;
    let (rows, results) = evaluate_buckets(cfg, &p, &params, &p.split.test, cfg.train.variant)?;

    let mut dir = RunDir::create(out_root, id)?;
    dir.write("config.txt", resolved.as_bytes())?;
    dir.write("checkpoint.bin", &checkpoint_bytes(&p.model, &params))?;
    dir.write("train_log.csv", &csv_bytes(|b| log.write_csv(b)))?;
    let tagged: Vec<(String, MetricsReport)> = rows.iter().map(|r| (dir.run_id.clone(), r.clone())).collect();
    dir.write("metrics.csv", &csv_bytes(|b| write_metrics_csv(b, &tagged)))?;
    if trace {
        dir.write("traces.jsonl", &traces_jsonl(&results))?;
    }
    let probe = log.last_probe().map_or("n/a".into(), |p| format!("{p:.4}"));
    let summary = format!("final probe retrieval accuracy {probe}\n{}", summarize(&rows));
    let run_dir = dir.finish("train", cfg, &p.loaded.fingerprint)?;
    Ok(CommandOutput {
        run_dir: Some(run_dir),
        summary,
    })
}

pub const ABLATION_HEADER: &str = "run_id,variant,seed,bleu,rouge_l,retrieval_acc,n_examples";

/// Trains every variant with identical seeds and budget and scores each on
/// the test split.
pub fn cmd_ablate(cfg: &RunConfig, out_root: &Path, trace: bool) -> Result<CommandOutput> {
    let p = prepare(cfg)?;
    let resolved = cfg.render();
    let mut dir = RunDir::create(out_root, run_id("ablate", &resolved, &p.loaded.fingerprint))?;
    dir.write("config.txt", resolved.as_bytes())?;
    let mut table = format!("{ABLATION_HEADER}\n");
    for variant in AblationVariant::ALL {
        let (params, log) = train_model(cfg, &p, variant)?;
        let (rows, results) = evaluate_buckets(cfg, &p, &params, &p.split.test, variant)?;
        let r = &rows[0];
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{}",
            dir.run_id, variant, cfg.seed, r.bleu, r.rouge_l, r.retrieval_acc, r.n_examples
        );
        dir.write(&format!("train_log_{variant}.csv"), &csv_bytes(|b| log.write_csv(b)))?;
        dir.write(
            &format!("checkpoint_{variant}.bin"),
            &checkpoint_bytes(&p.model, &params),
        )?;
        if trace {
            dir.write(&format!("traces_{variant}.jsonl"), &traces_jsonl(&results))?;
        }
    }
    dir.write("ablation.csv", table.as_bytes())?;
    let run_dir = dir.finish("ablate", cfg, &p.loaded.fingerprint)?;
    Ok(CommandOutput {
        run_dir: Some(run_dir),
        summary: table,
    })
}

fn trained_or_loaded(cfg: &RunConfig, p: &Prepared) -> Result<(ModelParams, Option<TrainLog>)> {
    match &cfg.checkpoint {
        Some(path) => {
            let (model, params) = load_checkpoint(path)?;
            if model != p.model {
                return Err(Error::Config(format!(
                    "checkpoint {} has model {:?}, config implies {:?}",
                    path.display(),
                    model,
                    p.model
                )));
            }
            Ok((params, None))
        }
        None => {
            let (params, log) = train_model(cfg, p, cfg.train.variant)?;
            Ok((params, Some(log)))
        }
    }
}

/// One model, scored separately on the low, mid and high ambiguity
/// buckets of the test split.
pub fn cmd_robustness(cfg: &RunConfig, out_root: &Path, trace: bool) -> Result<CommandOutput> {
    let p = prepare(cfg)?;
    if let Some(b) = Ambiguity::ALL
        .into_iter()
        .find(|b| !p.split.test.iter().any(|e| e.ambiguity == *b))
    {
        return Err(Error::contract(format!("test split has no {b} ambiguity examples")));
    }
    let resolved = cfg.render();
    let mut dir = RunDir::create(out_root, run_id("robustness", &resolved, &p.loaded.fingerprint))?;
    dir.write("config.txt", resolved.as_bytes())?;
    let (params, log) = trained_or_loaded(cfg, &p)?;
    let (rows, results) = evaluate_buckets(cfg, &p, &params, &p.split.test, cfg.train.variant)?;
    let buckets: Vec<(String, MetricsReport)> = rows[1..].iter().map(|r| (dir.run_id.clone(), r.clone())).collect();
    dir.write("robustness.csv", &csv_bytes(|b| write_metrics_csv(b, &buckets)))?;
    if let Some(log) = log {
        dir.write("train_log.csv", &csv_bytes(|b| log.write_csv(b)))?;
        dir.write("checkpoint.bin", &checkpoint_bytes(&p.model, &params))?;
    }
    if trace {
        dir.write("traces.jsonl", &traces_jsonl(&results))?;
    }
    let summary = summarize(&rows[1..]);
    let run_dir = dir.finish("robustness", cfg, &p.loaded.fingerprint)?;
    Ok(CommandOutput {
        run_dir: Some(run_dir),
        summary,
    })
}

/// Scores a checkpoint (or a freshly trained model) on the test split.
pub fn cmd_eval(cfg: &RunConfig, out_root: &Path, trace: bool) -> Result<CommandOutput> {
    let p = prepare(cfg)?;
    let resolved = cfg.render();
    let mut dir = RunDir::create(out_root, run_id("eval", &resolved, &p.loaded.fingerprint))?;
    dir.write("config.txt", resolved.as_bytes())?;
    let (params, _) = trained_or_loaded(cfg, &p)?;
    let (rows, results) = evaluate_buckets(cfg, &p, &params, &p.split.test, cfg.train.variant)?;
    let tagged: Vec<(String, MetricsReport)> = rows.iter().map(|r| (dir.run_id.clone(), r.clone())).collect();
    dir.write("metrics.csv", &csv_bytes(|b| write_metrics_csv(b, &tagged)))?;
    if trace {
        dir.write("traces.jsonl", &traces_jsonl(&results))?;
    }
    let summary = summarize(&rows);
    let run_dir = dir.finish("eval", cfg, &p.loaded.fingerprint)?;
    Ok(CommandOutput {
        run_dir: Some(run_dir),
        summary,
    })
}

/// Runs the composite gradient check; fails with a numerical error when
/// any block exceeds the tolerance.
pub fn cmd_gradcheck(seed: u64, lambda: f64, corrupt_tanh: Option<f64>) -> Result<(GradCheckSummary, CommandOutput)> {
    let summary = composite_gradcheck(seed, lambda, corrupt_tanh)?;
    let out = CommandOutput {
        run_dir: None,
        summary: summary.render(),
    };
    if !summary.passed() {
        return Err(Error::GradCheck(format!(
            "max relative error {:.3e} exceeds tolerance\n{}",
            summary.max_rel_error, out.summary
        )));
    }
    Ok((summary, out))
}
