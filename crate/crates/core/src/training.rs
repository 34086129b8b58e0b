//! Joint training of encoder, controller and decoder under
//! `L_total = L_gen + λ·L_ret`.

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::{AblationVariant, RetrievalStep, RetrievalTrace};
use crate::corpus::{Document, QAExample};
use crate::error::{Error, Result};
use crate::generator::{dynamic_step, generate, Conditioning, GenerateOptions};
use crate::index::{build_index, build_index_in_graph, encode_in_graph, GraphIndex, Index};
use crate::metrics::retrieval_accuracy;
use crate::params::{ModelConfig, ModelParams};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Steps between index re-encodings. At 1 the index is encoded inside
    /// every step's graph, so document rows receive gradients; otherwise a
    /// detached snapshot is refreshed every `refresh_interval` steps.
    pub refresh_interval: usize,
    /// Candidate pool per retrieval; `None` means every document.
    pub k: Option<usize>,
    /// Keep the index built from the initial encoder for the whole run.
    pub freeze_index: bool,
    pub variant: AblationVariant,
    /// Steps between probe evaluations; the last step is always probed.
    pub probe_interval: usize,
    pub clip_norm: f64,
    /// `L_ret` contribution of a step whose candidates miss the gold doc.
    pub miss_penalty: Option<f64>,
    /// Generation cap used by the probe.
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            steps: 2000,
            seed: 0,
            refresh_interval: 1,
            k: None,
            freeze_index: false,
            variant: AblationVariant::AttentionFusion,
            probe_interval: 100,
            clip_norm: 5.0,
            miss_penalty: None,
            max_len: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite non-negative number");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be at least 1");
        }
        if self.refresh_interval == 0 || self.probe_interval == 0 || self.max_len == 0 {
            return bad("refresh_interval, probe_interval and max_len must be at least 1");
        }
        if self.k == Some(0) {
            return bad("k must be at least 1");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.adam_eps.is_nan()
            || self.adam_eps <= 0.0
        {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    pub fn generate_options(&self, model: &ModelConfig) -> GenerateOptions {
        GenerateOptions {
            max_len: self.max_len.min(model.t_max),
            k: self.k,
            variant: self.variant,
            heads: model.heads,
            keep_logits: false,
        }
    }
}

/// Teacher-forced generation loss for one example: at every answer
/// position the gold prefix is decoded after a fresh retrieval, and the
/// cross entropies are averaged. Returns the loss and the retrieval steps.
pub fn gen_loss(
    graph: &mut Graph,
    params: &ModelParams<Var>,
    cond: &Conditioning<'_>,
    example: &QAExample,
) -> Result<(Var, Vec<RetrievalStep>)> {
    let ans = &example.answer_ids;
    if ans.len() < 2 {
        return Err(Error::contract("answer must hold at least BOS and EOS"));
    }
    let d = graph.shape(cond.query)[1];
    let mut c_prev = graph.constant(Tensor::zeros(1, d));
    let mut terms = Vec::with_capacity(ans.len() - 1);
    let mut steps = Vec::with_capacity(ans.len() - 1);
    for t in 1..ans.len() {
        let (r, logits) = dynamic_step(graph, params, cond, t - 1, &ans[..t], c_prev)?;
        terms.push(graph.cross_entropy(logits, ans[t])?);
        c_prev = r.c_t;
        steps.push(r);
    }
    Ok((graph.mean_of(&terms)?, steps))
}

/// `mean_t −log α_t[gold]`, computed as a cross entropy over each step's
/// candidate scores. Steps whose candidates miss the gold document add
/// `miss_penalty`, or fail when none is configured.
pub fn ret_loss(
    graph: &mut Graph,
    steps: &[RetrievalStep],
    gold_index: usize,
    miss_penalty: Option<f64>,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(steps.len());
    for s in steps {
        match (s.gold_position(gold_index), miss_penalty) {
            (Some(pos), _) => terms.push(graph.cross_entropy(s.scores, pos)?),
            (None, Some(p)) => terms.push(graph.constant(Tensor::scalar(p)?)),
            (None, None) => {
                return Err(Error::contract(format!(
                    "gold document missing from candidates at step {} (set miss_penalty when k < all)",
                    s.trace.step
                )))
            }
        }
    }
    graph.mean_of(&terms)
}

/// Value-level retrieval loss over recorded traces.
pub fn ret_loss_value(traces: &[RetrievalTrace], gold_doc_id: &str, miss_penalty: Option<f64>) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::contract("retrieval loss over zero steps"));
    }
    let mut total = 0.0;
    for t in traces {
        total += match (t.alpha_of(gold_doc_id), miss_penalty) {
            (Some(a), _) => -a.ln(),
            (None, Some(p)) => p,
            (None, None) => {
                return Err(Error::contract(format!(
                    "gold document missing from candidates at step {} (set miss_penalty when k < all)",
                    t.step
                )))
            }
        };
    }
    Ok(total / traces.len() as f64)
}

/// `L_gen + λ·L_ret` as a graph node.
pub fn total_loss(graph: &mut Graph, l_gen: Var, l_ret: Var, lambda: f64) -> Result<Var> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::contract(format!("lambda must be non-negative, got {lambda}")));
    }
    let weighted = graph.scale(l_ret, lambda)?;
    graph.add(l_gen, weighted)
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub gen: Var,
    pub ret: Var,
}

/// Batch losses on one shared forward pass: `L_gen` and `L_ret` are batch
/// means and `L_total` is built from exactly those two nodes.
pub fn batch_loss(
    graph: &mut Graph,
    params: &ModelParams<Var>,
    index: GraphIndex<'_>,
    batch: &[&QAExample],
    cfg: &TrainConfig,
    heads: usize,
) -> Result<LossVars> {
    let mut gens = Vec::with_capacity(batch.len());
    let mut rets = Vec::with_capacity(batch.len());
    for e in batch {
        let gold = index
            .doc_ids
            .iter()
            .position(|d| *d == e.gold_doc_id)
            .ok_or_else(|| Error::Integrity(format!("gold doc {:?} not in index", e.gold_doc_id)))?;
        let query = encode_in_graph(graph, &params.encoder, std::slice::from_ref(&e.query_ids))?;
        let cond = Conditioning {
            query,
            index,
            k: cfg.k,
            variant: cfg.variant,
            heads,
        };
        let (g, steps) = gen_loss(graph, params, &cond, e)?;
        gens.push(g);
        rets.push(ret_loss(graph, &steps, gold, cfg.miss_penalty)?);
    }
    let gen = graph.mean_of(&gens)?;
    let ret = graph.mean_of(&rets)?;
    let total = total_loss(graph, gen, ret, cfg.lambda)?;
    Ok(LossVars { total, gen, ret })
}

/// Losses for one example with frozen parameters: `(L_total, L_gen, L_ret)`.
pub fn example_losses(
    example: &QAExample,
    docs: &[Document],
    params: &ModelParams,
    cfg: &TrainConfig,
    heads: usize,
) -> Result<(f64, f64, f64)> {
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let index = build_index_in_graph(&mut g, &p.encoder, docs, &ids)?;
    let l = batch_loss(&mut g, &p, index, &[example], cfg, heads)?;
    Ok((g.scalar(l.total), g.scalar(l.gen), g.scalar(l.ret)))
}

/// SGD or Adam over every leaf of the model.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.leaves().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            kind: cfg.optimizer,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update from the accumulated gradients, scaled by `grad_scale`.
    pub fn step(&mut self, params: &mut ModelParams, grad_scale: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        let mut i = 0;
        params.visit_mut(&mut |_, t| {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                i += 1;
                return;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = t.data_mut();
            for j in 0..w.len() {
                let gj = g[j] * grad_scale;
                let delta = match self.kind {
                    OptimizerKind::Sgd => self.lr * gj,
                    OptimizerKind::Adam => {
                        m[j] = b1 * m[j] + (1.0 - b1) * gj;
                        v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                        self.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps)
                    }
                };
                if delta != 0.0 {
                    w[j] -= delta;
                }
            }
            i += 1;
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub l_gen: f64,
    pub l_ret: f64,
    pub l_total: f64,
    pub probe_retrieval_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub checkpoint: Option<PathBuf>,
}

pub const TRAIN_LOG_HEADER: &str = "step,L_gen,L_ret,L_total,probe_retrieval_acc";

impl TrainLog {
    /// Shortest round-trip decimal for every float; an empty probe cell
    /// means the step was not probed.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRAIN_LOG_HEADER}")?;
        for r in &self.records {
            let probe = r.probe_retrieval_acc.map(|p| p.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", r.step, r.l_gen, r.l_ret, r.l_total, probe)?;
        }
        Ok(())
    }

    pub fn last_probe(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.probe_retrieval_acc)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
}

/// Majority-vote retrieval accuracy of free-running generation.
pub fn probe_accuracy(
    examples: &[QAExample],
    docs: &[Document],
    params: &ModelParams,
    opts: &GenerateOptions,
) -> Result<f64> {
    let index = build_index(docs, &params.encoder)?;
    let results = examples
        .iter()
        .map(|e| generate(&e.query_ids, &index, params, opts))
        .collect::<Result<Vec<_>>>()?;
    retrieval_accuracy(&results, examples)
}

fn nan_abort(step: usize, params: &ModelParams, err: Error) -> Error {
    match err {
        Error::NonFinite { op } => Error::NanLoss {
            step,
            diagnostics: format!("non-finite value in {op}; {}", params.describe_blocks()),
        },
        other => other,
    }
}

/// Runs the training loop: batch loss → backward → clip → update.
///
/// Batches walk seeded permutations of `train_set`. Deterministic for a
/// fixed config, corpus and initial parameters.
pub fn train(
    cfg: &TrainConfig,
    model: &ModelConfig,
    train_set: &[QAExample],
    probe_set: &[QAExample],
    docs: &[Document],
    init: ModelParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if train_set.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    let mut params = init;
    let mut opt = Optimizer::new(cfg, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let frozen = if cfg.freeze_index {
        Some(build_index(docs, &params.encoder)?)
    } else {
        None
    };
    let mut snapshot: Option<Index> = None;
    let gen_opts = cfg.generate_options(model);
    let mut log = TrainLog::default();

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..train_set.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train_set[order[cursor]]);
            cursor += 1;
        }

        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let index = if let Some(f) = &frozen {
            f.in_graph(&mut g)
        } else if cfg.refresh_interval == 1 {
            build_index_in_graph(&mut g, &p.encoder, docs, &ids).map_err(|e| nan_abort(step, &params, e))?
        } else {
            if (step - 1) % cfg.refresh_interval == 0 || snapshot.is_none() {
                snapshot = Some(build_index(docs, &params.encoder).map_err(|e| nan_abort(step, &params, e))?);
            }
            snapshot.as_ref().expect("snapshot built").in_graph(&mut g)
        };
        let loss = batch_loss(&mut g, &p, index, &batch, cfg, model.heads).map_err(|e| nan_abort(step, &params, e))?;
        let (l_total, l_gen, l_ret) = (g.scalar(loss.total), g.scalar(loss.gen), g.scalar(loss.ret));
        if !l_total.is_finite() {
            return Err(nan_abort(step, &params, Error::NonFinite { op: "loss" }));
        }
        g.backward(loss.total).map_err(|e| nan_abort(step, &params, e))?;
        params.zero_grad();
        params.accumulate_grads(&g, &p)?;
        let norm = params.grad_norm();
        if !norm.is_finite() {
            return Err(nan_abort(step, &params, Error::NonFinite { op: "gradient" }));
        }
        let scale = if norm > cfg.clip_norm {
            cfg.clip_norm / norm
        } else {
            1.0
        };
        opt.step(&mut params, scale);
        params.zero_grad();

        let probe = if !probe_set.is_empty() && (step % cfg.probe_interval == 0 || step == cfg.steps) {
            Some(probe_accuracy(probe_set, docs, &params, &gen_opts)?)
        } else {
            None
        };
        log::debug!("step {step}: L_gen={l_gen:.4} L_ret={l_ret:.4} L_total={l_total:.4} probe={probe:?}");
        log.records.push(TrainRecord {
            step,
            l_gen,
            l_ret,
            l_total,
            probe_retrieval_acc: probe,
        });
    }
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Ambiguity, BOS, EOS};
    use std::collections::BTreeMap;

    fn trace(alpha: &[f64]) -> RetrievalTrace {
        RetrievalTrace {
            step: 0,
            q_prime: Tensor::zeros(1, 1),
            doc_ids: (0..alpha.len()).map(|i| format!("d{i}")).collect(),
            scores: Tensor::row(alpha).unwrap(),
            alpha: Tensor::row(alpha).unwrap(),
            c_t: Tensor::zeros(1, 1),
        }
    }

    #[test]
    fn ret_loss_value_cases() {
        assert_eq!(ret_loss_value(&[trace(&[1.0, 0.0])], "d0", None).unwrap(), 0.0);
        let u = ret_loss_value(&[trace(&[0.25; 4])], "d2", None).unwrap();
        assert!((u - 4f64.ln()).abs() < 1e-12);
        let l = ret_loss_value(&[trace(&[0.7310586, 0.2689414])], "d1", None).unwrap();
        assert!((l - 1.3133).abs() < 1e-4);
        assert!(ret_loss_value(&[trace(&[1.0])], "d9", None).is_err());
        assert_eq!(ret_loss_value(&[trace(&[1.0])], "d9", Some(3.0)).unwrap(), 3.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut g = Graph::new();
        let gen = g.constant(Tensor::scalar(2.0).unwrap());
        let ret = g.constant(Tensor::scalar(0.5).unwrap());
        let t = total_loss(&mut g, gen, ret, 1.0).unwrap();
        assert_eq!(g.scalar(t), 2.5);
        let t0 = total_loss(&mut g, gen, ret, 0.0).unwrap();
        assert_eq!(g.scalar(t0).to_bits(), 2.0f64.to_bits());
        let a = total_loss(&mut g, gen, ret, 0.3).unwrap();
        let b = total_loss(&mut g, gen, ret, 0.6).unwrap();
        assert!(((g.scalar(b) - 2.0) - 2.0 * (g.scalar(a) - 2.0)).abs() < 1e-15);
        assert!(total_loss(&mut g, gen, ret, -1.0).is_err());
    }

    fn model() -> ModelConfig {
        ModelConfig {
            vocab: 200,
            d_model: 8,
            heads: 2,
            layers: 1,
            ff: 16,
            t_max: 8,
            ctrl_hidden: 8,
        }
    }

    fn docs() -> Vec<Document> {
        (0..4)
            .map(|i| Document {
                doc_id: format!("d{i}"),
                text: String::new(),
                token_ids: vec![10 + i, 20 + i, 30],
            })
            .collect()
    }

    fn ex(i: usize) -> QAExample {
        QAExample {
            query_text: String::new(),
            query_ids: vec![10 + i, 40],
            gold_doc_id: format!("d{i}"),
            answer_text: String::new(),
            answer_ids: vec![BOS, 20 + i, EOS],
            ambiguity: Ambiguity::Low,
        }
    }

    #[test]
    fn uniform_model_has_log_v_generation_loss() {
        let p = ModelParams::zeros(&model()).unwrap();
        let (total, gen, ret) = example_losses(&ex(1), &docs(), &p, &TrainConfig::default(), 2).unwrap();
        assert!((gen - 200f64.ln()).abs() < 1e-12);
        assert!((ret - 4f64.ln()).abs() < 1e-12);
        assert_eq!(total, gen + 0.5 * ret);
    }

    #[test]
    fn lr_zero_leaves_params_bit_identical() {
        let init = ModelParams::init(&model(), 3).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            steps: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let train_set: Vec<_> = (0..4).map(ex).collect();
        let out = train(&cfg, &model(), &train_set, &[], &docs(), init.clone()).unwrap();
        for ((name, a), (_, b)) in out.params.leaves().into_iter().zip(init.leaves()) {
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b), "{name}");
        }
        assert_eq!(out.log.records.len(), 2);
    }

    #[test]
    fn one_step_is_logged_and_deterministic() {
        let init = ModelParams::init(&model(), 4).unwrap();
        let cfg = TrainConfig {
            steps: 1,
            batch_size: 2,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let train_set: Vec<_> = (0..4).map(ex).collect();
        let a = train(&cfg, &model(), &train_set, &train_set[..2], &docs(), init.clone()).unwrap();
        let b = train(&cfg, &model(), &train_set, &train_set[..2], &docs(), init.clone()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, init);
        let r = a.log.records[0];
        assert_eq!(r.step, 1);
        assert_eq!(r.l_total, r.l_gen + 0.5 * r.l_ret);
        assert!(r.probe_retrieval_acc.is_some());
        let mut csv = Vec::new();
        a.log.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with(TRAIN_LOG_HEADER));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn gradients_reach_every_block() {
        let cfg = TrainConfig {
            steps: 1,
            batch_size: 4,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let train_set: Vec<_> = (0..4).map(ex).collect();
        let init = ModelParams::init(&model(), 5).unwrap();
        let stepped = train(&cfg, &model(), &train_set, &[], &docs(), init).unwrap().params;
        let docs = docs();
        let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
        let mut g = Graph::new();
        let bound = stepped.bind(&mut g);
        let index = build_index_in_graph(&mut g, &bound.encoder, &docs, &ids).unwrap();
        let batch: Vec<&QAExample> = train_set.iter().collect();
        let l = batch_loss(&mut g, &bound, index, &batch, &cfg, 2).unwrap();
        g.backward(l.total).unwrap();
        let mut max_by_block: BTreeMap<String, f64> = BTreeMap::new();
        for (name, v) in bound.leaves() {
            let m = g
                .grad(*v)
                .map_or(0.0, |gr| gr.iter().fold(0.0f64, |a, x| a.max(x.abs())));
            let block = if name == "decoder.out" {
                name.clone()
            } else {
                name.split('.').next().unwrap().to_string()
            };
            let e = max_by_block.entry(block).or_insert(0.0);
            *e = e.max(m);
        }
        assert_eq!(max_by_block.len(), 4);
        for (block, m) in max_by_block {
            assert!(m > 0.0, "{block}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            lambda: -0.1,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            k: Some(0),
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
