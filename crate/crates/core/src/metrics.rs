//! BLEU, ROUGE-L, retrieval accuracy and paraphrase robustness.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::controller::RetrievalTrace;
use crate::corpus::{Ambiguity, Perturber, QAExample};
use crate::error::{Error, Result};
use crate::generator::{generate, GenerateOptions, GenerationResult};
use crate::index::Index;
use crate::params::ModelParams;

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// `(clipped matches, candidate n-gram count)` for n = 1..=max_n.
pub fn modified_precisions<T: Hash + Eq>(candidate: &[T], reference: &[T], max_n: usize) -> Vec<(usize, usize)> {
    (1..=max_n)
        .map(|n| {
            let c = ngram_counts(candidate, n);
            let r = ngram_counts(reference, n);
            let clipped = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
            (clipped, candidate.len().saturating_sub(n - 1))
        })
        .collect()
}

/// Sentence-level BLEU.
///
/// Orders above the candidate length are dropped; a zero precision is
/// replaced by `1 / (2 · candidate n-gram count)`. The brevity penalty is
/// `exp(1 − r/c)` when the candidate is not longer than the reference.
pub fn bleu<T: Hash + Eq>(candidate: &[T], reference: &[T], max_n: usize) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::contract("bleu needs a non-empty reference"));
    }
    if max_n == 0 {
        return Err(Error::contract("bleu needs max_n >= 1"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let n_eff = max_n.min(candidate.len());
    let log_sum: f64 = modified_precisions(candidate, reference, n_eff)
        .into_iter()
        .map(|(m, total)| {
            let p = if m == 0 {
                1.0 / (2.0 * total as f64)
            } else {
                m as f64 / total as f64
            };
            p.ln()
        })
        .sum();
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok((bp * (log_sum / n_eff as f64).exp()).clamp(0.0, 1.0))
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::contract("rouge_l needs a non-empty reference"));
    }
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return Ok(0.0);
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Most frequent top document across the traces; `None` on a tie or when
/// there are no traces.
pub fn majority_doc(traces: &[RetrievalTrace]) -> Option<&str> {
    let mut counts: Vec<(&str, usize)> = Vec::new();
    for t in traces {
        let d = t.top_doc();
        match counts.iter_mut().find(|(x, _)| *x == d) {
            Some((_, c)) => *c += 1,
            None => counts.push((d, 1)),
        }
    }
    let best = counts.iter().map(|&(_, c)| c).max()?;
    let mut winners = counts.iter().filter(|&&(_, c)| c == best);
    let first = winners.next()?;
    winners.next().is_none().then_some(first.0)
}

pub fn retrieval_accuracy(results: &[GenerationResult], examples: &[QAExample]) -> Result<f64> {
    if results.len() != examples.len() {
        return Err(Error::contract(format!(
            "{} results for {} examples",
            results.len(),
            examples.len()
        )));
    }
    if results.is_empty() {
        return Err(Error::contract("retrieval accuracy over zero examples"));
    }
    let hits = results
        .iter()
        .zip(examples)
        .filter(|(r, e)| majority_doc(&r.traces) == Some(e.gold_doc_id.as_str()))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

fn answer_content(e: &QAExample) -> &[usize] {
    &e.answer_ids[1..e.answer_ids.len() - 1]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustnessOptions {
    pub seed: u64,
    pub n_variants: usize,
    /// Token substitutions per perturbed query.
    pub substitutions: usize,
    /// A variant counts as robust only if its ROUGE-L drop is below this.
    pub max_rouge_drop: f64,
}

impl Default for RobustnessOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            n_variants: 5,
            substitutions: 2,
            max_rouge_drop: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustnessReport {
    /// Percentage of (example, variant) pairs that kept both the retrieved
    /// document and generation quality.
    pub pct: f64,
    /// Fraction of pairs whose majority document was unchanged.
    pub doc_match_rate: f64,
    /// Fraction of pairs whose ROUGE-L drop stayed under the bound.
    pub quality_kept_rate: f64,
    pub pairs: usize,
}

/// Per-example RNG seed, so results do not depend on example order.
fn example_seed(seed: u64, e: &QAExample) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for &t in &e.query_ids {
        h.update((t as u64).to_le_bytes());
    }
    h.update(e.gold_doc_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Paraphrase robustness of a model: every example is regenerated from
/// `n_variants` perturbed queries and compared with its unperturbed run.
pub fn robustness(
    examples: &[QAExample],
    params: &ModelParams,
    index: &Index,
    gen: &GenerateOptions,
    perturber: &Perturber,
    opts: &RobustnessOptions,
) -> Result<RobustnessReport> {
    if examples.is_empty() {
        return Err(Error::contract("robustness over zero examples"));
    }
    let base: Vec<GenerationResult> = examples
        .iter()
        .map(|e| generate(&e.query_ids, index, params, gen))
        .collect::<Result<_>>()?;
    robustness_from_base(examples, &base, params, index, gen, perturber, opts)
}

/// As [`robustness`], reusing already generated unperturbed results.
pub fn robustness_from_base(
    examples: &[QAExample],
    base: &[GenerationResult],
    params: &ModelParams,
    index: &Index,
    gen: &GenerateOptions,
    perturber: &Perturber,
    opts: &RobustnessOptions,
) -> Result<RobustnessReport> {
    if examples.is_empty() || base.len() != examples.len() {
        return Err(Error::contract("robustness needs one base result per example"));
    }
    let (mut kept, mut doc_ok, mut quality_ok, mut pairs) = (0usize, 0usize, 0usize, 0usize);
    for (e, b) in examples.iter().zip(base) {
        let reference = answer_content(e);
        let base_rouge = rouge_l(b.content(), reference)?;
        let base_doc = majority_doc(&b.traces);
        let mut rng = ChaCha8Rng::seed_from_u64(example_seed(opts.seed, e));
        for _ in 0..opts.n_variants {
            let q = perturber.perturb(&e.query_ids, opts.substitutions, &mut rng);
            let r = if q == e.query_ids {
                b.clone()
            } else {
                generate(&q, index, params, gen)?
            };
            let same_doc = majority_doc(&r.traces) == base_doc;
            let small_drop = base_rouge - rouge_l(r.content(), reference)? < opts.max_rouge_drop;
            doc_ok += same_doc as usize;
            quality_ok += small_drop as usize;
            kept += (same_doc && small_drop) as usize;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Ok(RobustnessReport {
            pct: 100.0,
            doc_match_rate: 1.0,
            quality_kept_rate: 1.0,
            pairs,
        });
    }
    let p = pairs as f64;
    Ok(RobustnessReport {
        pct: 100.0 * kept as f64 / p,
        doc_match_rate: doc_ok as f64 / p,
        quality_kept_rate: quality_ok as f64 / p,
        pairs,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub bucket: Option<Ambiguity>,
    /// Mean sentence-level BLEU.
    pub bleu: f64,
    /// Mean ROUGE-L F1.
    pub rouge_l: f64,
    pub retrieval_acc: f64,
    pub robustness_pct: f64,
    pub n_examples: usize,
}

pub const METRICS_HEADER: &str = "run_id,bucket,bleu,rouge_l,retrieval_acc,robustness_pct,n_examples";

impl MetricsReport {
    pub fn csv_row(&self, run_id: &str) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            run_id,
            self.bucket.map_or("all", Ambiguity::as_str),
            self.bleu,
            self.rouge_l,
            self.retrieval_acc,
            self.robustness_pct,
            self.n_examples
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[(String, MetricsReport)]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for (run_id, r) in rows {
        writeln!(w, "{}", r.csv_row(run_id))?;
    }
    Ok(())
}

/// Generates every example and scores it; robustness is computed when
/// `robust` is given, otherwise reported as 100.
pub fn evaluate(
    examples: &[QAExample],
    bucket: Option<Ambiguity>,
    params: &ModelParams,
    index: &Index,
    gen: &GenerateOptions,
    robust: Option<(&Perturber, &RobustnessOptions)>,
) -> Result<(MetricsReport, Vec<GenerationResult>)> {
    if examples.is_empty() {
        return Err(Error::contract("evaluation over zero examples"));
    }
    let label = bucket.map_or("all".to_string(), |b| b.to_string());
    let start = std::time::Instant::now();
    let results: Vec<GenerationResult> = examples
        .iter()
        .map(|e| generate(&e.query_ids, index, params, gen))
        .collect::<Result<_>>()?;
    let n = examples.len() as f64;
    // Wall-clock only goes to the log so outputs stay byte-reproducible.
    log::info!(
        "{label}: {:.3} ms per generation",
        start.elapsed().as_secs_f64() * 1e3 / n
    );
    let (mut b, mut r) = (0.0, 0.0);
    for (res, e) in results.iter().zip(examples) {
        b += bleu(res.content(), answer_content(e), 4)?;
        r += rouge_l(res.content(), answer_content(e))?;
    }
    let robustness_pct = match robust {
        Some((p, o)) => {
            let rep = robustness_from_base(examples, &results, params, index, gen, p, o)?;
            log::info!(
                "{label}: robustness {:.1}% (doc kept {:.3}, quality kept {:.3}, {} pairs)",
                rep.pct,
                rep.doc_match_rate,
                rep.quality_kept_rate,
                rep.pairs
            );
            rep.pct
        }
        None => 100.0,
    };
    let report = MetricsReport {
        bucket,
        bleu: b / n,
        rouge_l: r / n,
        retrieval_acc: retrieval_accuracy(&results, examples)?,
        robustness_pct,
        n_examples: examples.len(),
    };
    Ok((report, results))
}
