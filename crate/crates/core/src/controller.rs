//! State-aware retrieval: the controller MLP builds a per-step retrieval
//! vector from the query and decoder state, documents are weighted by a
//! softmax over scaled dot products, and the weights fuse the candidate
//! vectors into a context embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{score_all, top_k, GraphIndex};
use crate::params::ControllerParams;
use crate::tensor::{Graph, Tensor, Var};

/// How the retrieval vector and the context embedding are built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// `q′ = q`; no decoder state reaches retrieval.
    StaticQuery,
    /// The controller sees the mean of the prefix token embeddings instead
    /// of the decoder hidden state.
    QueryPlusHistory,
    /// Full controller, but the context is the single best candidate.
    QueryPlusContext,
    /// Full controller with soft attention fusion.
    AttentionFusion,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::StaticQuery,
        AblationVariant::QueryPlusHistory,
        AblationVariant::QueryPlusContext,
        AblationVariant::AttentionFusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationVariant::StaticQuery => "static_query",
            AblationVariant::QueryPlusHistory => "query_plus_history",
            AblationVariant::QueryPlusContext => "query_plus_context",
            AblationVariant::AttentionFusion => "attention_fusion",
        }
    }
}

impl std::fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

/// Per-step record of one retrieval.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalTrace {
    pub step: usize,
    pub q_prime: Tensor,
    /// Candidate documents in index order.
    pub doc_ids: Vec<String>,
    /// Scaled scores of the candidates, `[1×k]`.
    pub scores: Tensor,
    /// Retrieval probabilities over the candidates, `[1×k]`.
    pub alpha: Tensor,
    pub c_t: Tensor,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    example: Option<usize>,
    step: usize,
    doc_ids: &'a [String],
    alpha: &'a [f64],
    scores: &'a [f64],
}

impl RetrievalTrace {
    /// Candidate with the largest weight; ties go to the earlier candidate.
    pub fn top_doc(&self) -> &str {
        let a = self.alpha.data();
        let mut best = 0;
        for i in 1..a.len() {
            if a[i] > a[best] {
                best = i;
            }
        }
        &self.doc_ids[best]
    }

    pub fn alpha_of(&self, doc_id: &str) -> Option<f64> {
        self.doc_ids
            .iter()
            .position(|d| d == doc_id)
            .map(|i| self.alpha.data()[i])
    }

    /// One JSON object; floats keep full round-trip precision.
    pub fn to_json_line(&self) -> String {
        self.json_line(None)
    }

    /// As [`Self::to_json_line`], tagged with the example position.
    pub fn to_json_line_for(&self, example: usize) -> String {
        self.json_line(Some(example))
    }

    fn json_line(&self, example: Option<usize>) -> String {
        serde_json::to_string(&TraceLine {
            example,
            step: self.step,
            doc_ids: &self.doc_ids,
            alpha: self.alpha.data(),
            scores: self.scores.data(),
        })
        .expect("trace serializes")
    }
}

/// `q′ = W₂ · tanh(W₁ · [q; h_t] + b₁) + b₂`
pub fn controller_forward(graph: &mut Graph, q: Var, h_t: Var, params: &ControllerParams<Var>) -> Result<Var> {
    let (sq, sh) = (graph.shape(q), graph.shape(h_t));
    if sq[0] != 1 || sq != sh {
        return Err(Error::Dimension {
            op: "controller_forward",
            lhs: sq,
            rhs: sh,
        });
    }
    let w1 = graph.shape(params.w1);
    if w1[0] != 2 * sq[1] {
        return Err(Error::Dimension {
            op: "controller_forward",
            lhs: [1, 2 * sq[1]],
            rhs: w1,
        });
    }
    let x = graph.concat(q, h_t)?;
    let z1 = graph.matmul(x, params.w1)?;
    let z1 = graph.add_row(z1, params.b1)?;
    let a1 = graph.tanh(z1)?;
    let z2 = graph.matmul(a1, params.w2)?;
    graph.add_row(z2, params.b2)
}

#[derive(Clone, Copy, Debug)]
pub struct Attention {
    /// `[1×k]` scaled scores.
    pub scores: Var,
    /// `[1×k]` softmax of the scores.
    pub alpha: Var,
}

/// Softmax over `(q′ · c_i) / √d` for the candidate rows `c_i`.
pub fn attend(graph: &mut Graph, q_prime: Var, candidates: Var) -> Result<Attention> {
    if graph.shape(candidates)[0] == 0 {
        return Err(Error::contract("attend needs at least one candidate"));
    }
    let scores = score_all(graph, q_prime, candidates)?;
    let alpha = graph.softmax(scores)?;
    Ok(Attention { scores, alpha })
}

/// `c_t = Σ_i α_i · c_i`
pub fn fuse(graph: &mut Graph, alpha: Var, candidates: Var) -> Result<Var> {
    let (sa, sc) = (graph.shape(alpha), graph.shape(candidates));
    if sa[0] != 1 || sa[1] != sc[0] {
        return Err(Error::Shape {
            op: "fuse",
            msg: format!("alpha {:?} does not match candidates {:?}", sa, sc),
        });
    }
    graph.matmul(alpha, candidates)
}

/// Everything one retrieval step produced, with graph handles for losses.
#[derive(Clone, Debug)]
pub struct RetrievalStep {
    pub trace: RetrievalTrace,
    /// Candidate positions in the index, ascending.
    pub candidates: Vec<usize>,
    pub scores: Var,
    pub alpha: Var,
    pub c_t: Var,
}

impl RetrievalStep {
    pub fn gold_position(&self, gold_index: usize) -> Option<usize> {
        self.candidates.iter().position(|&c| c == gold_index)
    }
}

/// controller → score_all → top_k → attend over candidates → fuse.
///
/// `k = None` uses every document. The variant decides whether the
/// controller runs (`static_query` skips it) and whether fusion is soft or
/// the single best candidate (`query_plus_context`).
#[allow(clippy::too_many_arguments)]
pub fn retrieve_step(
    graph: &mut Graph,
    step: usize,
    q: Var,
    h_t: Var,
    index: GraphIndex<'_>,
    params: &ControllerParams<Var>,
    k: Option<usize>,
    variant: AblationVariant,
) -> Result<RetrievalStep> {
    let n = graph.shape(index.matrix)[0];
    if n == 0 {
        return Err(Error::contract("retrieval over an empty index"));
    }
    let k = k.unwrap_or(n);
    let q_prime = match variant {
        AblationVariant::StaticQuery => q,
        _ => controller_forward(graph, q, h_t, params)?,
    };
    let mut candidates: Vec<usize> = if k == n {
        (0..n).collect()
    } else {
        let all = score_all(graph, q_prime, index.matrix)?;
        top_k(graph.value(all).data(), index.doc_ids, k)?
            .into_iter()
            .map(|(i, _)| i)
            .collect()
    };
    candidates.sort_unstable();
    let cand = if k == n {
        index.matrix
    } else {
        graph.gather_rows(index.matrix, &candidates)?
    };
    let att = attend(graph, q_prime, cand)?;
    let c_t = match variant {
        AblationVariant::QueryPlusContext => {
            let a = graph.value(att.alpha).data();
            let best = (1..a.len()).fold(0, |b, i| if a[i] > a[b] { i } else { b });
            graph.slice_rows(cand, best, 1)?
        }
        _ => fuse(graph, att.alpha, cand)?,
    };
    let trace = RetrievalTrace {
        step,
        q_prime: graph.value(q_prime).clone(),
        doc_ids: candidates.iter().map(|&i| index.doc_ids[i].clone()).collect(),
        scores: graph.value(att.scores).clone(),
        alpha: graph.value(att.alpha).clone(),
        c_t: graph.value(c_t).clone(),
    };
    Ok(RetrievalStep {
        trace,
        candidates,
        scores: att.scores,
        alpha: att.alpha,
        c_t,
    })
}
