//! Finite-difference check of the full model: encoder → controller →
//! retrieval attention → fusion → decoder → joint loss.

use crate::controller::AblationVariant;
use crate::corpus::{Ambiguity, Document, QAExample, BOS, EOS};
use crate::error::{Error, Result};
use crate::index::build_index_in_graph;
use crate::params::{ModelConfig, ModelParams};
use crate::tensor::{grad_check, Var};
use crate::training::{batch_loss, TrainConfig};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSummary {
    /// `(parameter block, worst relative error)` in model order.
    pub blocks: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, e) in &self.blocks {
            let flag = if *e < GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
            out.push_str(&format!("{name} {e:.3e} {flag}\n"));
        }
        out.push_str(&format!(
            "max {:.3e} tolerance {:.0e}\n",
            self.max_rel_error, GRADCHECK_TOLERANCE
        ));
        out
    }
}

/// Model sizes of the check: `d = 8`, `V = 16`, four documents.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        vocab: 16,
        d_model: 8,
        heads: 2,
        layers: 1,
        ff: 16,
        t_max: 8,
        ctrl_hidden: 8,
    }
}

fn fixture() -> (Vec<Document>, QAExample) {
    let docs = (0..4)
        .map(|i| Document {
            doc_id: format!("doc{i}"),
            text: String::new(),
            token_ids: vec![4 + i, 8 + i, 12 + (i + 1) % 4, 4 + (i + 2) % 4],
        })
        .collect();
    let example = QAExample {
        query_text: String::new(),
        query_ids: vec![4 + 1, 12, 3],
        gold_doc_id: "doc1".into(),
        answer_text: String::new(),
        answer_ids: vec![BOS, 9, 13, EOS],
        ambiguity: Ambiguity::Low,
    };
    (docs, example)
}

/// Runs the check on seeded parameters. `corrupt_tanh` scales the tanh
/// backward pass, as a negative control.
pub fn composite_gradcheck(seed: u64, lambda: f64, corrupt_tanh: Option<f64>) -> Result<GradCheckSummary> {
    let model = gradcheck_config();
    let params = ModelParams::init(&model, seed)?;
    let leaves: Vec<(String, crate::tensor::Tensor)> =
        params.leaves().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let tensors: Vec<_> = leaves.iter().map(|(_, t)| t.clone()).collect();
    let (docs, example) = fixture();
    let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let cfg = TrainConfig {
        lambda,
        variant: AblationVariant::AttentionFusion,
        ..TrainConfig::default()
    };
    let report = grad_check(
        |g, vars| {
            if let Some(f) = corrupt_tanh {
                g.corrupt_tanh_backward(f);
            }
            let mut i = 0;
            let bound: ModelParams<Var> = params.map(&mut |_| {
                i += 1;
                vars[i - 1]
            });
            let index = build_index_in_graph(g, &bound.encoder, &docs, &ids)?;
            Ok(batch_loss(g, &bound, index, &[&example], &cfg, model.heads)?.total)
        },
        &tensors,
        GRADCHECK_EPS,
    )?;
    if report.per_param.len() != leaves.len() {
        return Err(Error::GradCheck("parameter count mismatch".into()));
    }
    Ok(GradCheckSummary {
        blocks: leaves.into_iter().map(|(n, _)| n).zip(report.per_param).collect(),
        max_rel_error: report.max_rel_error,
    })
}
