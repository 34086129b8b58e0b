//! Micro-transformer decoder conditioned on the fused retrieval context,
//! and the greedy generation loop that re-retrieves before every token.

use crate::controller::{retrieve_step, AblationVariant, RetrievalStep, RetrievalTrace};
use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};
use crate::index::{encode_in_graph, GraphIndex, Index};
use crate::params::{DecoderParams, ModelParams};
use crate::tensor::{Graph, Tensor, Var};

fn check_prefix(graph: &Graph, dec: &DecoderParams<Var>, prefix: &[usize]) -> Result<()> {
    if prefix.is_empty() {
        return Err(Error::contract("decoder prefix must hold at least BOS"));
    }
    let t_max = graph.shape(dec.pos)[0];
    if prefix.len() > t_max {
        return Err(Error::Capacity {
            len: prefix.len(),
            max: t_max,
        });
    }
    Ok(())
}

/// Causal multi-head self-attention over the rows of `x`.
fn self_attention(graph: &mut Graph, x: Var, wq: Var, wk: Var, wv: Var, wo: Var, heads: usize) -> Result<Var> {
    let d = graph.shape(x)[1];
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("head count {heads} does not divide d_model {d}")));
    }
    let dk = d / heads;
    let q = graph.matmul(x, wq)?;
    let k = graph.matmul(x, wk)?;
    let v = graph.matmul(x, wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = graph.slice_cols(q, h * dk, dk)?;
        let kh = graph.slice_cols(k, h * dk, dk)?;
        let vh = graph.slice_cols(v, h * dk, dk)?;
        let s = graph.matmul_bt(qh, kh)?;
        let s = graph.scale(s, 1.0 / (dk as f64).sqrt())?;
        let a = graph.causal_softmax(s)?;
        outs.push(graph.matmul(a, vh)?);
    }
    let mut cat = outs[0];
    for &o in &outs[1..] {
        cat = graph.concat_cols(cat, o)?;
    }
    graph.matmul(cat, wo)
}

/// Final-layer states for every prefix position, `[n×d]`.
///
/// The context is injected at the last position only: its input embedding
/// is concatenated with `ctx` and projected back to `d` before layer one.
pub fn decoder_states(
    graph: &mut Graph,
    dec: &DecoderParams<Var>,
    heads: usize,
    prefix: &[usize],
    ctx: Var,
) -> Result<Var> {
    check_prefix(graph, dec, prefix)?;
    let n = prefix.len();
    let tok = graph.embedding(dec.embed, prefix)?;
    let pos = graph.slice_rows(dec.pos, 0, n)?;
    let x = graph.add(tok, pos)?;
    let last = graph.slice_rows(x, n - 1, 1)?;
    let joined = graph.concat(last, ctx)?;
    let injected = graph.matmul(joined, dec.ctx)?;
    let mut x = if n > 1 {
        let head = graph.slice_rows(x, 0, n - 1)?;
        graph.vstack(&[head, injected])?
    } else {
        injected
    };
    for l in &dec.layers {
        let a = graph.layer_norm(x, l.ln1_g, l.ln1_b)?;
        let att = self_attention(graph, a, l.wq, l.wk, l.wv, l.wo, heads)?;
        x = graph.add(x, att)?;
        let b = graph.layer_norm(x, l.ln2_g, l.ln2_b)?;
        let f = graph.matmul(b, l.ff1_w)?;
        let f = graph.add_row(f, l.ff1_b)?;
        let f = graph.gelu(f)?;
        let f = graph.matmul(f, l.ff2_w)?;
        let f = graph.add_row(f, l.ff2_b)?;
        x = graph.add(x, f)?;
    }
    graph.layer_norm(x, dec.ln_f_g, dec.ln_f_b)
}

/// `h_t`: the final-layer state at the last prefix position, computed with
/// the previous step's context.
pub fn hidden_state_in_graph(
    graph: &mut Graph,
    dec: &DecoderParams<Var>,
    heads: usize,
    prefix: &[usize],
    c_prev: Var,
) -> Result<Var> {
    let states = decoder_states(graph, dec, heads, prefix, c_prev)?;
    graph.slice_rows(states, prefix.len() - 1, 1)
}

/// Next-token logits `h · W_o` with `c_t` injected; softmax is left to the caller.
pub fn decode_step_in_graph(
    graph: &mut Graph,
    dec: &DecoderParams<Var>,
    heads: usize,
    prefix: &[usize],
    c_t: Var,
) -> Result<Var> {
    let h = hidden_state_in_graph(graph, dec, heads, prefix, c_t)?;
    graph.matmul(h, dec.out)
}

/// Mean of the prefix token embeddings; the decoder state stand-in for the
/// `query_plus_history` variant.
pub fn history_state_in_graph(graph: &mut Graph, dec: &DecoderParams<Var>, prefix: &[usize]) -> Result<Var> {
    check_prefix(graph, dec, prefix)?;
    graph.embedding_mean(dec.embed, &[prefix.to_vec()])
}

pub fn hidden_state(prefix: &[usize], c_prev: &Tensor, dec: &DecoderParams, heads: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = dec.map(&mut |t| g.constant(t.clone()));
    let c = g.constant(c_prev.clone());
    let h = hidden_state_in_graph(&mut g, &p, heads, prefix, c)?;
    Ok(g.value(h).clone())
}

pub fn decode_step(prefix: &[usize], c_t: &Tensor, dec: &DecoderParams, heads: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = dec.map(&mut |t| g.constant(t.clone()));
    let c = g.constant(c_t.clone());
    let z = decode_step_in_graph(&mut g, &p, heads, prefix, c)?;
    Ok(g.value(z).clone())
}

/// Retrieval settings shared by every step of one sequence.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning<'a> {
    /// Encoded query `q`, `[1×d]`.
    pub query: Var,
    pub index: GraphIndex<'a>,
    pub k: Option<usize>,
    pub variant: AblationVariant,
    pub heads: usize,
}

/// One dynamic step: state → retrieval → logits for the next token.
pub fn dynamic_step(
    graph: &mut Graph,
    params: &ModelParams<Var>,
    cond: &Conditioning<'_>,
    step: usize,
    prefix: &[usize],
    c_prev: Var,
) -> Result<(RetrievalStep, Var)> {
    let h_t = match cond.variant {
        AblationVariant::StaticQuery => cond.query,
        AblationVariant::QueryPlusHistory => history_state_in_graph(graph, &params.decoder, prefix)?,
        _ => hidden_state_in_graph(graph, &params.decoder, cond.heads, prefix, c_prev)?,
    };
    let r = retrieve_step(
        graph,
        step,
        cond.query,
        h_t,
        cond.index,
        &params.controller,
        cond.k,
        cond.variant,
    )?;
    let logits = decode_step_in_graph(graph, &params.decoder, cond.heads, prefix, r.c_t)?;
    Ok((r, logits))
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    /// Cap on generated tokens (BOS excluded).
    pub max_len: usize,
    pub k: Option<usize>,
    pub variant: AblationVariant,
    pub heads: usize,
    pub keep_logits: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationResult {
    /// `BOS …`, ending in `EOS` unless the length cap was hit.
    pub tokens: Vec<usize>,
    /// One trace per generated token.
    pub traces: Vec<RetrievalTrace>,
    pub logits: Option<Vec<Tensor>>,
}

impl GenerationResult {
    /// Generated tokens without `BOS` / `EOS`.
    pub fn content(&self) -> &[usize] {
        let body = &self.tokens[1..];
        match body.last() {
            Some(&EOS) => &body[..body.len() - 1],
            _ => body,
        }
    }
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding with one retrieval per emitted token.
pub fn generate(
    query_ids: &[usize],
    index: &Index,
    params: &ModelParams,
    opts: &GenerateOptions,
) -> Result<GenerationResult> {
    let t_max = params.decoder.pos.rows();
    if opts.max_len == 0 || opts.max_len > t_max {
        return Err(Error::contract(format!(
            "max_len must be in 1..={t_max}, got {}",
            opts.max_len
        )));
    }
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let query = encode_in_graph(&mut g, &p.encoder, &[query_ids.to_vec()])?;
    let cond = Conditioning {
        query,
        index: index.in_graph(&mut g),
        k: opts.k,
        variant: opts.variant,
        heads: opts.heads,
    };
    let mut c_prev = g.constant(Tensor::zeros(1, index.dim()));
    let mut tokens = vec![BOS];
    let mut traces = Vec::new();
    let mut logits = opts.keep_logits.then(Vec::new);
    for step in 0..opts.max_len {
        let (r, z) = dynamic_step(&mut g, &p, &cond, step, &tokens, c_prev)?;
        let next = argmax_lowest(g.value(z).data());
        if let Some(l) = logits.as_mut() {
            l.push(g.value(z).clone());
        }
        traces.push(r.trace);
        tokens.push(next);
        c_prev = r.c_t;
        if next == EOS {
            break;
        }
    }
    Ok(GenerationResult { tokens, traces, logits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::index::build_index;
    use crate::params::ModelConfig;
    use crate::tensor::grad_check;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab: 12,
            d_model: 8,
            heads: 2,
            layers: 2,
            ff: 16,
            t_max: 8,
            ctrl_hidden: 8,
        }
    }

    fn docs() -> Vec<Document> {
        (0..3)
            .map(|i| Document {
                doc_id: format!("d{i}"),
                text: String::new(),
                token_ids: vec![4 + i, 5 + i, 9],
            })
            .collect()
    }

    fn opts(max_len: usize) -> GenerateOptions {
        GenerateOptions {
            max_len,
            k: None,
            variant: AblationVariant::AttentionFusion,
            heads: 2,
            keep_logits: true,
        }
    }

    #[test]
    fn zero_params_give_zero_state_and_uniform_logits() {
        let p = ModelParams::zeros(&cfg()).unwrap();
        let c = Tensor::zeros(1, 8);
        let h = hidden_state(&[BOS], &c, &p.decoder, 2).unwrap();
        assert!(h.data().iter().all(|&x| x == 0.0));
        let z = decode_step(&[BOS, 5], &c, &p.decoder, 2).unwrap();
        assert_eq!(z.shape(), [1, 12]);
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hidden_state_is_pure_and_bounded_by_t_max() {
        let p = ModelParams::init(&cfg(), 1).unwrap();
        let c = Tensor::row(&[0.1; 8]).unwrap();
        let a = hidden_state(&[BOS, 4, 5], &c, &p.decoder, 2).unwrap();
        let b = hidden_state(&[BOS, 4, 5], &c, &p.decoder, 2).unwrap();
        assert_eq!(a, b);
        let long = vec![BOS; 9];
        assert!(matches!(
            hidden_state(&long, &c, &p.decoder, 2),
            Err(Error::Capacity { len: 9, max: 8 })
        ));
        assert!(hidden_state(&[], &c, &p.decoder, 2).is_err());
    }

    #[test]
    fn context_changes_logits() {
        let p = ModelParams::init(&cfg(), 2).unwrap();
        let a = decode_step(&[BOS, 4], &Tensor::zeros(1, 8), &p.decoder, 2).unwrap();
        let b = decode_step(&[BOS, 4], &Tensor::row(&[0.5; 8]).unwrap(), &p.decoder, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn earlier_positions_ignore_later_tokens() {
        let p = ModelParams::init(&cfg(), 3).unwrap();
        let states = |prefix: &[usize]| {
            let mut g = Graph::new();
            let d = p.decoder.map(&mut |t| g.constant(t.clone()));
            let c = g.constant(Tensor::row(&[0.3; 8]).unwrap());
            let s = decoder_states(&mut g, &d, 2, prefix, c).unwrap();
            g.value(s).clone()
        };
        let a = states(&[BOS, 4, 5, 6, 7]);
        let b = states(&[BOS, 4, 5, 10, 11]);
        assert_eq!(a.row_slice(0), b.row_slice(0));
        assert_eq!(a.row_slice(1), b.row_slice(1));
        assert_eq!(a.row_slice(2), b.row_slice(2));
        assert_ne!(a.row_slice(3), b.row_slice(3));
    }

    #[test]
    fn decode_step_gradient_through_context() {
        let p = ModelParams::init(&cfg(), 4).unwrap();
        let r = grad_check(
            |g, v| {
                let d = p.decoder.map(&mut |t| g.constant(t.clone()));
                let z = decode_step_in_graph(g, &d, 2, &[BOS, 6, 7], v[0])?;
                g.cross_entropy(z, 5)
            },
            &[Tensor::row(&[0.2, -0.1, 0.4, 0.0, -0.3, 0.6, 0.1, -0.5]).unwrap()],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    fn forced(token: usize) -> ModelParams {
        let mut p = ModelParams::zeros(&cfg()).unwrap();
        p.decoder.ln_f_b = Tensor::full(1, 8, 1.0);
        let mut out = Tensor::zeros(8, 12);
        for r in 0..8 {
            out.data_mut()[r * 12 + token] = 1.0;
        }
        p.decoder.out = out;
        p
    }

    #[test]
    fn forced_eos_stops_after_one_step() {
        let p = forced(EOS);
        let idx = build_index(&docs(), &p.encoder).unwrap();
        let r = generate(&[4, 5], &idx, &p, &opts(5)).unwrap();
        assert_eq!(r.tokens, vec![BOS, EOS]);
        assert_eq!(r.traces.len(), 1);
        assert!(r.content().is_empty());
    }

    #[test]
    fn length_cap_is_exact() {
        let p = forced(7);
        let idx = build_index(&docs(), &p.encoder).unwrap();
        let r = generate(&[4, 5], &idx, &p, &opts(3)).unwrap();
        assert_eq!(r.tokens, vec![BOS, 7, 7, 7]);
        assert_eq!(r.traces.len(), 3);
        assert_eq!(r.logits.as_ref().unwrap().len(), 3);
        assert!(generate(&[4], &idx, &p, &opts(9)).is_err());
    }

    #[test]
    fn generation_is_deterministic_for_every_variant() {
        let p = ModelParams::init(&cfg(), 5).unwrap();
        let idx = build_index(&docs(), &p.encoder).unwrap();
        for variant in AblationVariant::ALL {
            let o = GenerateOptions { variant, ..opts(4) };
            let a = generate(&[4, 6], &idx, &p, &o).unwrap();
            let b = generate(&[4, 6], &idx, &p, &o).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.traces.len(), a.tokens.len() - 1);
            for l in a.logits.unwrap() {
                let m = l.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = l.data().iter().map(|x| (x - m).exp()).sum();
                let total: f64 = l.data().iter().map(|x| (x - m).exp() / s).sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn argmax_ties_take_lowest_id() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[0.0; 4]), 0);
    }
}
