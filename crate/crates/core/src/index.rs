//! Trainable document encoding and an exact inner-product index.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::params::DocEncoderParams;
use crate::tensor::{Graph, Tensor, Var};

/// Dense document matrix; row `i` encodes `doc_ids[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Index {
    doc_ids: Vec<String>,
    matrix: Tensor,
}

/// An index whose matrix lives in a graph, so scores can be differentiated
/// with respect to the document rows.
#[derive(Clone, Copy, Debug)]
pub struct GraphIndex<'a> {
    pub doc_ids: &'a [String],
    pub matrix: Var,
}

/// `tanh(mean(E[tokens]) · P + b)` for each token list, stacked `[n×d]`.
pub fn encode_in_graph(graph: &mut Graph, enc: &DocEncoderParams<Var>, token_lists: &[Vec<usize>]) -> Result<Var> {
    if let Some(i) = token_lists.iter().position(Vec::is_empty) {
        return Err(Error::Encoding(format!(
            "cannot encode empty token sequence (item {i})"
        )));
    }
    let pooled = graph.embedding_mean(enc.embed, token_lists)?;
    let proj = graph.matmul(pooled, enc.proj)?;
    let biased = graph.add_row(proj, enc.bias)?;
    graph.tanh(biased)
}

/// Encodes one document to a `[1×d]` vector.
pub fn encode_document(doc: &Document, params: &DocEncoderParams) -> Result<Tensor> {
    if doc.token_ids.is_empty() {
        return Err(Error::Encoding(format!(
            "document {:?} is empty after tokenization",
            doc.doc_id
        )));
    }
    let mut g = Graph::new();
    let enc = params.map(&mut |t| g.constant(t.clone()));
    let v = encode_in_graph(&mut g, &enc, std::slice::from_ref(&doc.token_ids))?;
    Ok(g.value(v).clone())
}

fn check_unique(docs: &[Document]) -> Result<()> {
    if docs.is_empty() {
        return Err(Error::contract("cannot index an empty document set"));
    }
    let mut seen = HashSet::new();
    for d in docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::Integrity(format!("duplicate doc_id {:?}", d.doc_id)));
        }
    }
    Ok(())
}

/// Encodes `docs` in order into a graph-resident matrix.
pub fn build_index_in_graph<'a>(
    graph: &mut Graph,
    enc: &DocEncoderParams<Var>,
    docs: &[Document],
    doc_ids: &'a [String],
) -> Result<GraphIndex<'a>> {
    check_unique(docs)?;
    let lists: Vec<Vec<usize>> = docs.iter().map(|d| d.token_ids.clone()).collect();
    let matrix = encode_in_graph(graph, enc, &lists)?;
    Ok(GraphIndex { doc_ids, matrix })
}

pub fn build_index(docs: &[Document], params: &DocEncoderParams) -> Result<Index> {
    check_unique(docs)?;
    let mut g = Graph::new();
    let enc = params.map(&mut |t| g.constant(t.clone()));
    let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let gi = build_index_in_graph(&mut g, &enc, docs, &ids)?;
    Ok(Index {
        matrix: g.value(gi.matrix).clone(),
        doc_ids: ids,
    })
}

/// `(q′ · d_i) / √d` for every row of the index, as a `[1×N]` row.
pub fn score_all(graph: &mut Graph, q_prime: Var, index: Var) -> Result<Var> {
    let (sq, si) = (graph.shape(q_prime), graph.shape(index));
    if sq[0] != 1 || sq[1] != si[1] {
        return Err(Error::Dimension {
            op: "score_all",
            lhs: sq,
            rhs: si,
        });
    }
    let raw = graph.matmul_bt(q_prime, index)?;
    graph.scale(raw, 1.0 / (sq[1] as f64).sqrt())
}

/// Positions of the `k` highest scores, best first; ties go to the
/// lexicographically smaller doc id.
pub fn top_k(scores: &[f64], doc_ids: &[String], k: usize) -> Result<Vec<(usize, f64)>> {
    if scores.len() != doc_ids.len() {
        return Err(Error::contract(format!(
            "{} scores for {} documents",
            scores.len(),
            doc_ids.len()
        )));
    }
    if k == 0 || k > scores.len() {
        return Err(Error::contract(format!(
            "top_k needs 1 <= k <= {}, got {k}",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| doc_ids[a].cmp(&doc_ids[b]))
    });
    Ok(order.into_iter().take(k).map(|i| (i, scores[i])).collect())
}

impl Index {
    pub fn new(doc_ids: Vec<String>, matrix: Tensor) -> Result<Self> {
        if doc_ids.len() != matrix.rows() {
            return Err(Error::Integrity(format!(
                "{} doc ids for {} index rows",
                doc_ids.len(),
                matrix.rows()
            )));
        }
        Ok(Self { doc_ids, matrix })
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Places the matrix in `graph` as a constant.
    pub fn in_graph<'a>(&'a self, graph: &mut Graph) -> GraphIndex<'a> {
        GraphIndex {
            doc_ids: &self.doc_ids,
            matrix: graph.constant(self.matrix.clone()),
        }
    }

    /// Snapshot layout, little-endian: `u64` N, `u64` d, then N doc ids as
    /// `u32` byte length + UTF-8, then N·d row-major `f64`.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for id in &self.doc_ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for x in self.matrix.data() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(e.to_string());
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(fmt)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8).map_err(fmt)?;
        let d = u64::from_le_bytes(b8) as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b4 = [0u8; 4];
            r.read_exact(&mut b4).map_err(fmt)?;
            let mut buf = vec![0u8; u32::from_le_bytes(b4) as usize];
            r.read_exact(&mut buf).map_err(fmt)?;
            ids.push(String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?);
        }
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            r.read_exact(&mut b8).map_err(fmt)?;
            data.push(f64::from_le_bytes(b8));
        }
        Index::new(ids, Tensor::new([n, d], data)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_snapshot(bytes.as_slice())
    }
}
