//! Trainable parameter trees and the binary checkpoint format.
//!
//! Parameter structs are generic over their leaf type: `T = Tensor` holds
//! the weights, `T = Var` holds the same weights bound into a [`Graph`].

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

macro_rules! param_struct {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T = Tensor> {
            $($(#[$fmeta])* pub $field: T,)*
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> $name<U> {
                $name { $($field: f(&self.$field),)* }
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
                $(f(format!("{}.{}", prefix, stringify!($field)), &self.$field);)*
            }

            pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut T)) {
                $(f(format!("{}.{}", prefix, stringify!($field)), &mut self.$field);)*
            }
        }
    };
}

param_struct!(
    /// Bag-of-tokens encoder shared by queries and documents.
    DocEncoderParams {
        /// `[V×d]`
        embed,
        /// `[d×d]`
        proj,
        /// `[1×d]`
        bias,
    }
);

param_struct!(
    /// Two-layer MLP mapping `[q; h_t]` to the retrieval vector.
    ControllerParams {
        /// `[2d×d_h]`
        w1,
        /// `[1×d_h]`
        b1,
        /// `[d_h×d]`
        w2,
        /// `[1×d]`
        b2,
    }
);

param_struct!(
    /// One pre-norm transformer block.
    LayerParams {
        ln1_g,
        ln1_b,
        wq,
        wk,
        wv,
        wo,
        ln2_g,
        ln2_b,
        ff1_w,
        ff1_b,
        ff2_w,
        ff2_b,
    }
);

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<T = Tensor> {
    /// `[V×d]`
    pub embed: T,
    /// Learned positions, `[T_max×d]`.
    pub pos: T,
    pub layers: Vec<LayerParams<T>>,
    pub ln_f_g: T,
    pub ln_f_b: T,
    /// Context injection, `[2d×d]`.
    pub ctx: T,
    /// Output map `W_o`, `[d×V]`.
    pub out: T,
}

impl<T> DecoderParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> DecoderParams<U> {
        DecoderParams {
            embed: f(&self.embed),
            pos: f(&self.pos),
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
            ln_f_g: f(&self.ln_f_g),
            ln_f_b: f(&self.ln_f_b),
            ctx: f(&self.ctx),
            out: f(&self.out),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{prefix}.embed"), &self.embed);
        f(format!("{prefix}.pos"), &self.pos);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.layer{i}"), f);
        }
        f(format!("{prefix}.ln_f_g"), &self.ln_f_g);
        f(format!("{prefix}.ln_f_b"), &self.ln_f_b);
        f(format!("{prefix}.ctx"), &self.ctx);
        f(format!("{prefix}.out"), &self.out);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut T)) {
        f(format!("{prefix}.embed"), &mut self.embed);
        f(format!("{prefix}.pos"), &mut self.pos);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.layer{i}"), f);
        }
        f(format!("{prefix}.ln_f_g"), &mut self.ln_f_g);
        f(format!("{prefix}.ln_f_b"), &mut self.ln_f_b);
        f(format!("{prefix}.ctx"), &mut self.ctx);
        f(format!("{prefix}.out"), &mut self.out);
    }
}

/// Every trainable leaf of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub encoder: DocEncoderParams<T>,
    pub controller: ControllerParams<T>,
    pub decoder: DecoderParams<T>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.map(f),
            controller: self.controller.map(f),
            decoder: self.decoder.map(f),
        }
    }

    /// Visits leaves in checkpoint order with dotted names.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        self.encoder.visit("encoder", f);
        self.controller.visit("controller", f);
        self.decoder.visit("decoder", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut T)) {
        self.encoder.visit_mut("encoder", f);
        self.controller.visit_mut("controller", f);
        self.decoder.visit_mut("decoder", f);
    }

    pub fn leaves(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n, t)));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    pub t_max: usize,
    pub ctrl_hidden: usize,
}

impl ModelConfig {
    /// Default sizes for a vocabulary of `vocab` tokens.
    pub fn for_vocab(vocab: usize) -> Self {
        Self {
            vocab,
            d_model: 32,
            heads: 2,
            layers: 2,
            ff: 128,
            t_max: 64,
            ctrl_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.vocab,
            self.d_model,
            self.heads,
            self.layers,
            self.ff,
            self.t_max,
            self.ctrl_hidden,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "head count {} does not divide d_model {}",
                self.heads, self.d_model
            )));
        }
        Ok(())
    }

    fn as_words(&self) -> [u64; 7] {
        [
            self.vocab,
            self.d_model,
            self.heads,
            self.layers,
            self.ff,
            self.t_max,
            self.ctrl_hidden,
        ]
        .map(|x| x as u64)
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::raw([rows, cols], data).with_grad()
}

/// Weight matrix with entries uniform in ±1/√fan_in.
fn weight(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}

fn zeros(rows: usize, cols: usize) -> Tensor {
    Tensor::zeros(rows, cols).with_grad()
}

fn ones(rows: usize, cols: usize) -> Tensor {
    Tensor::full(rows, cols, 1.0).with_grad()
}

impl ModelParams<Tensor> {
    /// Seeded initialization: matrices uniform in ±1/√fan_in, embedding
    /// tables uniform in ±1, biases zero, layer-norm gains one.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d) = (cfg.vocab, cfg.d_model);
        let encoder = DocEncoderParams {
            embed: uniform(&mut rng, v, d, 1.0),
            proj: weight(&mut rng, d, d),
            bias: zeros(1, d),
        };
        let controller = ControllerParams {
            w1: weight(&mut rng, 2 * d, cfg.ctrl_hidden),
            b1: zeros(1, cfg.ctrl_hidden),
            w2: weight(&mut rng, cfg.ctrl_hidden, d),
            b2: zeros(1, d),
        };
        let embed = uniform(&mut rng, v, d, 1.0);
        let pos = uniform(&mut rng, cfg.t_max, d, 0.1);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                ln1_g: ones(1, d),
                ln1_b: zeros(1, d),
                wq: weight(&mut rng, d, d),
                wk: weight(&mut rng, d, d),
                wv: weight(&mut rng, d, d),
                wo: weight(&mut rng, d, d),
                ln2_g: ones(1, d),
                ln2_b: zeros(1, d),
                ff1_w: weight(&mut rng, d, cfg.ff),
                ff1_b: zeros(1, cfg.ff),
                ff2_w: weight(&mut rng, cfg.ff, d),
                ff2_b: zeros(1, d),
            })
            .collect();
        let decoder = DecoderParams {
            embed,
            pos,
            layers,
            ln_f_g: ones(1, d),
            ln_f_b: zeros(1, d),
            ctx: weight(&mut rng, 2 * d, d),
            out: weight(&mut rng, d, v),
        };
        Ok(Self {
            encoder,
            controller,
            decoder,
        })
    }

    /// All-zero parameters with the shapes of `cfg` (gains included).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let mut p = Self::init(cfg, 0)?;
        p.visit_mut(&mut |_, t| t.data_mut().iter_mut().for_each(|x| *x = 0.0));
        Ok(p)
    }

    /// Binds every leaf into `graph`, tracking gradients.
    pub fn bind(&self, graph: &mut Graph) -> ModelParams<Var> {
        self.map(&mut |t| graph.leaf(t.clone()))
    }

    /// Binds every leaf as a constant (inference).
    pub fn bind_frozen(&self, graph: &mut Graph) -> ModelParams<Var> {
        self.map(&mut |t| graph.constant(t.clone()))
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut(&mut |_, t| t.zero_grad());
    }

    /// Adds the graph's gradients into each leaf's gradient slot.
    pub fn accumulate_grads(&mut self, graph: &Graph, bound: &ModelParams<Var>) -> Result<()> {
        let vars: Vec<Var> = bound.leaves().into_iter().map(|(_, v)| *v).collect();
        let mut i = 0;
        let mut res = Ok(());
        self.visit_mut(&mut |_, t| {
            let zero;
            let g = match graph.grad(vars[i]) {
                Some(g) => g,
                None => {
                    zero = vec![0.0; t.len()];
                    &zero
                }
            };
            if res.is_ok() {
                res = t.accumulate_grad(g);
            }
            i += 1;
        });
        res
    }

    pub fn num_scalars(&self) -> usize {
        self.leaves().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn grad_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.visit(&mut |_, t| {
            if let Some(g) = t.grad() {
                sq += g.iter().map(|x| x * x).sum::<f64>();
            }
        });
        sq.sqrt()
    }

    /// `name: max|w|` per block, for diagnostics.
    pub fn describe_blocks(&self) -> String {
        self.leaves()
            .iter()
            .map(|(n, t)| format!("{n}: max|w|={:.3e}", t.max_abs()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DRAGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes a checkpoint: magic, `u32` version, `u32` config word count and
/// the `u64` model sizes, `u32` block count, then per block a `u32`-length
/// name, `u64` rows, `u64` cols and row-major `f64` data. All little-endian.
pub fn write_checkpoint<W: Write>(cfg: &ModelConfig, params: &ModelParams, mut w: W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let words = cfg.as_words();
    w.write_all(&(words.len() as u32).to_le_bytes())?;
    for x in words {
        w.write_all(&x.to_le_bytes())?;
    }
    let leaves = params.leaves();
    w.write_all(&(leaves.len() as u32).to_le_bytes())?;
    for (name, t) in leaves {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Format(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Format(e.to_string()))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelConfig, ModelParams)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::Format(e.to_string()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n_words = read_u32(&mut r)? as usize;
    if n_words != 7 {
        return Err(Error::Format(format!("expected 7 config words, found {n_words}")));
    }
    let mut w = [0usize; 7];
    for x in &mut w {
        *x = read_u64(&mut r)? as usize;
    }
    let cfg = ModelConfig {
        vocab: w[0],
        d_model: w[1],
        heads: w[2],
        layers: w[3],
        ff: w[4],
        t_max: w[5],
        ctrl_hidden: w[6],
    };
    let mut params = ModelParams::zeros(&cfg).map_err(|e| Error::Format(e.to_string()))?;
    let expected = params.leaves().len();
    let n_blocks = read_u32(&mut r)? as usize;
    if n_blocks != expected {
        return Err(Error::Format(format!("expected {expected} blocks, found {n_blocks}")));
    }
    let mut res = Ok(());
    params.visit_mut(&mut |name, t| {
        if res.is_err() {
            return;
        }
        res = (|| {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
            if buf != name.as_bytes() {
                return Err(Error::Format(format!(
                    "expected block {name}, found {}",
                    String::from_utf8_lossy(&buf)
                )));
            }
            let shape = [read_u64(&mut r)? as usize, read_u64(&mut r)? as usize];
            if shape != t.shape() {
                return Err(Error::Format(format!(
                    "block {name} has shape {shape:?}, expected {:?}",
                    t.shape()
                )));
            }
            for x in t.data_mut() {
                *x = f64::from_bits(read_u64(&mut r)?);
            }
            if t.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!("block {name} holds non-finite values")));
            }
            Ok(())
        })();
    });
    res?;
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(cfg, params, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab: 16,
            d_model: 8,
            heads: 2,
            layers: 2,
            ff: 16,
            t_max: 8,
            ctrl_hidden: 16,
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = tiny();
        let p = ModelParams::init(&cfg, 11).unwrap();
        let mut a = Vec::new();
        write_checkpoint(&cfg, &p, &mut a).unwrap();
        let (cfg2, p2) = read_checkpoint(a.as_slice()).unwrap();
        assert_eq!(cfg2, cfg);
        let mut b = Vec::new();
        write_checkpoint(&cfg2, &p2, &mut b).unwrap();
        assert_eq!(a, b);
        for ((_, x), (_, y)) in p.leaves().iter().zip(p2.leaves()) {
            assert!(x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let cfg = tiny();
        let p = ModelParams::init(&cfg, 1).unwrap();
        let mut a = Vec::new();
        write_checkpoint(&cfg, &p, &mut a).unwrap();
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_checkpoint(&a[..a.len() - 3]), Err(Error::Format(_))));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = tiny();
        assert_eq!(ModelParams::init(&cfg, 3).unwrap(), ModelParams::init(&cfg, 3).unwrap());
        assert_ne!(ModelParams::init(&cfg, 3).unwrap(), ModelParams::init(&cfg, 4).unwrap());
        let p = ModelParams::init(&cfg, 3).unwrap();
        let bound = 1.0 / (2.0 * cfg.d_model as f64).sqrt();
        assert!(p.controller.w1.max_abs() <= bound);
        assert_eq!(p.controller.b1.max_abs(), 0.0);
    }

    #[test]
    fn head_count_must_divide_width() {
        let cfg = ModelConfig { heads: 3, ..tiny() };
        assert!(matches!(ModelParams::init(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn names_are_unique() {
        let p = ModelParams::init(&tiny(), 0).unwrap();
        let names: Vec<String> = p.leaves().into_iter().map(|(n, _)| n).collect();
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert!(names.contains(&"decoder.layer1.ff2_b".to_string()));
    }
}
