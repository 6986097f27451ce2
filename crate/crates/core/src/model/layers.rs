//! Transformer building blocks shared by the commonality encoder and the
//! per-step encoder-decoder. Blocks use pre-normalization.

use crate::error::Result;
use crate::numerics::{Rng, Scalar, Var};

use super::params::{Graph, ParamId, ParamStore};

/// Standard deviation for learned embeddings (tokens, queries, positions).
pub const EMBED_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Xavier-normal weights `[fan_in × fan_out]`, zero bias.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            weight: store.normal(format!("{name}.weight"), &[fan_in, fan_out], std, rng),
            bias: store.zeros(format!("{name}.bias"), &[fan_out]),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.tape.matmul(x, w)?;
        g.tape.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.ones(format!("{name}.gamma"), &[dim]),
            beta: store.zeros(format!("{name}.beta"), &[dim]),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.tape.layer_norm(x, gamma, beta)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.tape.gelu(h)?;
        self.fc2.forward(g, h)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            heads,
        }
    }

    /// Scaled dot-product attention of `queries` over `memory`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, queries: Var, memory: Var) -> Result<Var> {
        let q = self.q.forward(g, queries)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let dim = g.value(q).cols();
        let hd = dim / self.heads;
        let scale = S::narrow(1.0 / (hd as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.tape.slice_cols(q, h * hd, hd)?;
            let kh = g.tape.slice_cols(k, h * hd, hd)?;
            let vh = g.tape.slice_cols(v, h * hd, hd)?;
            let scores = g.tape.matmul_nt(qh, kh)?;
            let scores = g.tape.scale(scores, scale)?;
            let attn = g.tape.softmax(scores, 1.0)?;
            outs.push(g.tape.matmul(attn, vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            g.tape.concat_cols(&outs)?
        };
        self.out.forward(g, merged)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderBlock {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut Rng,
    ) -> Self {
        EncoderBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, dim * mlp_ratio, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let a = self.attn.forward(g, h, h)?;
        let x = g.tape.add(x, a)?;
        let h = self.norm2.forward(g, x)?;
        let m = self.mlp.forward(g, h)?;
        g.tape.add(x, m)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub norm1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm3: LayerNorm,
    pub mlp: Mlp,
}

impl DecoderBlock {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut Rng,
    ) -> Self {
        DecoderBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            self_attn: MultiHeadAttention::new(
                store,
                &format!("{name}.self_attn"),
                dim,
                heads,
                rng,
            ),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            cross_attn: MultiHeadAttention::new(
                store,
                &format!("{name}.cross_attn"),
                dim,
                heads,
                rng,
            ),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), dim),
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, dim * mlp_ratio, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var, memory: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let a = self.self_attn.forward(g, h, h)?;
        let x = g.tape.add(x, a)?;
        let h = self.norm2.forward(g, x)?;
        let c = self.cross_attn.forward(g, h, memory)?;
        let x = g.tape.add(x, c)?;
        let h = self.norm3.forward(g, x)?;
        let m = self.mlp.forward(g, h)?;
        g.tape.add(x, m)
    }
}
