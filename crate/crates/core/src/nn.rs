//! Transformer building blocks shared by the layout translator and the denoiser.

use crate::autodiff::{AttentionShape, Graph, Var};
use crate::params::{Bound, Init, ParamBuilder, ParamId};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize) -> Self {
        Self::with_init(pb, name, d_in, d_out, Init::Xavier)
    }

    pub fn with_init(pb: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize, init: Init) -> Self {
        pb.scoped(name, |pb| Self {
            w: pb.add("w", d_in, d_out, init),
            b: Some(pb.add("b", 1, d_out, Init::Zeros)),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.linear(x, p.var(self.w), p.opt(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        pb.scoped(name, |pb| Self {
            gamma: pb.add("g", 1, dim, Init::Ones),
            beta: pb.add("b", 1, dim, Init::Zeros),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.layer_norm(x, Some(p.var(self.gamma)), Some(p.var(self.beta)))
    }
}

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, heads: usize) -> Self {
        pb.scoped(name, |pb| Self {
            q: Linear::new(pb, "q", dim, dim),
            k: Linear::new(pb, "k", dim, dim),
            v: Linear::new(pb, "v", dim, dim),
            out: Linear::new(pb, "out", dim, dim),
            heads,
        })
    }

    /// Queries come from `x` (`batch * q_len` rows), keys and values from
    /// `context` (`batch * kv_len` rows). Pass `x` twice for self-attention.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        x: Var,
        context: Var,
        batch: usize,
        q_len: usize,
        kv_len: usize,
    ) -> Var {
        let q = self.q.forward(g, p, x);
        let k = self.k.forward(g, p, context);
        let v = self.v.forward(g, p, context);
        let shape = AttentionShape {
            batch,
            q_len,
            kv_len,
            heads: self.heads,
        };
        let a = g.attention(q, k, v, shape);
        self.out.forward(g, p, a)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, hidden: usize) -> Self {
        pb.scoped(name, |pb| Self {
            fc1: Linear::new(pb, "fc1", dim, hidden),
            fc2: Linear::new(pb, "fc2", hidden, dim),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.fc1.forward(g, p, x);
        let h = g.gelu(h);
        self.fc2.forward(g, p, h)
    }
}

/// Pre-norm encoder block:
/// `z = x + Attn(LN(x))`, `out = z + MLP(LN(z))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, heads: usize, hidden: usize) -> Self {
        pb.scoped(name, |pb| Self {
            norm1: LayerNorm::new(pb, "norm1", dim),
            attn: MultiHeadAttention::new(pb, "attn", dim, heads),
            norm2: LayerNorm::new(pb, "norm2", dim),
            mlp: Mlp::new(pb, "mlp", dim, hidden),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, batch: usize, len: usize) -> Var {
        let h = self.norm1.forward(g, p, x);
        let a = self.attn.forward(g, p, h, h, batch, len, len);
        let z = g.add(x, a);
        let h = self.norm2.forward(g, p, z);
        let m = self.mlp.forward(g, p, h);
        g.add(z, m)
    }

    /// Output projections of both residual branches.
    pub fn output_projections(&self) -> [&Linear; 2] {
        [&self.attn.out, &self.mlp.fc2]
    }
}

/// Pre-norm decoder block: query self-attention, cross-attention to the
/// encoder context, then MLP, each wrapped in a residual.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub norm1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm3: LayerNorm,
    pub mlp: Mlp,
}

impl DecoderBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, heads: usize, hidden: usize) -> Self {
        pb.scoped(name, |pb| Self {
            norm1: LayerNorm::new(pb, "norm1", dim),
            self_attn: MultiHeadAttention::new(pb, "self_attn", dim, heads),
            norm2: LayerNorm::new(pb, "norm2", dim),
            cross_attn: MultiHeadAttention::new(pb, "cross_attn", dim, heads),
            norm3: LayerNorm::new(pb, "norm3", dim),
            mlp: Mlp::new(pb, "mlp", dim, hidden),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        queries: Var,
        context: Var,
        batch: usize,
        q_len: usize,
        ctx_len: usize,
    ) -> Var {
        let h = self.norm1.forward(g, p, queries);
        let a = self.self_attn.forward(g, p, h, h, batch, q_len, q_len);
        let x = g.add(queries, a);
        let h = self.norm2.forward(g, p, x);
        let c = self.cross_attn.forward(g, p, h, context, batch, q_len, ctx_len);
        let x = g.add(x, c);
        let h = self.norm3.forward(g, p, x);
        let m = self.mlp.forward(g, p, h);
        g.add(x, m)
    }
}
