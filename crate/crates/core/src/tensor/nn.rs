//! Layers assembled from tape primitives.

use super::{Bound, Graph, ParamId, ParamStore, Var};
use crate::rng::Rng;
use crate::Scalar;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[in_dim, out_dim], in_dim, rng);
        let b = bias.then(|| store.add_full(format!("{name}.b"), &[out_dim], 0.0));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p[self.w]);
        match self.b {
            Some(b) => g.add_row(y, p[b]),
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add_full(format!("{name}.gain"), &[dim], 1.0),
            bias: store.add_full(format!("{name}.bias"), &[dim], 0.0),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.layer_norm(x, p[self.gain], p[self.bias], LN_EPS)
    }
}

/// Multi-head scaled dot-product attention without projection biases.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "{dim} channels do not split over {heads} heads");
        Self {
            wq: Linear::new(store, &format!("{name}.wq"), dim, dim, false, rng),
            wk: Linear::new(store, &format!("{name}.wk"), dim, dim, false, rng),
            wv: Linear::new(store, &format!("{name}.wv"), dim, dim, false, rng),
            wo: Linear::new(store, &format!("{name}.wo"), dim, dim, false, rng),
            heads,
        }
    }

    /// `query: n×C`, `key: m×C`, `value: m×C` → `n×C`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, query: Var, key: Var, value: Var) -> Var {
        let q = self.wq.forward(g, p, query);
        let k = self.wk.forward(g, p, key);
        let v = self.wv.forward(g, p, value);
        let o = self.heads_attend(g, q, k, v);
        self.wo.forward(g, p, o)
    }

    /// Self-attention restricted to consecutive blocks of `segment` rows;
    /// projections run once over the whole stack.
    pub fn forward_segmented<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, segment: usize) -> Var {
        let rows = g.shape(x)[0];
        assert!(segment > 0 && rows % segment == 0, "{rows} rows do not split into segments of {segment}");
        let q = self.wq.forward(g, p, x);
        let k = self.wk.forward(g, p, x);
        let v = self.wv.forward(g, p, x);
        let outs: Vec<Var> = (0..rows / segment)
            .map(|s| {
                let (qs, ks, vs) = (
                    g.slice_rows(q, s * segment, segment),
                    g.slice_rows(k, s * segment, segment),
                    g.slice_rows(v, s * segment, segment),
                );
                self.heads_attend(g, qs, ks, vs)
            })
            .collect();
        let o = if outs.len() == 1 { outs[0] } else { g.concat_rows(&outs) };
        self.wo.forward(g, p, o)
    }

    fn heads_attend<T: Scalar>(&self, g: &mut Graph<T>, q: Var, k: Var, v: Var) -> Var {
        let dim = self.wq.out_dim;
        let d = dim / self.heads;
        let scale = T::one() / T::of_usize(d).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, h * d, d), g.slice_cols(k, h * d, d), g.slice_cols(v, h * d, d))
            };
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt);
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            outs.push(g.matmul(a, vh));
        }
        if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let h = self.up.forward(g, p, x);
        let h = g.gelu(h);
        self.down.forward(g, p, h)
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + ffn(ln(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, 2 * dim, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let h = self.ln_attn.forward(g, p, x);
        let a = self.attn.forward(g, p, h, h, h);
        self.finish(g, p, x, a)
    }

    /// Same block applied independently to consecutive `segment`-row groups.
    pub fn forward_segmented<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, segment: usize) -> Var {
        let h = self.ln_attn.forward(g, p, x);
        let a = self.attn.forward_segmented(g, p, h, segment);
        self.finish(g, p, x, a)
    }

    fn finish<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, a: Var) -> Var {
        let x = g.add(x, a);
        let h = self.ln_ffn.forward(g, p, x);
        let f = self.ffn.forward(g, p, h);
        g.add(x, f)
    }
}

/// Fixed sinusoidal code of a scalar position, `dim` channels.
pub fn sinusoid(pos: f64, dim: usize, out: &mut [f64]) {
    let half = dim / 2;
    for i in 0..half {
        let freq = 1.0 / 10_000f64.powf(i as f64 / half.max(1) as f64);
        out[2 * i] = (pos * freq).sin();
        out[2 * i + 1] = (pos * freq).cos();
    }
}
