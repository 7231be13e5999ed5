//! Query-based vectorized map decoder.
//!
//! `K` learned queries attend to each other and to the (optionally pooled)
//! BEV tokens, then emit class logits over the three element classes plus
//! background and `P` points squashed into the unit square.

pub mod loss;
pub mod matching;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::lift::BevConfig;
use crate::rng::Rng;
use crate::scene::{Point, Range};
use crate::tensor::nn::{sinusoid, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::tensor::{Bound, GatherPlan, Graph, ParamId, ParamStore, Tensor, Var};
use crate::Scalar;

pub use loss::{map_loss, LossWeights, MapLoss};
pub use matching::{hungarian, hungarian_match, CostWeights, GroundTruth, MatchResult};

/// Number of element classes; logits carry one more for background.
pub const CLASSES: usize = 3;
pub const BACKGROUND: usize = CLASSES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub queries: usize,
    pub points: usize,
    pub layers: usize,
    pub heads: usize,
    /// Side of the square average pool applied to the BEV grid before it
    /// becomes cross-attention memory.
    pub bev_pool: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { queries: 12, points: 20, layers: 2, heads: 4, bev_pool: 2 }
    }
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

/// Head output on the tape.
#[derive(Clone, Copy, Debug)]
pub struct MapPrediction {
    /// `K × (CLASSES + 1)`.
    pub logits: Var,
    /// `K × 2P`, columns `x0, y0, x1, y1, …` in `[0, 1]`.
    pub points: Var,
}

/// Plain-value prediction for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedMap {
    /// Per query, softmax probabilities over classes then background.
    pub probs: Vec<Vec<f64>>,
    /// Per query, points in normalized coordinates.
    pub points: Vec<Vec<Point>>,
}

#[derive(Debug)]
pub struct MapHead<T> {
    pub cfg: HeadConfig,
    query: ParamId,
    query_pos: ParamId,
    layers: Vec<DecoderLayer>,
    ln_out: LayerNorm,
    cls: Linear,
    pts_hidden: Linear,
    pts_out: Linear,
    memory_rows: usize,
    pool: Option<Arc<GatherPlan<T>>>,
    pos: Tensor<T>,
}

impl<T: Scalar> MapHead<T> {
    pub fn new(store: &mut ParamStore<T>, cfg: &HeadConfig, bev: &BevConfig, channels: usize, rng: &mut Rng) -> Result<Self> {
        if cfg.queries == 0 || cfg.points < 2 {
            return contract("map head needs at least one query and two points per element");
        }
        if cfg.heads == 0 || channels % cfg.heads != 0 || channels % 4 != 0 {
            return contract(format!("{channels} channels do not suit {} heads and a 2D positional code", cfg.heads));
        }
        let s = cfg.bev_pool.max(1);
        if bev.rows % s != 0 || bev.cols % s != 0 {
            return contract(format!("BEV pool {s} does not divide the {}×{} grid", bev.rows, bev.cols));
        }
        let (rows, cols) = (bev.rows / s, bev.cols / s);
        let pool = (s > 1).then(|| {
            let mut b = GatherPlan::builder(bev.cells());
            let share = T::one() / T::of_usize(s * s);
            for r in 0..rows {
                for c in 0..cols {
                    for dr in 0..s {
                        for dc in 0..s {
                            b.push((r * s + dr) * bev.cols + c * s + dc, share);
                        }
                    }
                    b.end_row();
                }
            }
            Arc::new(b.build())
        });
        let half = channels / 2;
        let mut pos = Vec::with_capacity(rows * cols * channels);
        let (mut py, mut px) = (vec![0.0; half], vec![0.0; half]);
        for r in 0..rows {
            for c in 0..cols {
                sinusoid(r as f64, half, &mut py);
                sinusoid(c as f64, half, &mut px);
                pos.extend(py.iter().chain(&px).map(|&v| T::of(v)));
            }
        }
        let d = channels;
        let layers = (0..cfg.layers)
            .map(|i| DecoderLayer {
                ln_self: LayerNorm::new(store, &format!("head.l{i}.ln_self"), d),
                self_attn: MultiHeadAttention::new(store, &format!("head.l{i}.self"), d, cfg.heads, rng),
                ln_cross: LayerNorm::new(store, &format!("head.l{i}.ln_cross"), d),
                cross_attn: MultiHeadAttention::new(store, &format!("head.l{i}.cross"), d, cfg.heads, rng),
                ln_ffn: LayerNorm::new(store, &format!("head.l{i}.ln_ffn"), d),
                ffn: FeedForward::new(store, &format!("head.l{i}.ffn"), d, 2 * d, rng),
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            query: store.add_uniform("head.query", &[cfg.queries, d], d, rng),
            query_pos: store.add_uniform("head.query_pos", &[cfg.queries, d], d, rng),
            layers,
            ln_out: LayerNorm::new(store, "head.ln_out", d),
            cls: Linear::new(store, "head.cls", d, CLASSES + 1, true, rng),
            pts_hidden: Linear::new(store, "head.pts_hidden", d, d, true, rng),
            pts_out: Linear::new(store, "head.pts_out", d, 2 * cfg.points, true, rng),
            memory_rows: rows * cols,
            pool,
            pos: Tensor::new([rows * cols, d], pos),
        })
    }

    /// Decode a `cells × C` BEV feature.
    pub fn decode(&self, g: &mut Graph<T>, p: &Bound, bev: Var) -> MapPrediction {
        let mem = match &self.pool {
            Some(plan) => g.sparse_gather(bev, plan.clone()),
            None => bev,
        };
        assert_eq!(g.shape(mem)[0], self.memory_rows, "BEV feature does not match the head's grid");
        let pos = g.constant(self.pos.clone());
        let mem_key = g.add(mem, pos);
        let qpos = p[self.query_pos];
        let mut x = p[self.query];
        for l in &self.layers {
            let h = l.ln_self.forward(g, p, x);
            let hq = g.add(h, qpos);
            let a = l.self_attn.forward(g, p, hq, hq, h);
            x = g.add(x, a);
            let h = l.ln_cross.forward(g, p, x);
            let hq = g.add(h, qpos);
            let a = l.cross_attn.forward(g, p, hq, mem_key, mem);
            x = g.add(x, a);
            let h = l.ln_ffn.forward(g, p, x);
            let f = l.ffn.forward(g, p, h);
            x = g.add(x, f);
        }
        let x = self.ln_out.forward(g, p, x);
        let logits = self.cls.forward(g, p, x);
        let h = self.pts_hidden.forward(g, p, x);
        let h = g.relu(h);
        let pts = self.pts_out.forward(g, p, h);
        let points = g.sigmoid(pts);
        MapPrediction { logits, points }
    }
}

impl DecodedMap {
    pub fn from_graph<T: Scalar>(g: &Graph<T>, pred: &MapPrediction) -> Self {
        let logits = g.value(pred.logits);
        let pts = g.value(pred.points);
        let probs = (0..logits.rows())
            .map(|r| {
                let mut row: Vec<f64> = logits.row(r).iter().map(|x| x.as_f64()).collect();
                crate::tensor::kernels::softmax_in_place(&mut row);
                row
            })
            .collect();
        let points = (0..pts.rows())
            .map(|r| pts.row(r).chunks(2).map(|c| [c[0].as_f64(), c[1].as_f64()]).collect())
            .collect();
        Self { probs, points }
    }

    /// Points of query `q` in ego meters.
    pub fn points_m(&self, q: usize, range: &Range) -> Vec<Point> {
        self.points[q].iter().map(|&p| range.denormalize(p)).collect()
    }
}
