//! Deformable attention of learnable queries into a panorama, and the
//! transformer decoder that turns context tokens into a full view grid.

use std::sync::Arc;

use super::panorama::Panorama;
use crate::rng::Rng;
use crate::scene::Point;
use crate::tensor::nn::{LayerNorm, Linear, TransformerBlock};
use crate::tensor::{Bound, GatherPlan, Graph, ParamId, ParamStore, Tensor, Var};
use crate::Scalar;

/// Learnable queries that sample the panorama at reference points plus
/// predicted offsets.
#[derive(Clone, Debug)]
pub struct DeformableQueries {
    pub queries: ParamId,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub offset: Linear,
    pub ln: LayerNorm,
    pub heads: usize,
    pub n_ref: usize,
    pub n_q: usize,
}

/// Intermediate values exposed for inspection.
#[derive(Clone, Debug)]
pub struct AttendTrace {
    /// Sampling locations, `n_q·heads·n_ref × 2`, panorama grid coordinates.
    pub locations: Var,
    /// Attention output before the output projection, `n_q × C`.
    pub values: Var,
    /// Updated query tokens, `n_q × C`.
    pub tokens: Var,
}

impl DeformableQueries {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        channels: usize,
        heads: usize,
        n_ref: usize,
        n_q: usize,
        rng: &mut Rng,
    ) -> Self {
        let queries = store.add_uniform("pvr.queries", &[n_q, channels], channels, rng);
        let wq = Linear::new(store, "pvr.wq", channels, channels, false, rng);
        let wk = Linear::new(store, "pvr.wk", channels, channels, false, rng);
        let wv = Linear::new(store, "pvr.wv", channels, channels, false, rng);
        let wo = Linear::new(store, "pvr.wo", channels, channels, false, rng);
        // Offsets start at zero so sampling begins exactly at the reference points.
        let offset = Linear {
            w: store.add_full("pvr.offset.w", &[channels, heads * n_ref * 2], 0.0),
            b: Some(store.add_full("pvr.offset.b", &[heads * n_ref * 2], 0.0)),
            in_dim: channels,
            out_dim: heads * n_ref * 2,
        };
        let ln = LayerNorm::new(store, "pvr.ln", channels);
        Self { queries, wq, wk, wv, wo, offset, ln, heads, n_ref, n_q }
    }

    /// `LN(V + W_o · attn(V W_q, φ(F W_k, p + Δp), φ(F W_v, p + Δp)))`.
    pub fn attend<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, pano: &Panorama, refs: &[Point]) -> AttendTrace {
        assert_eq!(refs.len(), self.n_ref, "reference point count");
        let v = p[self.queries];
        let rows = self.n_q * self.heads * self.n_ref;
        let delta = self.offset.forward(g, p, v);
        let delta = g.reshape(delta, [rows, 2]);
        let mut base = Vec::with_capacity(rows * 2);
        for _ in 0..self.n_q * self.heads {
            for r in refs {
                base.push(T::of(r[0]));
                base.push(T::of(r[1]));
            }
        }
        let base = g.constant(Tensor::new([rows, 2], base));
        let locations = g.add(base, delta);
        // Grid cell k is centered at k + 0.5 in continuous coordinates.
        let half = g.constant(Tensor::full([rows, 2], T::of(-0.5)));
        let sample_at = g.add(locations, half);
        let c = g.shape(pano.feature)[1];
        // Projection commutes with bilinear sampling, so project the panorama once.
        let k = self.wk.forward(g, p, pano.feature);
        let k = g.reshape(k, [pano.height, pano.width, c]);
        let k = g.grid_sample(k, sample_at);
        let val = self.wv.forward(g, p, pano.feature);
        let val = g.reshape(val, [pano.height, pano.width, c]);
        let val = g.grid_sample(val, sample_at);
        let q = self.wq.forward(g, p, v);
        let values = g.grouped_attention(q, k, val, self.heads, self.n_ref);
        let o = self.wo.forward(g, p, values);
        let r = g.add(v, o);
        let tokens = self.ln.forward(g, p, r);
        AttendTrace { locations, values, tokens }
    }
}

/// Transformer decoder over `[mask tokens, extra tokens, pooled panorama]`
/// emitting a `grid_h·grid_w × C` view grid from the mask-token slots.
#[derive(Clone, Debug)]
pub struct ViewDecoder {
    mask_token: ParamId,
    mask_pos: ParamId,
    view_emb: ParamId,
    ring_emb: ParamId,
    cell_emb: ParamId,
    blocks: Vec<TransformerBlock>,
    ln: LayerNorm,
    out: Linear,
    views: usize,
    grid_h: usize,
    grid_w: usize,
    pool: usize,
}

impl ViewDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        views: usize,
        grid_h: usize,
        grid_w: usize,
        channels: usize,
        heads: usize,
        depth: usize,
        pool: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(pool > 0 && grid_h % pool == 0 && grid_w % pool == 0, "pool must divide the grid");
        let cells = grid_h * grid_w;
        let pooled = cells / (pool * pool);
        Self {
            mask_token: store.add_uniform("dec.mask_token", &[channels], channels, rng),
            mask_pos: store.add_uniform("dec.mask_pos", &[cells, channels], channels, rng),
            view_emb: store.add_uniform("dec.view_emb", &[views, channels], channels, rng),
            ring_emb: store.add_uniform("dec.ring_emb", &[2 * views + 1, channels], channels, rng),
            cell_emb: store.add_uniform("dec.cell_emb", &[pooled, channels], channels, rng),
            blocks: (0..depth)
                .map(|i| TransformerBlock::new(store, &format!("dec.block{i}"), channels, heads, rng))
                .collect(),
            ln: LayerNorm::new(store, "dec.ln", channels),
            out: Linear::new(store, "dec.out", channels, channels, true, rng),
            views,
            grid_h,
            grid_w,
            pool,
        }
    }

    fn pool_plan<T: Scalar>(&self, pano: &Panorama) -> GatherPlan<T> {
        let (w, s) = (self.grid_w, self.pool);
        let mut b = GatherPlan::builder(pano.height * pano.width);
        let share = T::one() / T::of_usize(s * s);
        for t in 0..pano.tiles.len() {
            for py in 0..self.grid_h / s {
                for px in 0..w / s {
                    for dy in 0..s {
                        for dx in 0..s {
                            let (y, x) = (py * s + dy, t * w + px * s + dx);
                            b.push(y * pano.width + x, share);
                        }
                    }
                    b.end_row();
                }
            }
        }
        b.build()
    }

    /// Decode the grid of view `missing` from `pano` (and optional extra tokens).
    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, missing: usize, pano: &Panorama, extra: Option<Var>) -> Var {
        let cells = self.grid_h * self.grid_w;
        let view = g.gather_rows(p[self.view_emb], &[missing]);
        let view = g.reshape(view, [g.shape(p[self.mask_token])[0]]);
        let token = g.add(p[self.mask_token], view);
        let masks = g.add_row(p[self.mask_pos], token);
        let pooled = g.sparse_gather(pano.feature, Arc::new(self.pool_plan(pano)));
        let per_tile = cells / (self.pool * self.pool);
        let mut ring_idx = Vec::with_capacity(pooled_rows(pano, per_tile));
        let mut cell_idx = Vec::with_capacity(ring_idx.capacity());
        for &o in &pano.offsets {
            for c in 0..per_tile {
                ring_idx.push((o + self.views as isize) as usize);
                cell_idx.push(c);
            }
        }
        let ring = g.gather_rows(p[self.ring_emb], &ring_idx);
        let cell = g.gather_rows(p[self.cell_emb], &cell_idx);
        let ctx = g.add(pooled, ring);
        let ctx = g.add(ctx, cell);
        let mut parts = vec![masks];
        parts.extend(extra);
        parts.push(ctx);
        let mut x = g.concat_rows(&parts);
        for b in &self.blocks {
            x = b.forward(g, p, x);
        }
        let x = g.slice_rows(x, 0, cells);
        let x = self.ln.forward(g, p, x);
        self.out.forward(g, p, x)
    }
}

fn pooled_rows(pano: &Panorama, per_tile: usize) -> usize {
    pano.tiles.len() * per_tile
}
