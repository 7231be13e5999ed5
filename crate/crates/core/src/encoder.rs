//! Per-view patch transformer and random view masking.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::rng::Rng;
use crate::scene::RenderedViewSet;
use crate::tensor::nn::{LayerNorm, Linear, TransformerBlock};
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub patch: usize,
    pub channels: usize,
    pub depth: usize,
    pub heads: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { patch: 8, channels: 32, depth: 1, heads: 4 }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub grid_h: usize,
    pub grid_w: usize,
    embed: Linear,
    pos: ParamId,
    blocks: Vec<TransformerBlock>,
    ln_out: LayerNorm,
}

impl Encoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &EncoderConfig,
        image_h: usize,
        image_w: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let p = cfg.patch;
        if p == 0 || image_h % p != 0 || image_w % p != 0 {
            return contract(format!("{image_h}×{image_w} images do not split into {p}-pixel patches"));
        }
        if cfg.heads == 0 || cfg.channels % cfg.heads != 0 {
            return contract(format!("{} channels do not split over {} heads", cfg.channels, cfg.heads));
        }
        let (grid_h, grid_w) = (image_h / p, image_w / p);
        let embed = Linear::new(store, "enc.embed", p * p, cfg.channels, true, rng);
        let pos = store.add_uniform("enc.pos", &[grid_h * grid_w, cfg.channels], cfg.channels, rng);
        let blocks = (0..cfg.depth)
            .map(|i| TransformerBlock::new(store, &format!("enc.block{i}"), cfg.channels, cfg.heads, rng))
            .collect();
        let ln_out = LayerNorm::new(store, "enc.ln_out", cfg.channels);
        Ok(Self { cfg: cfg.clone(), grid_h, grid_w, embed, pos, blocks, ln_out })
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Encode every view independently into a `grid_h·grid_w × C` grid.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, images: &RenderedViewSet) -> Result<ViewFeatureSet> {
        let ps = self.cfg.patch;
        if images.height != self.grid_h * ps || images.width != self.grid_w * ps {
            return contract(format!(
                "encoder expects {}×{} images, got {}×{}",
                self.grid_h * ps,
                self.grid_w * ps,
                images.height,
                images.width
            ));
        }
        let n = images.views;
        let cells = self.cells();
        let mut patches = Vec::with_capacity(n * cells * ps * ps);
        for v in 0..n {
            let img = images.view(v);
            for gy in 0..self.grid_h {
                for gx in 0..self.grid_w {
                    for py in 0..ps {
                        let row = (gy * ps + py) * images.width + gx * ps;
                        patches.extend(img[row..row + ps].iter().map(|&x| T::of(x as f64)));
                    }
                }
            }
        }
        let x = g.constant(Tensor::new([n * cells, ps * ps], patches));
        let x = self.embed.forward(g, p, x);
        let pos = g.concat_rows(&vec![p[self.pos]; n]);
        let mut x = g.add(x, pos);
        for b in &self.blocks {
            x = b.forward_segmented(g, p, x, cells);
        }
        let x = self.ln_out.forward(g, p, x);
        let grids = (0..n).map(|v| g.slice_rows(x, v * cells, cells)).collect();
        Ok(ViewFeatureSet {
            grids,
            status: vec![ViewStatus::Available; n],
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            channels: self.cfg.channels,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewStatus {
    Available,
    /// Dropped; the grid is a neighbor-mean placeholder.
    Masked,
    /// Dropped, then replaced by a reconstruction.
    Reconstructed,
}

/// Per-view feature grids (`grid_h·grid_w × C` tape values) with availability.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewFeatureSet {
    pub grids: Vec<Var>,
    pub status: Vec<ViewStatus>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
}

impl ViewFeatureSet {
    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn available(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.status[i] == ViewStatus::Available).collect()
    }

    pub fn masked(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.status[i] == ViewStatus::Masked).collect()
    }

    /// Views whose grid should enter the BEV average.
    pub fn contributes(&self, i: usize) -> bool {
        self.status[i] != ViewStatus::Masked
    }

    /// All grids stacked into one `N·grid_h·grid_w × C` value.
    pub fn stacked<T: Scalar>(&self, g: &mut Graph<T>) -> Var {
        g.concat_rows(&self.grids)
    }
}

/// Nearest available views on each side of `view` around the ring: first the
/// decreasing-index side, then the increasing one. `None` if nothing is
/// available.
pub fn ring_neighbors(status: &[ViewStatus], view: usize) -> Option<(usize, usize)> {
    let n = status.len();
    let ok = |i: usize| status[i] == ViewStatus::Available;
    let left = (1..n).map(|d| (view + n - d) % n).find(|&i| ok(i))?;
    let right = (1..n).map(|d| (view + d) % n).find(|&i| ok(i))?;
    Some((left, right))
}

/// Drop `mask` views: each gets the mean of its nearest available ring
/// neighbors (a single neighbor when both searches land on the same view).
pub fn apply_view_mask<T: Scalar>(g: &mut Graph<T>, features: &ViewFeatureSet, mask: &[usize]) -> Result<ViewFeatureSet> {
    let n = features.len();
    let mut status = features.status.clone();
    for &m in mask {
        if m >= n {
            return contract(format!("mask index {m} out of range for {n} views"));
        }
        status[m] = ViewStatus::Masked;
    }
    if !status.contains(&ViewStatus::Available) {
        return contract("mask covers every view");
    }
    let mut out = features.clone();
    for &m in mask {
        let (l, r) = ring_neighbors(&status, m).expect("an available view exists");
        out.grids[m] = if l == r {
            features.grids[l]
        } else {
            let s = g.add(features.grids[l], features.grids[r]);
            g.scale(s, T::of(0.5))
        };
    }
    out.status = status;
    Ok(out)
}

/// How many views a training sample drops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum MaskMode {
    /// Never drop (complete-view training).
    Complete,
    /// Exactly `count` views.
    Exact { count: usize },
    /// Uniform count in `min..=max`, capped at `N − 1`.
    Range { min: usize, max: usize },
}

impl Default for MaskMode {
    fn default() -> Self {
        Self::Exact { count: 1 }
    }
}

impl MaskMode {
    pub fn validate(&self, views: usize) -> Result<()> {
        let (lo, hi) = match *self {
            Self::Complete => return Ok(()),
            Self::Exact { count } => (count, count),
            Self::Range { min, max } => (min, max),
        };
        if lo > hi || hi >= views {
            return contract(format!("mask count range {lo}..={hi} invalid for {views} views"));
        }
        Ok(())
    }

    /// Sorted view indices, uniform over subsets of the drawn size.
    pub fn draw(&self, views: usize, rng: &mut Rng) -> Vec<usize> {
        let count = match *self {
            Self::Complete => 0,
            Self::Exact { count } => count,
            Self::Range { min, max } => rng.random_range(min..=max),
        }
        .min(views.saturating_sub(1));
        let mut v = index::sample(rng, views, count).into_vec();
        v.sort_unstable();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn leaves(g: &mut Graph<f64>, vals: &[f64]) -> ViewFeatureSet {
        let grids = vals.iter().map(|&v| g.leaf(Tensor::full([4, 2], v), true)).collect();
        ViewFeatureSet { grids, status: vec![ViewStatus::Available; vals.len()], grid_h: 2, grid_w: 2, channels: 2 }
    }

    #[test]
    fn empty_mask_is_identity() {
        let mut g = Graph::new();
        let f = leaves(&mut g, &[1.0, 2.0, 3.0]);
        assert_eq!(apply_view_mask(&mut g, &f, &[]).unwrap(), f);
    }

    #[test]
    fn masked_slot_is_neighbor_mean() {
        let mut g = Graph::new();
        let f = leaves(&mut g, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = apply_view_mask(&mut g, &f, &[1]).unwrap();
        assert!(g.value(m.grids[1]).data().iter().all(|&x| x == 2.0));
        assert_eq!(m.masked(), vec![1]);
        let m = apply_view_mask(&mut g, &f, &[0]).unwrap();
        assert!(g.value(m.grids[0]).data().iter().all(|&x| x == 4.0));
    }

    #[test]
    fn two_views_left_means_single_neighbor() {
        let mut g = Graph::new();
        let f = leaves(&mut g, &[1.0, 2.0, 3.0]);
        let m = apply_view_mask(&mut g, &f, &[0, 1]).unwrap();
        assert_eq!(m.grids[0], f.grids[2]);
        assert_eq!(m.grids[1], f.grids[2]);
    }

    #[test]
    fn full_mask_is_rejected() {
        let mut g = Graph::new();
        let f = leaves(&mut g, &[1.0, 2.0]);
        assert!(apply_view_mask(&mut g, &f, &[0, 1]).is_err());
        assert!(apply_view_mask(&mut g, &f, &[7]).is_err());
    }

    #[test]
    fn indivisible_patch_is_contract_error() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::seed_from_u64(0);
        let cfg = EncoderConfig { patch: 7, ..Default::default() };
        assert!(Encoder::new(&mut store, &cfg, 64, 64, &mut rng).is_err());
    }

    #[test]
    fn mask_draw_sizes() {
        let mut rng = Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(MaskMode::Exact { count: 1 }.draw(6, &mut rng).len(), 1);
            let k = MaskMode::Range { min: 1, max: 5 }.draw(6, &mut rng).len();
            assert!((1..=5).contains(&k));
            assert!(MaskMode::Complete.draw(6, &mut rng).is_empty());
        }
        assert!(MaskMode::Exact { count: 6 }.validate(6).is_err());
    }
}
