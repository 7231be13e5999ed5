//! Geometric lifting of per-view feature grids onto the BEV plane.
//!
//! Every BEV cell center is projected into each camera; the feature grids of
//! the cameras that see it are sampled bilinearly and averaged. The sampling
//! pattern only depends on the rig and on which views contribute, so it is
//! compiled once per availability pattern into a sparse gather.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::encoder::ViewFeatureSet;
use crate::error::{contract, Result};
use crate::scene::{project_to_view, CameraRig, Range};
use crate::tensor::kernels::bilinear_taps;
use crate::tensor::{GatherPlan, Graph, Var};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BevConfig {
    /// Cells along y (forward).
    pub rows: usize,
    /// Cells along x (right).
    pub cols: usize,
    /// Cell edge, meters.
    pub cell: f64,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self { rows: 80, cols: 40, cell: 0.75 }
    }
}

impl BevConfig {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Ego-frame range spanned by the grid.
    pub fn range(&self) -> Range {
        Range { half_x: self.cols as f64 * self.cell / 2.0, half_y: self.rows as f64 * self.cell / 2.0 }
    }

    /// Ground point at the center of cell `(row, col)`; row 0 is the rear edge.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let r = self.range();
        (-r.half_x + (col as f64 + 0.5) * self.cell, -r.half_y + (row as f64 + 0.5) * self.cell)
    }
}

/// A lifted BEV feature: `rows·cols × C` tape value plus per-cell camera counts.
#[derive(Clone, Debug)]
pub struct BevFeature {
    pub feature: Var,
    pub visibility: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug)]
struct Tap {
    view: usize,
    cells: [usize; 4],
    weights: [f64; 4],
}

/// Precomputed projection of every BEV cell into every camera.
#[derive(Debug)]
pub struct Lifter<T> {
    pub cfg: BevConfig,
    views: usize,
    grid_cells: usize,
    taps: Vec<Vec<Tap>>,
    plans: Mutex<HashMap<u64, (Arc<GatherPlan<T>>, Arc<Vec<u8>>)>>,
}

impl<T: Scalar> Lifter<T> {
    /// `grid_h × grid_w` feature cells cover each `image_h × image_w` image.
    pub fn new(rig: &CameraRig, cfg: &BevConfig, grid_h: usize, grid_w: usize) -> Result<Self> {
        rig.validate()?;
        if cfg.rows == 0 || cfg.cols == 0 || !(cfg.cell > 0.0) {
            return contract("BEV grid must be non-empty with a positive cell size");
        }
        if rig.len() > 64 {
            return contract("at most 64 views are supported");
        }
        let sx = grid_w as f64 / rig.image_w as f64;
        let sy = grid_h as f64 / rig.image_h as f64;
        let mut taps = Vec::with_capacity(cfg.cells());
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                let (x, y) = cfg.cell_center(r, c);
                let cell_taps = (0..rig.len())
                    .filter_map(|v| {
                        let px = project_to_view(rig, v, x, y)?;
                        let t = bilinear_taps(px.u * sx - 0.5, px.v * sy - 0.5, grid_h, grid_w);
                        Some(Tap { view: v, cells: t.cells, weights: t.weights })
                    })
                    .collect();
                taps.push(cell_taps);
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            views: rig.len(),
            grid_cells: grid_h * grid_w,
            taps,
            plans: Mutex::new(HashMap::new()),
        })
    }

    /// Cameras that see cell `index` (row-major), regardless of availability.
    pub fn cell_views(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        self.taps[index].iter().map(|t| t.view)
    }

    fn plan(&self, contributing: u64) -> (Arc<GatherPlan<T>>, Arc<Vec<u8>>) {
        let mut cache = self.plans.lock().expect("lift plan cache poisoned");
        cache
            .entry(contributing)
            .or_insert_with(|| {
                let mut b = GatherPlan::builder(self.views * self.grid_cells);
                let mut vis = Vec::with_capacity(self.taps.len());
                for cell in &self.taps {
                    let used: Vec<&Tap> = cell.iter().filter(|t| contributing >> t.view & 1 == 1).collect();
                    vis.push(used.len() as u8);
                    let share = 1.0 / used.len().max(1) as f64;
                    for t in used {
                        for (&src, &w) in t.cells.iter().zip(&t.weights) {
                            if w != 0.0 {
                                b.push(t.view * self.grid_cells + src, T::of(w * share));
                            }
                        }
                    }
                    b.end_row();
                }
                (Arc::new(b.build()), Arc::new(vis))
            })
            .clone()
    }

    /// Lift `features` onto the BEV grid. Masked placeholders never
    /// contribute; reconstructed views do.
    pub fn lift(&self, g: &mut Graph<T>, features: &ViewFeatureSet) -> Result<BevFeature> {
        if features.len() != self.views || features.grid_h * features.grid_w != self.grid_cells {
            return contract("feature set does not match the lifter's rig or feature grid");
        }
        let contributing = (0..self.views).filter(|&v| features.contributes(v)).fold(0u64, |m, v| m | 1 << v);
        let (plan, vis) = self.plan(contributing);
        let stacked = features.stacked(g);
        let feature = g.sparse_gather(stacked, plan);
        Ok(BevFeature { feature, visibility: vis.as_ref().clone(), rows: self.cfg.rows, cols: self.cfg.cols })
    }
}
