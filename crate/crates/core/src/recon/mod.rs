//! Missing-view feature reconstruction.
//!
//! The default pipeline tiles the available views into a panorama centered on
//! the missing view, samples Gaussian reference points around the panorama
//! center, lets learnable queries attend to the features sampled there (with
//! learned offsets), and decodes the missing grid with a small transformer.
//! [`PvrKind`] selects ablation variants of the same contract.

pub mod gpvr;
pub mod panorama;
pub mod refpoints;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{ViewFeatureSet, ViewStatus};
use crate::error::{contract, Error, Result};
use crate::rng::Rng;
use crate::tensor::{Bound, Graph, ParamStore, Var};
use crate::Scalar;

pub use gpvr::{AttendTrace, DeformableQueries, ViewDecoder};
pub use panorama::{build_panorama, local_tiles, tile_order, Panorama};
pub use refpoints::{sample_reference_points, uniform_reference_points, ReferencePointSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PvrKind {
    /// No reconstruction; dropped views are simply excluded from the lift.
    None,
    /// Mean of all available grids.
    Mean,
    /// Decoder over all available views with a learned mask token; no
    /// deformable sampling.
    Mae,
    /// Deformable queries with reference points on a uniform grid.
    Standard,
    /// Deformable queries over a panorama of the two ring neighbors only.
    Local,
    /// Deformable queries with Gaussian reference points.
    Gaussian,
}

impl PvrKind {
    pub const ALL: [PvrKind; 6] = [Self::None, Self::Mean, Self::Mae, Self::Standard, Self::Local, Self::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Mean => "mean",
            Self::Mae => "mae",
            Self::Standard => "standard",
            Self::Local => "local",
            Self::Gaussian => "gaussian",
        }
    }

    fn deformable(self) -> bool {
        matches!(self, Self::Standard | Self::Local | Self::Gaussian)
    }
}

impl fmt::Display for PvrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PvrKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reconstruction variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub kind: PvrKind,
    /// Reference point spread, feature-grid cells.
    pub sigma: f64,
    pub n_ref: usize,
    pub heads: usize,
    /// Query tokens; `None` means a quarter of the view's grid cells.
    pub queries: Option<usize>,
    pub decoder_depth: usize,
    /// Side of the square average pool that turns panorama tiles into
    /// decoder context tokens.
    pub pool: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { kind: PvrKind::Gaussian, sigma: 3.0, n_ref: 64, heads: 4, queries: None, decoder_depth: 2, pool: 4 }
    }
}

/// Per-missing-view record of one reconstruction.
#[derive(Clone, Debug)]
pub struct ReconTrace {
    pub missing: usize,
    pub tiles: Vec<usize>,
    pub refpoints: Option<ReferencePointSet>,
    pub attend: Option<AttendTrace>,
}

#[derive(Clone, Debug)]
pub struct Reconstructor {
    pub cfg: ReconConfig,
    queries: Option<DeformableQueries>,
    decoder: Option<ViewDecoder>,
}

impl Reconstructor {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &ReconConfig,
        views: usize,
        grid_h: usize,
        grid_w: usize,
        channels: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(cfg.sigma >= 0.0) {
            return contract(format!("σ must be non-negative, got {}", cfg.sigma));
        }
        if cfg.n_ref == 0 || cfg.heads == 0 || channels % cfg.heads != 0 {
            return contract("reconstruction needs n_ref ≥ 1 and heads dividing the channel count");
        }
        if cfg.pool == 0 || grid_h % cfg.pool != 0 || grid_w % cfg.pool != 0 {
            return contract(format!("pool {} does not divide the {grid_h}×{grid_w} feature grid", cfg.pool));
        }
        let n_q = cfg.queries.unwrap_or((grid_h * grid_w / 4).max(1));
        let queries = cfg
            .kind
            .deformable()
            .then(|| DeformableQueries::new(store, channels, cfg.heads, cfg.n_ref, n_q, rng));
        let decoder = matches!(cfg.kind, PvrKind::Mae | PvrKind::Standard | PvrKind::Local | PvrKind::Gaussian).then(|| {
            ViewDecoder::new(store, views, grid_h, grid_w, channels, cfg.heads, cfg.decoder_depth, cfg.pool, rng)
        });
        Ok(Self { cfg: cfg.clone(), queries, decoder })
    }

    /// Replace every masked grid by its reconstruction. Each missing view is
    /// rebuilt from the views available on entry only.
    pub fn reconstruct<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        features: &ViewFeatureSet,
        rng: &mut Rng,
    ) -> Result<(ViewFeatureSet, Vec<ReconTrace>)> {
        let missing = features.masked();
        if missing.is_empty() || self.cfg.kind == PvrKind::None {
            return Ok((features.clone(), Vec::new()));
        }
        let available = features.available();
        if available.is_empty() {
            return contract("every view is missing");
        }
        let mut out = features.clone();
        let mut traces = Vec::with_capacity(missing.len());
        for &m in &missing {
            let (grid, trace) = self.reconstruct_one(g, p, features, m, rng)?;
            out.grids[m] = grid;
            out.status[m] = ViewStatus::Reconstructed;
            traces.push(trace);
        }
        Ok((out, traces))
    }

    fn reconstruct_one<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        features: &ViewFeatureSet,
        m: usize,
        rng: &mut Rng,
    ) -> Result<(Var, ReconTrace)> {
        let cfg = &self.cfg;
        let mut trace = ReconTrace { missing: m, tiles: Vec::new(), refpoints: None, attend: None };
        if cfg.kind == PvrKind::Mean {
            let avail = features.available();
            trace.tiles = avail.clone();
            let parts: Vec<Var> = avail.iter().map(|&v| features.grids[v]).collect();
            let mut acc = parts[0];
            for &v in &parts[1..] {
                acc = g.add(acc, v);
            }
            let grid = if parts.len() == 1 { acc } else { g.scale(acc, T::one() / T::of_usize(parts.len())) };
            return Ok((grid, trace));
        }
        let tiles = if cfg.kind == PvrKind::Local {
            local_tiles(&features.status, m)?
        } else {
            tile_order(&features.status, m)?
        };
        trace.tiles = tiles.clone();
        let pano = panorama::build_from_tiles(g, features, m, tiles);
        let decoder = self.decoder.as_ref().expect("decoder exists for learned variants");
        let extra = match &self.queries {
            Some(q) => {
                let n_a = pano.tiles.len();
                let refs = match cfg.kind {
                    PvrKind::Standard => uniform_reference_points(n_a, features.grid_w, features.grid_h, cfg.n_ref)?,
                    _ => sample_reference_points(n_a, features.grid_w, features.grid_h, cfg.sigma, cfg.n_ref, rng)?,
                };
                let att = q.attend(g, p, &pano, &refs.points);
                let tokens = att.tokens;
                trace.refpoints = Some(refs);
                trace.attend = Some(att);
                Some(tokens)
            }
            None => None,
        };
        let grid = decoder.decode(g, p, m, &pano, extra);
        Ok((grid, trace))
    }
}

/// Mean squared error between `reconstructed` and `target` grids over the
/// `missing` views only.
pub fn rec_loss<T: Scalar>(g: &mut Graph<T>, target: &ViewFeatureSet, reconstructed: &ViewFeatureSet, missing: &[usize]) -> Result<Var> {
    if missing.is_empty() {
        return contract("reconstruction loss needs at least one missing view");
    }
    if target.len() != reconstructed.len() || missing.iter().any(|&m| m >= target.len()) {
        return contract("reconstruction loss over mismatched view sets");
    }
    let a: Vec<Var> = missing.iter().map(|&m| reconstructed.grids[m]).collect();
    let b: Vec<Var> = missing.iter().map(|&m| target.grids[m]).collect();
    let (a, b) = if a.len() == 1 { (a[0], b[0]) } else { (g.concat_rows(&a), g.concat_rows(&b)) };
    if g.shape(a) != g.shape(b) {
        return contract("reconstruction loss over grids of different shapes");
    }
    Ok(g.mse(a, b))
}
