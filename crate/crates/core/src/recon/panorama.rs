//! Panoramic tiling of the available views around a missing one.

use crate::encoder::{ViewFeatureSet, ViewStatus};
use crate::error::{contract, Result};
use crate::tensor::{Graph, Var};
use crate::Scalar;

/// Horizontal concatenation of view grids, `height × width × C` stored as
/// `height·width` rows.
#[derive(Clone, Debug)]
pub struct Panorama {
    pub tiles: Vec<usize>,
    /// Signed ring offset of each tile from the missing view (left negative).
    pub offsets: Vec<isize>,
    pub feature: Var,
    pub height: usize,
    pub width: usize,
}

fn signed_offset(n: usize, missing: usize, v: usize) -> isize {
    let left = (missing + n - v) % n;
    let right = (v + n - missing) % n;
    if left < right {
        -(left as isize)
    } else {
        right as isize
    }
}

/// Available views ordered outward from the missing one: left side by
/// decreasing ring distance, then right side by increasing distance. Views
/// equidistant on both sides go right.
pub fn tile_order(status: &[ViewStatus], missing: usize) -> Result<Vec<usize>> {
    let n = status.len();
    if missing >= n {
        return contract(format!("missing view {missing} out of range for {n} views"));
    }
    let avail: Vec<usize> = (0..n).filter(|&v| v != missing && status[v] == ViewStatus::Available).collect();
    if avail.is_empty() {
        return contract("no available view to build a panorama from");
    }
    let mut left: Vec<(isize, usize)> = avail.iter().map(|&v| (signed_offset(n, missing, v), v)).filter(|p| p.0 < 0).collect();
    let mut right: Vec<(isize, usize)> = avail.iter().map(|&v| (signed_offset(n, missing, v), v)).filter(|p| p.0 > 0).collect();
    left.sort();
    right.sort();
    Ok(left.into_iter().chain(right).map(|p| p.1).collect())
}

/// Immediate ring neighbors of `missing` that are available; when both are
/// gone, the nearest available view on each side instead.
pub fn local_tiles(status: &[ViewStatus], missing: usize) -> Result<Vec<usize>> {
    let n = status.len();
    if missing >= n {
        return contract(format!("missing view {missing} out of range for {n} views"));
    }
    let ok = |v: usize| v != missing && status[v] == ViewStatus::Available;
    let l = (missing + n - 1) % n;
    let r = (missing + 1) % n;
    let mut tiles: Vec<usize> = [l, r].into_iter().filter(|&v| ok(v)).collect();
    tiles.dedup();
    if tiles.is_empty() {
        let (l, r) = crate::encoder::ring_neighbors(status, missing)
            .ok_or_else(|| crate::Error::Contract("no available view to build a panorama from".into()))?;
        tiles = if l == r { vec![l] } else { vec![l, r] };
    }
    Ok(tiles)
}

/// Tile the given views (in order) into a panorama.
pub fn build_from_tiles<T: Scalar>(g: &mut Graph<T>, features: &ViewFeatureSet, missing: usize, tiles: Vec<usize>) -> Panorama {
    let (h, w) = (features.grid_h, features.grid_w);
    let cells = h * w;
    let width = tiles.len() * w;
    let stacked = features.stacked(g);
    let mut index = Vec::with_capacity(h * width);
    for y in 0..h {
        for &v in &tiles {
            index.extend((0..w).map(|x| v * cells + y * w + x));
        }
    }
    let feature = g.gather_rows(stacked, &index);
    let offsets = tiles.iter().map(|&v| signed_offset(features.len(), missing, v)).collect();
    Panorama { tiles, offsets, feature, height: h, width }
}

pub fn build_panorama<T: Scalar>(g: &mut Graph<T>, features: &ViewFeatureSet, missing: usize) -> Result<Panorama> {
    let tiles = tile_order(&features.status, missing)?;
    Ok(build_from_tiles(g, features, missing, tiles))
}
