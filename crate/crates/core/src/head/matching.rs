//! Bipartite matching of ground-truth elements to prediction slots.

use serde::{Deserialize, Serialize};

use super::DecodedMap;
use crate::error::{contract, Result};
use crate::scene::Point;

/// One ground-truth element in normalized coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub class: usize,
    pub points: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub cls: f64,
    pub pts: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { cls: 2.0, pts: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub gt: usize,
    pub slot: usize,
    /// The ground truth is compared in reverse point order.
    pub reversed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<Assignment>,
    pub cost: f64,
}

/// Minimum-cost assignment of every row to a distinct column
/// (`rows ≤ cols`); returns the column of each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian: more rows ({n}) than columns ({m})");
    // Shortest augmenting paths with potentials; index 0 is a sentinel.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    out
}

/// Mean L1 distance between two equal-length point sequences.
pub fn mean_l1(a: &[Point], b: impl Iterator<Item = Point>) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for (p, q) in a.iter().zip(b) {
        s += (p[0] - q[0]).abs() + (p[1] - q[1]).abs();
        n += 2;
    }
    s / n.max(1) as f64
}

/// Point cost and orientation of matching `gt` against `pred`.
pub fn point_cost(pred: &[Point], gt: &[Point]) -> (f64, bool) {
    let fwd = mean_l1(pred, gt.iter().copied());
    let rev = mean_l1(pred, gt.iter().rev().copied());
    if rev < fwd {
        (rev, true)
    } else {
        (fwd, false)
    }
}

/// Pair cost matrix (`gt × slot`) and orientation flags.
pub fn cost_matrix(pred: &DecodedMap, gts: &[GroundTruth], w: CostWeights) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let k = pred.probs.len();
    let mut cost = vec![vec![0.0; k]; gts.len()];
    let mut rev = vec![vec![false; k]; gts.len()];
    for (i, gt) in gts.iter().enumerate() {
        for s in 0..k {
            let (pc, r) = point_cost(&pred.points[s], &gt.points);
            cost[i][s] = -w.cls * pred.probs[s][gt.class] + w.pts * pc;
            rev[i][s] = r;
        }
    }
    (cost, rev)
}

pub fn hungarian_match(pred: &DecodedMap, gts: &[GroundTruth], w: CostWeights) -> Result<MatchResult> {
    let k = pred.probs.len();
    if gts.len() > k {
        return contract(format!("{} ground-truth elements exceed {k} prediction slots", gts.len()));
    }
    for gt in gts {
        if gt.points.len() != pred.points.first().map_or(0, Vec::len) {
            return contract("ground truth and predictions carry different point counts");
        }
    }
    let (cost, rev) = cost_matrix(pred, gts, w);
    let cols = hungarian(&cost);
    let pairs: Vec<Assignment> = cols
        .iter()
        .enumerate()
        .map(|(i, &s)| Assignment { gt: i, slot: s, reversed: rev[i][s] })
        .collect();
    let total = pairs.iter().map(|a| cost[a.gt][a.slot]).sum();
    Ok(MatchResult { pairs, cost: total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_square() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&c);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| c[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn rectangular_and_empty() {
        assert!(hungarian(&[]).is_empty());
        let c = vec![vec![5.0, 1.0, 9.0, 0.5]];
        assert_eq!(hungarian(&c), vec![3]);
    }

    #[test]
    fn reversed_polyline_costs_zero() {
        let a = [[0.0, 0.0], [1.0, 0.0], [2.0, 1.0]];
        let b: Vec<Point> = a.iter().rev().copied().collect();
        assert_eq!(point_cost(&a, &b), (0.0, true));
        assert_eq!(point_cost(&a, &a), (0.0, false));
    }

    #[test]
    fn too_many_ground_truths() {
        let pred = DecodedMap { probs: vec![vec![0.25; 4]], points: vec![vec![[0.0, 0.0]; 2]] };
        let gt = GroundTruth { class: 0, points: vec![[0.0, 0.0]; 2] };
        assert!(hungarian_match(&pred, &[gt.clone(), gt], CostWeights::default()).is_err());
    }
}
