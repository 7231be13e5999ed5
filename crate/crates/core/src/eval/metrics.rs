//! Chamfer distance and average precision.

use crate::error::{contract, Result};
use crate::scene::polyline::{dist, resample};
use crate::scene::Point;

/// Symmetric Chamfer distance: both polylines are resampled to `n` points at
/// equal arclength and the two directed mean nearest-neighbor distances are
/// averaged.
pub fn chamfer_distance(a: &[Point], b: &[Point], n: usize) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return contract("Chamfer distance needs polylines of at least two points");
    }
    if n < 2 {
        return contract("Chamfer resampling needs at least two points");
    }
    Ok(chamfer_resampled(&resample(a, n), &resample(b, n)))
}

/// Chamfer distance of two already resampled point sets.
pub fn chamfer_resampled(a: &[Point], b: &[Point]) -> f64 {
    let directed = |x: &[Point], y: &[Point]| {
        x.iter()
            .map(|&p| y.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    0.5 * (directed(a, b) + directed(b, a))
}

/// Precision/recall curve and its all-points interpolated area.
#[derive(Clone, Debug, PartialEq)]
pub struct ApCurve {
    pub ap: f64,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

/// One scored prediction with its distances to every ground truth of the
/// same class in the same sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCandidate {
    pub score: f64,
    /// Ground-truth ids are indices into the sample-independent GT list.
    pub distances: Vec<(usize, f64)>,
}

/// Greedy confidence-ordered matching; a candidate is a true positive when
/// its nearest still-unmatched ground truth lies closer than `tau`.
/// Candidates must already be sorted by descending score. `None` without
/// ground truth.
pub fn average_precision(candidates: &[ScoredCandidate], num_gt: usize, tau: f64) -> Option<ApCurve> {
    if num_gt == 0 {
        return None;
    }
    let mut matched = vec![false; num_gt];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(candidates.len());
    let mut precision = Vec::with_capacity(candidates.len());
    for c in candidates {
        let best = c
            .distances
            .iter()
            .filter(|(gt, _)| !matched[*gt])
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        match best {
            Some(&(gt, d)) if d < tau => {
                matched[gt] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    Some(ApCurve { ap: interpolated_area(&recall, &precision), recall, precision })
}

/// Area under the precision envelope (precision at recall `r` replaced by
/// the maximum precision at any recall `≥ r`).
pub fn interpolated_area(recall: &[f64], precision: &[f64]) -> f64 {
    let mut env: Vec<f64> = precision.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut area = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&env) {
        area += (r - prev) * p;
        prev = *r;
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_segments() {
        let a = [[0.0, 0.0], [0.0, 10.0]];
        let b = [[0.3, 0.0], [0.3, 10.0]];
        assert!((chamfer_distance(&a, &b, 100).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(chamfer_distance(&a, &a, 100).unwrap(), 0.0);
        assert!(chamfer_distance(&a[..1], &b, 100).is_err());
    }

    #[test]
    fn single_pair_at_seven_tenths() {
        let c = vec![ScoredCandidate { score: 0.9, distances: vec![(0, 0.7)] }];
        let aps: Vec<f64> = [0.5, 1.0, 1.5].iter().map(|&t| average_precision(&c, 1, t).unwrap().ap).collect();
        assert_eq!(aps, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn duplicate_is_false_positive() {
        let c = vec![
            ScoredCandidate { score: 1.0, distances: vec![(0, 0.0)] },
            ScoredCandidate { score: 1.0, distances: vec![(0, 0.0)] },
        ];
        let r = average_precision(&c, 1, 0.5).unwrap();
        assert_eq!(r.precision, vec![1.0, 0.5]);
        assert_eq!(r.recall, vec![1.0, 1.0]);
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn no_ground_truth_is_excluded() {
        assert!(average_precision(&[], 0, 1.0).is_none());
        assert_eq!(average_precision(&[], 2, 1.0).unwrap().ap, 0.0);
    }

    #[test]
    fn fp_then_tp() {
        let c = vec![
            ScoredCandidate { score: 0.9, distances: vec![(0, 5.0), (1, 5.0)] },
            ScoredCandidate { score: 0.8, distances: vec![(0, 0.1), (1, 4.0)] },
        ];
        // PR points: (0, 0), (0.5, 0.5) → area 0.5 · 0.5.
        assert_eq!(average_precision(&c, 2, 1.0).unwrap().ap, 0.25);
    }
}
