//! Oracle comparisons shared by the integration tests and the acceptance
//! suite. Each returns enough detail to print a one-line verdict.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vecmap::eval::{average_precision, chamfer_distance, ScoredCandidate};
use vecmap::head::{hungarian, hungarian_match, CostWeights, DecodedMap, GroundTruth};

use super::oracles::{brute_chamfer, brute_force_assignment, pair_cost};

#[derive(Clone, Debug)]
pub struct OracleTally {
    pub instances: usize,
    pub mismatches: usize,
    /// Largest absolute disagreement seen.
    pub max_diff: f64,
}

impl OracleTally {
    fn new() -> Self {
        Self { instances: 0, mismatches: 0, max_diff: 0.0 }
    }
}

fn random_points(r: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect()
}

/// Odd instances exercise the raw assignment solver on real-valued costs;
/// even ones run the full matcher on random predictions and ground truth and
/// compare against the brute-force optimum of an independently built cost
/// matrix. Optima must agree exactly.
pub fn hungarian_vs_brute_force(instances: usize, seed: u64) -> OracleTally {
    let mut tally = OracleTally::new();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..instances {
        let n_gt = r.random_range(0..=6);
        let k = r.random_range(n_gt.max(1)..=8);
        let (got, want) = if i % 2 == 1 {
            let cost: Vec<Vec<f64>> = (0..n_gt).map(|_| (0..k).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
            let cols = hungarian(&cost);
            let got = cols.iter().enumerate().fold(0.0, |s, (row, &j)| s + cost[row][j]);
            let distinct = {
                let mut c = cols.clone();
                c.sort_unstable();
                c.dedup();
                c.len() == cols.len()
            };
            (if distinct { got } else { f64::NAN }, brute_force_assignment(&cost))
        } else {
            let p = 4;
            let probs: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let raw: Vec<f64> = (0..4).map(|_| r.random_range(0.01..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / s).collect()
                })
                .collect();
            let points: Vec<Vec<[f64; 2]>> = (0..k).map(|_| random_points(&mut r, p)).collect();
            let gts: Vec<GroundTruth> =
                (0..n_gt).map(|_| GroundTruth { class: r.random_range(0..3), points: random_points(&mut r, p) }).collect();
            let w = CostWeights::default();
            let pred = DecodedMap { probs: probs.clone(), points: points.clone() };
            let m = hungarian_match(&pred, &gts, w).unwrap();
            let cost: Vec<Vec<f64>> = gts
                .iter()
                .map(|gt| (0..k).map(|s| pair_cost(probs[s][gt.class], &points[s], &gt.points, w.cls, w.pts)).collect())
                .collect();
            let got = m.pairs.iter().fold(0.0, |acc, a| acc + cost[a.gt][a.slot]);
            (got, brute_force_assignment(&cost))
        };
        tally.instances += 1;
        let diff = (got - want).abs();
        if got != want {
            tally.mismatches += 1;
        }
        tally.max_diff = tally.max_diff.max(if diff.is_nan() { f64::INFINITY } else { diff });
    }
    tally
}

/// Random 2–6 vertex polylines in a 20 m box, resampled to 100 points.
pub fn chamfer_vs_brute_force(instances: usize, seed: u64) -> OracleTally {
    let mut tally = OracleTally::new();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let line = |r: &mut ChaCha8Rng| -> Vec<[f64; 2]> {
        let n = r.random_range(2..=6);
        (0..n).map(|_| [r.random_range(-10.0..10.0), r.random_range(-10.0..10.0)]).collect()
    };
    for _ in 0..instances {
        let (a, b) = (line(&mut r), line(&mut r));
        let got = chamfer_distance(&a, &b, 100).unwrap();
        let want = brute_chamfer(&a, &b, 100);
        let diff = (got - want).abs();
        tally.instances += 1;
        if !(diff <= 1e-9) {
            tally.mismatches += 1;
        }
        tally.max_diff = tally.max_diff.max(diff);
    }
    tally
}

fn cand(score: f64, d: &[(usize, f64)]) -> ScoredCandidate {
    ScoredCandidate { score, distances: d.to_vec() }
}

/// Hand-built AP fixtures with hand-enumerated PR points. Returns each
/// fixture's name and whether it matched exactly.
pub fn ap_fixtures() -> Vec<(&'static str, bool)> {
    let mut out = Vec::new();

    // One prediction 0.7 m from the only ground truth.
    let single = [cand(0.9, &[(0, 0.7)])];
    let aps: Vec<f64> = [0.5, 1.0, 1.5].iter().map(|&t| average_precision(&single, 1, t).unwrap().ap).collect();
    out.push(("single pair at 0.7 m gives AP 0, 1, 1", aps == [0.0, 1.0, 1.0]));

    // Predictions identical to the ground truth with confidence 1.
    let perfect = [cand(1.0, &[(0, 0.0), (1, 9.0)]), cand(1.0, &[(0, 9.0), (1, 0.0)])];
    let ok = [0.5, 1.0, 1.5].iter().all(|&t| average_precision(&perfect, 2, t).unwrap().ap == 1.0);
    out.push(("perfect predictions give AP 1", ok));

    // Two copies of a perfect prediction: the second is a false positive.
    let dup = [cand(1.0, &[(0, 0.0)]), cand(1.0, &[(0, 0.0)])];
    let c = average_precision(&dup, 1, 0.5).unwrap();
    out.push(("duplicate copy is a false positive", c.recall == [1.0, 1.0] && c.precision == [1.0, 0.5] && c.ap == 1.0));

    // Three ground truths, five candidates in score order.
    let five = [
        cand(0.9, &[(0, 0.2), (1, 3.0), (2, 3.0)]),
        cand(0.8, &[(0, 0.3), (1, 2.0), (2, 2.5)]),
        cand(0.7, &[(0, 3.0), (1, 3.0), (2, 0.9)]),
        cand(0.6, &[(0, 3.0), (1, 1.2), (2, 3.0)]),
        cand(0.5, &[(1, 0.4)]),
    ];
    let third = 1.0 / 3.0;
    let two_thirds = 2.0 / 3.0;
    let cases: [(f64, [f64; 5], [f64; 5], f64); 3] = [
        (0.5, [third, third, third, third, two_thirds], [1.0, 0.5, 1.0 / 3.0, 0.25, 2.0 / 5.0], 7.0 / 15.0),
        (1.0, [third, third, two_thirds, two_thirds, 1.0], [1.0, 0.5, 2.0 / 3.0, 0.5, 3.0 / 5.0], 34.0 / 45.0),
        (1.5, [third, third, two_thirds, 1.0, 1.0], [1.0, 0.5, 2.0 / 3.0, 0.75, 3.0 / 5.0], 5.0 / 6.0),
    ];
    for (tau, recall, precision, ap) in cases {
        let c = average_precision(&five, 3, tau).unwrap();
        let ok = c.recall == recall && c.precision == precision && (c.ap - ap).abs() <= 1e-15;
        out.push((
            match tau {
                t if t == 0.5 => "five-candidate fixture at 0.5 m",
                t if t == 1.0 => "five-candidate fixture at 1.0 m",
                _ => "five-candidate fixture at 1.5 m",
            },
            ok,
        ));
    }

    // A false positive ranked above the only true positive.
    let fp_first = [cand(0.9, &[(0, 5.0), (1, 5.0)]), cand(0.8, &[(0, 0.1), (1, 4.0)])];
    out.push(("false positive ranked first halves precision", average_precision(&fp_first, 2, 1.0).unwrap().ap == 0.25));
    out
}
