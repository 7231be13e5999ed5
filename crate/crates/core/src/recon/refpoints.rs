//! Reference points in panorama grid coordinates (`x ∈ [0, width]`,
//! `y ∈ [0, height]`, cell `k` spanning `[k, k+1)`).

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{contract, Result};
use crate::rng::Rng;
use crate::scene::Point;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePointSet {
    pub points: Vec<Point>,
    pub sigma: f64,
}

/// `p_x ~ N(n_a·w_f/2, σ²)`, `p_y ~ U(0, h_f)`.
pub fn sample_reference_points(
    n_a: usize,
    w_f: usize,
    h_f: usize,
    sigma: f64,
    n_ref: usize,
    rng: &mut Rng,
) -> Result<ReferencePointSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return contract(format!("reference point σ must be a finite non-negative number, got {sigma}"));
    }
    if n_ref == 0 {
        return contract("at least one reference point is required");
    }
    let mean = (n_a * w_f) as f64 / 2.0;
    let normal = Normal::new(mean, sigma).expect("σ validated");
    let points = (0..n_ref)
        .map(|_| {
            let x = normal.sample(rng);
            let y = rng.random::<f64>() * h_f as f64;
            [x, y]
        })
        .collect();
    Ok(ReferencePointSet { points, sigma })
}

/// `gx × gy = n_ref` points at the centers of an equal partition of the
/// panorama; `gy` is the divisor of `n_ref` closest to square cells.
pub fn uniform_reference_points(n_a: usize, w_f: usize, h_f: usize, n_ref: usize) -> Result<ReferencePointSet> {
    if n_ref == 0 {
        return contract("at least one reference point is required");
    }
    let width = (n_a * w_f) as f64;
    let height = h_f as f64;
    let ideal = (n_ref as f64 * height / width).sqrt();
    let gy = (1..=n_ref)
        .filter(|d| n_ref % d == 0)
        .min_by(|&a, &b| (a as f64 - ideal).abs().total_cmp(&(b as f64 - ideal).abs()))
        .expect("1 divides n_ref");
    let gx = n_ref / gy;
    let mut points = Vec::with_capacity(n_ref);
    for j in 0..gy {
        for i in 0..gx {
            points.push([(i as f64 + 0.5) * width / gx as f64, (j as f64 + 0.5) * height / gy as f64]);
        }
    }
    Ok(ReferencePointSet { points, sigma: f64::NAN })
}
