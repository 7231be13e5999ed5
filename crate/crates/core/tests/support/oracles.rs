//! Independent reference implementations used as test oracles.

use std::f64::consts::PI;

use vecmap::scene::{Camera, CameraRig};

/// Minimum total cost over every injective row → column assignment, each
/// candidate summed in row order.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], pick: &mut Vec<usize>, used: &mut Vec<bool>, best: &mut f64) {
        if pick.len() == cost.len() {
            let total = pick.iter().enumerate().fold(0.0, |s, (i, &j)| s + cost[i][j]);
            *best = best.min(total);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                pick.push(j);
                go(cost, pick, used, best);
                pick.pop();
                used[j] = false;
            }
        }
    }
    if cost.is_empty() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    go(cost, &mut Vec::new(), &mut vec![false; cost[0].len()], &mut best);
    best
}

/// Pair cost of the set-prediction matcher written out directly:
/// `−w_cls·p(class) + w_pts·min(forward, reversed mean L1)`.
pub fn pair_cost(prob: f64, pred: &[[f64; 2]], gt: &[[f64; 2]], w_cls: f64, w_pts: f64) -> f64 {
    let n = pred.len();
    let mut fwd = 0.0;
    let mut rev = 0.0;
    for i in 0..n {
        let (f, r) = (gt[i], gt[n - 1 - i]);
        fwd += (pred[i][0] - f[0]).abs() + (pred[i][1] - f[1]).abs();
        rev += (pred[i][0] - r[0]).abs() + (pred[i][1] - r[1]).abs();
    }
    -w_cls * prob + w_pts * fwd.min(rev) / (2 * n) as f64
}

/// `n` points at equal arclength along `line`, walking segment by segment.
pub fn resample_walk(line: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    let seg: Vec<f64> = line.windows(2).map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt()).collect();
    let total: f64 = seg.iter().sum();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut target = total * k as f64 / (n - 1) as f64;
        let mut i = 0;
        while i + 1 < seg.len() && target > seg[i] {
            target -= seg[i];
            i += 1;
        }
        let t = if seg[i] > 0.0 { (target / seg[i]).min(1.0) } else { 0.0 };
        let (a, b) = (line[i], line[i + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

/// Symmetric Chamfer distance as a plain double loop over resampled points.
pub fn brute_chamfer(a: &[[f64; 2]], b: &[[f64; 2]], n: usize) -> f64 {
    let (a, b) = (resample_walk(a, n), resample_walk(b, n));
    let mut ab = 0.0;
    for p in &a {
        let mut best = f64::INFINITY;
        for q in &b {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if d < best {
                best = d;
            }
        }
        ab += best;
    }
    let mut ba = 0.0;
    for q in &b {
        let mut best = f64::INFINITY;
        for p in &a {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if d < best {
                best = d;
            }
        }
        ba += best;
    }
    (ab / a.len() as f64 + ba / b.len() as f64) / 2.0
}

/// Whether ground point `(x, y)` falls inside `cam`'s image, from bearing and
/// range alone: the horizontal angle off the optical axis must lie inside the
/// field of view, and the depth along the axis must put the point between
/// the top and bottom image rows.
pub fn camera_sees(cam: &Camera, image_h: usize, image_w: usize, x: f64, y: f64) -> bool {
    let bearing = x.atan2(y);
    let mut rel = bearing - cam.yaw;
    while rel > PI {
        rel -= 2.0 * PI;
    }
    while rel <= -PI {
        rel += 2.0 * PI;
    }
    if rel.abs() >= PI / 2.0 {
        return false;
    }
    let left = -(cam.cx / cam.fx).atan();
    let right = ((image_w as f64 - cam.cx) / cam.fx).atan();
    if rel < left || rel >= right {
        return false;
    }
    let depth = x.hypot(y) * rel.cos();
    let row = cam.cy + cam.fy * cam.height / depth;
    row >= 0.0 && row < image_h as f64
}

/// Cameras of `rig` that see `(x, y)`.
pub fn fov_members(rig: &CameraRig, x: f64, y: f64) -> Vec<usize> {
    (0..rig.cameras.len()).filter(|&v| camera_sees(&rig.cameras[v], rig.image_h, rig.image_w, x, y)).collect()
}

/// Nearest available view on each side of `view` by walking the ring.
pub fn ring_walk(available: &[bool], view: usize) -> (Option<usize>, Option<usize>) {
    let n = available.len();
    let left = (1..n).map(|d| (view + n - d) % n).find(|&v| available[v]);
    let right = (1..n).map(|d| (view + d) % n).find(|&v| available[v]);
    (left, right)
}

/// Sample statistics of reference-point draws.
#[derive(Clone, Debug)]
pub struct RefPointStats {
    pub draws: usize,
    pub mean_x: f64,
    pub expected_mean_x: f64,
    pub std_err: f64,
    pub std_x: f64,
    pub sigma: f64,
    /// Pearson chi-square statistic of `p_y` over equal-width bins.
    pub chi_square: f64,
    pub critical: f64,
    pub bins: usize,
    /// σ = 0 puts every `p_x` exactly on the center.
    pub degenerate_exact: bool,
}

impl RefPointStats {
    pub fn mean_ok(&self) -> bool {
        (self.mean_x - self.expected_mean_x).abs() <= 3.0 * self.std_err
    }

    pub fn std_ok(&self) -> bool {
        (self.std_x - self.sigma).abs() <= 0.02 * self.sigma
    }

    pub fn uniform_ok(&self) -> bool {
        self.chi_square < self.critical
    }

    pub fn passed(&self) -> bool {
        self.mean_ok() && self.std_ok() && self.uniform_ok() && self.degenerate_exact
    }
}

pub fn reference_point_statistics(draws: usize, seed: u64) -> RefPointStats {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use vecmap::recon::sample_reference_points;
    use vecmap::rng;

    let (n_a, w_f, h_f, sigma, bins) = (5usize, 8usize, 8usize, 3.0, 16usize);
    let mut r = rng::stream(seed, &[99]);
    let set = sample_reference_points(n_a, w_f, h_f, sigma, draws, &mut r).unwrap();
    let xs: Vec<f64> = set.points.iter().map(|p| p[0]).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut counts = vec![0usize; bins];
    for p in &set.points {
        let b = ((p[1] / h_f as f64) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let expected = n / bins as f64;
    let chi_square = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99);
    let center = (n_a * w_f) as f64 / 2.0;
    let flat = sample_reference_points(n_a, w_f, h_f, 0.0, 1000, &mut r).unwrap();
    RefPointStats {
        draws,
        mean_x: mean,
        expected_mean_x: center,
        std_err: sigma / n.sqrt(),
        std_x: var.sqrt(),
        sigma,
        chi_square,
        critical,
        bins,
        degenerate_exact: flat.points.iter().all(|p| p[0] == center),
    }
}
