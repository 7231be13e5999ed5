//! Central finite-difference gradient checking.

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vecmap::tensor::{Graph, Tensor, Var};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// Worst case over all instances of one operation family.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: &'static str,
    pub instances: usize,
    pub probes: usize,
    /// Probes skipped because the function has a kink inside `±STEP`.
    pub kinks: usize,
    pub max_rel_err: f64,
}

impl GradReport {
    pub fn new(name: &'static str) -> Self {
        Self { name, instances: 0, probes: 0, kinks: 0, max_rel_err: 0.0 }
    }

    pub fn passed(&self) -> bool {
        self.instances >= 100 && self.max_rel_err < TOLERANCE && self.kinks * 20 <= self.probes
    }

    pub fn absorb(&mut self, one: Probe) {
        self.instances += 1;
        self.probes += one.probes;
        self.kinks += one.kinks;
        self.max_rel_err = self.max_rel_err.max(one.rel_err);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Probe {
    pub probes: usize,
    pub kinks: usize,
    pub rel_err: f64,
}

/// Scalar loss of leaf inputs; the closure builds the graph from scratch.
pub type LossFn<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Var + 'a;

fn evaluate(inputs: &[Tensor<f64>], f: &LossFn) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars);
    g.value(loss).item()
}

/// Compare backprop against central differences on up to `budget`
/// coordinates (half the largest analytic entries, half uniformly random).
///
/// Relative error is `max|a − n| / max(max|a|, max|n|, 1e-12)` over the
/// probed coordinates. A coordinate whose one-sided slopes disagree by more
/// than `1e-3` of that scale sits on a kink and is skipped.
pub fn check(inputs: &[Tensor<f64>], budget: usize, seed: u64, f: &LossFn) -> Probe {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars);
    let f0 = g.value(loss).item();
    let grads = g.backward(loss);
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get(v).into_data()).collect();

    let mut all: Vec<(usize, usize)> = Vec::new();
    for (t, a) in analytic.iter().enumerate() {
        all.extend((0..a.len()).map(|i| (t, i)));
    }
    let chosen: Vec<(usize, usize)> = if all.len() <= budget {
        all
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_size = all.clone();
        by_size.sort_by(|x, y| analytic[y.0][y.1].abs().total_cmp(&analytic[x.0][x.1].abs()));
        let mut out: Vec<(usize, usize)> = by_size[..budget / 2].to_vec();
        let rest = &by_size[budget / 2..];
        out.extend(index::sample(&mut rng, rest.len(), budget - budget / 2).into_iter().map(|i| rest[i]));
        out
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut rows = Vec::with_capacity(chosen.len());
    for &(t, i) in &chosen {
        let x = work[t].data()[i];
        work[t].data_mut()[i] = x + STEP;
        let fp = evaluate(&work, f);
        work[t].data_mut()[i] = x - STEP;
        let fm = evaluate(&work, f);
        work[t].data_mut()[i] = x;
        rows.push((analytic[t][i], (fp - fm) / (2.0 * STEP), (fp - f0) / STEP, (f0 - fm) / STEP));
    }
    let scale = rows.iter().fold(1e-12f64, |m, r| m.max(r.0.abs()).max(r.1.abs()));
    let mut kinks = 0;
    let mut worst = 0.0f64;
    for (a, n, right, left) in rows {
        if (right - left).abs() > 1e-3 * scale {
            kinks += 1;
            continue;
        }
        worst = worst.max((a - n).abs() / scale);
    }
    Probe { probes: chosen.len(), kinks, rel_err: worst }
}

/// Uniform tensor in `[-a, a)`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], a: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-a..a))
}

/// `Σ x ⊙ r` for a fixed random `r`: a scalar that depends on every output entry.
pub fn project(g: &mut Graph<f64>, x: Var, r: &Tensor<f64>) -> Var {
    let w = g.constant(r.clone().reshaped(g.shape(x).to_vec()));
    let m = g.mul(x, w);
    g.sum(m)
}
