//! Randomized gradient-check families, one per differentiable component.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vecmap::correction::{correction_loss, CorrectionConfig, CorrectionKind};
use vecmap::encoder::{Encoder, EncoderConfig, ViewFeatureSet, ViewStatus};
use vecmap::head::matching::Assignment;
use vecmap::head::{map_loss, GroundTruth, HeadConfig, LossWeights, MapHead, MapPrediction, MatchResult};
use vecmap::lift::{BevConfig, Lifter};
use vecmap::recon::{rec_loss, DeformableQueries, Panorama, ViewDecoder};
use vecmap::scene::{CameraRig, RenderedViewSet, RigPreset};
use vecmap::tensor::{Bound, FocalSpec, Graph, ParamStore, Tensor, Var};

use super::fd::{check, project, uniform, GradReport};

const BUDGET: usize = 64;

fn rng(family: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(family.wrapping_mul(0x1000_0001) ^ i as u64)
}

/// Parameter values perturbed away from their (often zero or one) initial
/// values so no term is trivially flat.
fn jittered(store: &ParamStore<f64>, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    store
        .values()
        .iter()
        .map(|t| Tensor::from_fn(t.shape().to_vec(), |i| t.data()[i] + rng.random_range(-0.3..0.3)))
        .collect()
}

pub fn encoder(instances: usize) -> GradReport {
    let mut rep = GradReport::new("encoder");
    for i in 0..instances {
        let mut r = rng(1, i);
        let cfg = EncoderConfig { patch: 2, channels: 4, depth: 1, heads: 2 };
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, &cfg, 4, 4, &mut r).unwrap();
        let mut images = RenderedViewSet::zeros(2, 4, 4);
        for x in &mut images.data {
            *x = r.random_range(0.0..1.0);
        }
        let params = jittered(&store, &mut r);
        let n = params.len();
        let weights: Vec<Tensor<f64>> = (0..2).map(|_| uniform(&mut r, &[4, 4], 1.0)).collect();
        rep.absorb(check(&params, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
            let p = Bound::from_vars(v[..n].to_vec());
            let f = enc.encode(g, &p, &images).unwrap();
            let a = project(g, f.grids[0], &weights[0]);
            let b = project(g, f.grids[1], &weights[1]);
            g.add(a, b)
        }));
    }
    rep
}

pub fn lift(instances: usize) -> GradReport {
    let mut rep = GradReport::new("lift");
    let rig = CameraRig::preset(RigPreset::Ring6);
    let cfg = BevConfig { rows: 8, cols: 4, cell: 7.5 };
    let lifter = Lifter::<f64>::new(&rig, &cfg, 4, 4).unwrap();
    for i in 0..instances {
        let mut r = rng(2, i);
        let grids: Vec<Tensor<f64>> = (0..6).map(|_| uniform(&mut r, &[16, 3], 1.0)).collect();
        let mut status = vec![ViewStatus::Available; 6];
        for s in status.iter_mut() {
            if r.random_bool(0.3) {
                *s = if r.random_bool(0.5) { ViewStatus::Masked } else { ViewStatus::Reconstructed };
            }
        }
        let weight = uniform(&mut r, &[cfg.cells(), 3], 1.0);
        rep.absorb(check(&grids, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
            let f = ViewFeatureSet { grids: v.to_vec(), status: status.clone(), grid_h: 4, grid_w: 4, channels: 3 };
            let bev = lifter.lift(g, &f).unwrap();
            project(g, bev.feature, &weight)
        }));
    }
    rep
}

pub fn grid_sample(instances: usize) -> GradReport {
    let mut rep = GradReport::new("grid_sample");
    for i in 0..instances {
        let mut r = rng(3, i);
        let (h, w, c, m) = (3, 5, 2, 6);
        let feature = uniform(&mut r, &[h, w, c], 1.0);
        // Mostly interior points, a few beyond the border to exercise clamping.
        let pts = Tensor::from_fn([m, 2], |k| {
            let hi = if k % 2 == 0 { w } else { h } as f64;
            r.random_range(-0.8..hi - 0.2)
        });
        let weight = uniform(&mut r, &[m, c], 1.0);
        rep.absorb(check(&[feature, pts], BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
            let s = g.grid_sample(v[0], v[1]);
            project(g, s, &weight)
        }));
    }
    rep
}

fn panorama(feature: Var, tiles: usize, h: usize, w: usize) -> Panorama {
    Panorama {
        tiles: (1..=tiles).collect(),
        offsets: (0..tiles).map(|t| t as isize - (tiles / 2) as isize + if t >= tiles / 2 { 1 } else { 0 }).collect(),
        feature,
        height: h,
        width: w * tiles,
    }
}

pub fn gpvr_attend(instances: usize) -> GradReport {
    let mut rep = GradReport::new("gpvr_attend");
    for i in 0..instances {
        let mut r = rng(4, i);
        let (c, heads, n_ref, n_q) = (4, 2, 3, 2);
        let (h, w, tiles) = (2, 2, 2);
        let mut store = ParamStore::new();
        let dq = DeformableQueries::new(&mut store, c, heads, n_ref, n_q, &mut r);
        let mut inputs = jittered(&store, &mut r);
        let n = inputs.len();
        inputs.push(uniform(&mut r, &[h * w * tiles, c], 1.0));
        let refs: Vec<[f64; 2]> =
            (0..n_ref).map(|_| [r.random_range(0.0..(w * tiles) as f64), r.random_range(0.0..h as f64)]).collect();
        let weight = uniform(&mut r, &[n_q, c], 1.0);
        rep.absorb(check(&inputs, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
            let p = Bound::from_vars(v[..n].to_vec());
            let pano = panorama(v[n], tiles, h, w);
            let t = dq.attend(g, &p, &pano, &refs);
            project(g, t.tokens, &weight)
        }));
    }
    rep
}

pub fn decoder(instances: usize) -> GradReport {
    let mut rep = GradReport::new("pvr_decoder");
    for i in 0..instances {
        let mut r = rng(5, i);
        let (views, gh, gw, c) = (3, 2, 2, 4);
        let tiles = 2;
        let mut store = ParamStore::new();
        let dec = ViewDecoder::new(&mut store, views, gh, gw, c, 2, 1, 1, &mut r);
        let mut inputs = jittered(&store, &mut r);
        let n = inputs.len();
        inputs.push(uniform(&mut r, &[gh * gw * tiles, c], 1.0));
        inputs.push(uniform(&mut r, &[2, c], 1.0));
        let missing = r.random_range(0..views);
        let weight = uniform(&mut r, &[gh * gw, c], 1.0);
        rep.absorb(check(&inputs, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
            let p = Bound::from_vars(v[..n].to_vec());
            let pano = panorama(v[n], tiles, gh, gw);
            let out = dec.decode(g, &p, missing, &pano, Some(v[n + 1]));
            project(g, out, &weight)
        }));
    }
    rep
}

pub fn map_head(instances: usize) -> GradReport {
    let mut rep = GradReport::new("map_head");
    let bev = BevConfig { rows: 4, cols: 2, cell: 7.5 };
    for i in 0..instances {
        let mut r = rng(6, i);
        let cfg = HeadConfig { queries: 3, points: 3, layers: 1, heads: 2, bev_pool: 2 };
        let mut store = ParamStore::new();
        let head = MapHead::new(&mut store, &cfg, &bev, 4, &mut r).unwrap();
        let mut inputs = jittered(&store, &mut r);
        let n = inputs.len();
        inputs.push(uniform(&mut r, &[bev.cells(), 4], 1.0));
        let wl = uniform(&mut r, &[3, 4], 1.0);
        let wp = uniform(&mut r, &[3, 6], 1.0);
        rep.absorb(check(&inputs, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
            let p = Bound::from_vars(v[..n].to_vec());
            let pred = head.decode(g, &p, v[n]);
            let a = project(g, pred.logits, &wl);
            let b = project(g, pred.points, &wp);
            g.add(a, b)
        }));
    }
    rep
}

fn probabilities(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut t = Tensor::from_fn([rows, cols], |_| r.random_range(0.05..1.0));
    for row in t.data_mut().chunks_mut(cols) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    t
}

pub fn primitive_losses(instances: usize) -> Vec<GradReport> {
    let mut mse = GradReport::new("loss_mse");
    let mut l1 = GradReport::new("loss_l1");
    let mut kl = GradReport::new("loss_kl");
    let mut focal = GradReport::new("loss_focal");
    let mut cosine = GradReport::new("row_cosine");
    for i in 0..instances {
        let mut r = rng(7, i);
        let a = uniform(&mut r, &[4, 3], 1.0);
        let b = uniform(&mut r, &[4, 3], 1.0);
        let pair = [a, b];
        mse.absorb(check(&pair, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| g.mse(v[0], v[1])));
        l1.absorb(check(&pair, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| g.l1(v[0], v[1])));
        let pq = [probabilities(&mut r, 4, 5), probabilities(&mut r, 4, 5)];
        // Perturbing a probability leaves the simplex, so differentiate
        // through a softmax of unconstrained logits instead.
        let logits = [pq[0].clone(), pq[1].clone()];
        kl.absorb(check(&logits, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
            let p = g.softmax_rows(v[0]);
            let q = g.softmax_rows(v[1]);
            g.kl(p, q)
        }));
        let lg = uniform(&mut r, &[5, 4], 2.0);
        let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..4)).collect();
        let spec = FocalSpec { gamma: 2.0, alpha: 0.25, background: Some(3) };
        focal.absorb(check(&[lg], BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| g.focal(v[0], &labels, spec)));
        let w = uniform(&mut r, &[4], 1.0);
        cosine.absorb(check(&pair, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
            let c = g.row_cosine(v[0], v[1], 1e-12);
            project(g, c, &w)
        }));
    }
    vec![mse, l1, kl, focal, cosine]
}

pub fn map_losses(instances: usize) -> GradReport {
    let mut rep = GradReport::new("map_loss");
    for i in 0..instances {
        let mut r = rng(8, i);
        let (k, pts) = (4, 5);
        let n_gt = r.random_range(0..=3);
        let slots = rand::seq::index::sample(&mut r, k, n_gt).into_vec();
        let gts: Vec<GroundTruth> = (0..n_gt)
            .map(|_| GroundTruth {
                class: r.random_range(0..3),
                points: (0..pts).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect(),
            })
            .collect();
        let pairs = slots
            .iter()
            .enumerate()
            .map(|(gt, &slot)| Assignment { gt, slot, reversed: r.random_bool(0.5) })
            .collect();
        let m = MatchResult { pairs, cost: 0.0 };
        let inputs = [uniform(&mut r, &[k, 4], 2.0), Tensor::from_fn([k, 2 * pts], |_| r.random_range(0.0..1.0))];
        let w = LossWeights::default();
        rep.absorb(check(&inputs, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
            map_loss(g, &MapPrediction { logits: v[0], points: v[1] }, &gts, &m, &w).total
        }));
    }
    rep
}

/// Student-side gradients of every correction kind, plus the reconstruction
/// loss over a random subset of views.
pub fn correction_and_reconstruction(instances: usize) -> Vec<GradReport> {
    let mut reps: Vec<GradReport> = vec![
        GradReport::new("correction_l2"),
        GradReport::new("correction_l1"),
        GradReport::new("correction_kl"),
    ];
    let mut rec = GradReport::new("reconstruction_loss");
    for i in 0..instances {
        let mut r = rng(9, i);
        let teacher = uniform(&mut r, &[6, 4], 1.0);
        let student = [uniform(&mut r, &[6, 4], 1.0)];
        for (kind, rep) in CorrectionKind::ALL.into_iter().zip(reps.iter_mut()) {
            let cfg = CorrectionConfig { kind, ..Default::default() };
            rep.absorb(check(&student, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
                let t = g.leaf(teacher.clone(), true);
                correction_loss(g, t, v[0], &cfg).unwrap()
            }));
        }
        let views = 4;
        let grids: Vec<Tensor<f64>> = (0..2 * views).map(|_| uniform(&mut r, &[4, 3], 1.0)).collect();
        let count = r.random_range(1..views);
        let missing = rand::seq::index::sample(&mut r, views, count).into_vec();
        rec.absorb(check(&grids, BUDGET, i as u64, &|g: &mut Graph<f64>, v: &[Var]| {
            let set = |grids: &[Var]| ViewFeatureSet {
                grids: grids.to_vec(),
                status: vec![ViewStatus::Available; views],
                grid_h: 2,
                grid_w: 2,
                channels: 3,
            };
            rec_loss(g, &set(&v[..views]), &set(&v[views..]), &missing).unwrap()
        }));
    }
    reps.push(rec);
    reps
}

/// Every family at `instances` randomized instances each.
pub fn all(instances: usize) -> Vec<GradReport> {
    let mut out = vec![
        encoder(instances),
        lift(instances),
        grid_sample(instances),
        gpvr_attend(instances),
        decoder(instances),
        map_head(instances),
    ];
    out.extend(primitive_losses(instances));
    out.push(map_losses(instances));
    out.extend(correction_and_reconstruction(instances));
    out
}
