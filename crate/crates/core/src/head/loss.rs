//! Set-prediction losses: focal classification, point-to-point L1, and
//! edge-direction cosine.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::matching::{GroundTruth, MatchResult};
use super::{MapPrediction, BACKGROUND};
use crate::tensor::{FocalSpec, GatherPlan, Graph, Tensor, Var};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub cls: f64,
    pub pts: f64,
    pub dir: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 2.0, pts: 5.0, dir: 0.1, focal_gamma: 2.0, focal_alpha: 0.25 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MapLoss {
    pub cls: Var,
    pub p2p: Var,
    pub dir: Var,
    pub total: Var,
}

/// `M·(P−1)` rows of edge vectors `p[i+1] − p[i]` for `M` polylines of `P` points.
fn edge_plan<T: Scalar>(polylines: usize, points: usize) -> GatherPlan<T> {
    let mut b = GatherPlan::builder(polylines * points);
    for m in 0..polylines {
        for i in 0..points - 1 {
            b.push(m * points + i + 1, T::one());
            b.push(m * points + i, -T::one());
            b.end_row();
        }
    }
    b.build()
}

pub fn map_loss<T: Scalar>(g: &mut Graph<T>, pred: &MapPrediction, gts: &[GroundTruth], m: &MatchResult, w: &LossWeights) -> MapLoss {
    let k = g.shape(pred.logits)[0];
    let two_p = g.shape(pred.points)[1];
    let p = two_p / 2;
    let mut labels = vec![BACKGROUND; k];
    for a in &m.pairs {
        labels[a.slot] = gts[a.gt].class;
    }
    let spec = FocalSpec { gamma: w.focal_gamma, alpha: w.focal_alpha, background: Some(BACKGROUND) };
    let cls = g.focal(pred.logits, &labels, spec);
    let (p2p, dir) = if m.pairs.is_empty() {
        let z = g.constant(Tensor::scalar(T::zero()));
        (z, z)
    } else {
        let slots: Vec<usize> = m.pairs.iter().map(|a| a.slot).collect();
        let mut target = Vec::with_capacity(slots.len() * two_p);
        for a in &m.pairs {
            let pts = &gts[a.gt].points;
            let ordered: Box<dyn Iterator<Item = &[f64; 2]>> =
                if a.reversed { Box::new(pts.iter().rev()) } else { Box::new(pts.iter()) };
            for q in ordered {
                target.push(T::of(q[0]));
                target.push(T::of(q[1]));
            }
        }
        let n = slots.len();
        let matched = g.gather_rows(pred.points, &slots);
        let target = Tensor::new([n, two_p], target);
        let tgt = g.constant(target.clone());
        let p2p = g.l1(matched, tgt);
        let plan = Arc::new(edge_plan::<T>(n, p));
        let flat = g.reshape(matched, [n * p, 2]);
        let pe = g.sparse_gather(flat, plan.clone());
        let te = {
            let t = g.constant(target.reshaped([n * p, 2]));
            g.sparse_gather(t, plan)
        };
        let cos = g.row_cosine(pe, te, 1e-12);
        let mc = g.mean(cos);
        let one = g.constant(Tensor::scalar(T::one()));
        (p2p, g.sub(one, mc))
    };
    let a = g.scale(cls, T::of(w.cls));
    let b = g.scale(p2p, T::of(w.pts));
    let c = g.scale(dir, T::of(w.dir));
    let ab = g.add(a, b);
    let total = g.add(ab, c);
    MapLoss { cls, p2p, dir, total }
}
