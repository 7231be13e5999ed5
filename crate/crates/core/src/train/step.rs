//! One optimization step over a batch: complete-view teacher branch,
//! masked student branch with reconstruction, and the combined objective
//! `L_map + λ_rec·L_rec + λ_cor·L_cor`.

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::correction::correction_loss;
use crate::encoder::ViewFeatureSet;
use crate::error::{Error, Result};
use crate::head::{hungarian_match, map_loss, DecodedMap, MapPrediction};
use crate::lift::BevFeature;
use crate::recon::{rec_loss, PvrKind};
use crate::rng::{self, tag};
use crate::scene::Sample;
use crate::tensor::optim::{AdamState, AdamW};
use crate::tensor::{Graph, Tensor, Var};
use crate::Scalar;

/// Logged per-step losses, batch means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub step: u64,
    pub l_map: f64,
    pub l_rec: f64,
    pub l_cor: f64,
    /// `l_map + λ_rec·l_rec + λ_cor·l_cor`.
    pub total: f64,
    pub cls: f64,
    pub p2p: f64,
    pub dir: f64,
    /// Number of views dropped per sample, in batch order.
    pub masked: Vec<usize>,
}

/// Which terms drive the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Full,
    MapOnly,
}

/// Tape handles of one sample's forward pass.
#[derive(Clone, Debug)]
pub struct SampleForward {
    pub complete: ViewFeatureSet,
    pub student: ViewFeatureSet,
    pub mask: Vec<usize>,
    pub teacher_bev: BevFeature,
    pub student_bev: BevFeature,
    pub prediction: MapPrediction,
    pub l_map: Var,
    pub l_rec: Var,
    pub l_cor: Var,
    pub cls: Var,
    pub p2p: Var,
    pub dir: Var,
    pub total: Var,
}

/// Where a sample sits in the training schedule; seeds every random choice.
#[derive(Clone, Copy, Debug)]
pub struct StepCoords {
    pub epoch: usize,
    pub step: u64,
    /// Dataset index of the sample.
    pub sample: usize,
}

impl<T: Scalar> Model<T> {
    /// Record the full two-branch forward pass for one sample on `g`.
    pub fn forward_sample(&self, g: &mut Graph<T>, p: &crate::tensor::Bound, sample: &Sample, at: StepCoords, objective: Objective) -> Result<SampleForward> {
        let cfg = &self.cfg;
        let coords = [at.epoch as u64, at.step, at.sample as u64];
        let complete = self.encoder.encode(g, p, &sample.images)?;
        let mut mask_rng = rng::stream(cfg.seed, &[tag::MASK, coords[0], coords[1], coords[2]]);
        let mask = cfg.mask.draw(complete.len(), &mut mask_rng);
        let teacher_bev = self.lifter.lift(g, &complete)?;
        let zero = g.constant(Tensor::scalar(T::zero()));
        let (student, student_bev, l_rec, l_cor) = if mask.is_empty() {
            (complete.clone(), teacher_bev.clone(), zero, zero)
        } else {
            let mut ref_rng = rng::stream(cfg.seed, &[tag::REFPOINTS, coords[0], coords[1], coords[2]]);
            let student = self.degrade(g, p, &complete, &mask, &mut ref_rng)?;
            let student_bev = self.lifter.lift(g, &student)?;
            let learned = !matches!(cfg.recon.kind, PvrKind::None | PvrKind::Mean);
            let l_rec = if learned {
                let mut target = complete.clone();
                for &m in &mask {
                    target.grids[m] = g.detach(complete.grids[m]);
                }
                rec_loss(g, &target, &student, &mask)?
            } else {
                zero
            };
            let l_cor = correction_loss(g, teacher_bev.feature, student_bev.feature, &cfg.correction)?;
            (student, student_bev, l_rec, l_cor)
        };
        let prediction = self.head.decode(g, p, student_bev.feature);
        let gts = self.ground_truth(&sample.scene);
        let decoded = DecodedMap::from_graph(g, &prediction);
        let matching = hungarian_match(&decoded, &gts, cfg.cost)?;
        let ml = map_loss(g, &prediction, &gts, &matching, &cfg.loss);
        let total = match objective {
            Objective::MapOnly => ml.total,
            Objective::Full => {
                let r = g.scale(l_rec, T::of(cfg.lambda_rec));
                let c = g.scale(l_cor, T::of(cfg.correction.weight));
                let t = g.add(ml.total, r);
                g.add(t, c)
            }
        };
        Ok(SampleForward {
            complete,
            student,
            mask,
            teacher_bev,
            student_bev,
            prediction,
            l_map: ml.total,
            l_rec,
            l_cor,
            cls: ml.cls,
            p2p: ml.p2p,
            dir: ml.dir,
            total,
        })
    }
}

/// Learning rate at global step `step` of `total_steps`.
pub fn learning_rate(cfg: &super::TrainConfig, step: u64, total_steps: u64) -> f64 {
    if !cfg.cosine_schedule || total_steps == 0 {
        return cfg.lr;
    }
    let t = (step as f64 / total_steps as f64).min(1.0);
    cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Forward, backward, and one AdamW update over `batch` (dataset indices
/// into `samples`). Per-sample gradients are summed in batch order.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut AdamState<T>,
    samples: &[Sample],
    batch: &[usize],
    epoch: usize,
    step: u64,
    lr: f64,
    objective: Objective,
) -> Result<LossBreakdown> {
    let cfg = model.cfg.clone();
    let mut acc: Option<Vec<Tensor<T>>> = None;
    let mut sums = [0.0f64; 6];
    let mut masked = Vec::with_capacity(batch.len());
    let inv = T::one() / T::of_usize(batch.len());
    for &i in batch {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let at = StepCoords { epoch, step, sample: i };
        let f = model.forward_sample(&mut g, &p, &samples[i], at, objective)?;
        let vals = [f.l_map, f.l_rec, f.l_cor, f.cls, f.p2p, f.dir].map(|v| g.value(v).item().as_f64());
        let total = g.value(f.total).item().as_f64();
        if !vals.iter().all(|v| v.is_finite()) || !total.is_finite() {
            return Err(Error::NonFinite {
                step: step as usize,
                sample: i,
                seed: cfg.seed,
                detail: format!("losses map {} rec {} cor {} total {total}", vals[0], vals[1], vals[2]),
            });
        }
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
        }
        masked.push(f.mask.len());
        let scaled = g.scale(f.total, inv);
        let grads = p.grads(&g.backward(scaled));
        match &mut acc {
            None => acc = Some(grads),
            Some(a) => {
                for (x, y) in a.iter_mut().zip(&grads) {
                    for (u, &v) in x.data_mut().iter_mut().zip(y.data()) {
                        *u += v;
                    }
                }
            }
        }
    }
    let grads = acc.expect("non-empty batch");
    if let Some((name, _)) = model.store.names().iter().zip(&grads).find(|(_, t)| !t.all_finite()) {
        return Err(Error::NonFinite {
            step: step as usize,
            sample: batch[0],
            seed: cfg.seed,
            detail: format!("non-finite gradient for parameter {name}"),
        });
    }
    let adam = AdamW { lr, weight_decay: cfg.weight_decay, ..AdamW::default() };
    adam.step(model.store.values_mut(), &grads, opt)?;
    let n = batch.len() as f64;
    let [l_map, l_rec, l_cor, cls, p2p, dir] = sums.map(|s| s / n);
    let (lr_w, cor_w) = match objective {
        Objective::Full => (cfg.lambda_rec, cfg.correction.weight),
        Objective::MapOnly => (0.0, 0.0),
    };
    Ok(LossBreakdown {
        epoch,
        step,
        l_map,
        l_rec,
        l_cor,
        total: l_map + lr_w * l_rec + cor_w * l_cor,
        cls,
        p2p,
        dir,
        masked,
    })
}
