//! Epoch loop with per-epoch checkpoints and a JSON-lines loss curve.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::config::TrainConfig;
use super::model::{checkpoint_meta, Model};
use super::step::{learning_rate, train_step, LossBreakdown, Objective};
use crate::error::{io_err, Error, Result};
use crate::rng::{self, tag};
use crate::scene::{CameraRig, Sample};
use crate::tensor::optim::AdamState;
use crate::Scalar;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const CURVES: &str = "curves.jsonl";

#[derive(Clone, Debug, Default)]
pub struct LoopOptions {
    /// Continue from `<out>/checkpoint` when present.
    pub resume: bool,
    /// Stop once this many epochs are complete (simulated interruption).
    pub stop_after: Option<usize>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub curves: Vec<LossBreakdown>,
    pub epochs_done: usize,
}

pub fn steps_per_epoch(samples: usize, batch: usize) -> usize {
    samples.div_ceil(batch)
}

/// Visit order of the dataset in `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, epoch as u64]));
    order
}

fn read_curves(path: &Path) -> Result<Vec<LossBreakdown>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(crate::error::json_err(path)))
        .collect()
}

fn write_curves(path: &Path, curves: &[LossBreakdown]) -> Result<()> {
    let mut text = String::new();
    for c in curves {
        text.push_str(&serde_json::to_string(c).expect("breakdown serializes"));
        text.push('\n');
    }
    crate::binfmt::write_file(path, text.as_bytes())
}

fn save_atomic<T: Scalar>(model: &Model<T>, opt: &AdamState<T>, out: &Path, meta: serde_json::Value) -> Result<()> {
    let tmp = out.join(format!("{CHECKPOINT_DIR}.tmp"));
    let dst = out.join(CHECKPOINT_DIR);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    model.save(&tmp, Some(opt), meta)?;
    if dst.exists() {
        fs::remove_dir_all(&dst).map_err(io_err(&dst))?;
    }
    fs::rename(&tmp, &dst).map_err(io_err(&dst))
}

/// Train on `samples` for `cfg.epochs` epochs, writing `<out>/checkpoint/`
/// after every epoch and `<out>/curves.jsonl` with one line per step.
pub fn train_loop<T: Scalar>(
    samples: &[Sample],
    dataset_checksum: &str,
    rig: &CameraRig,
    cfg: &TrainConfig,
    out: &Path,
    opts: &LoopOptions,
) -> Result<TrainOutcome<T>> {
    cfg.validate(rig)?;
    if samples.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.scene.elements.len() > cfg.head.queries) {
        return Err(Error::Config(format!(
            "scene {} has {} elements, more than the head's {} queries",
            s.scene.seed,
            s.scene.elements.len(),
            cfg.head.queries
        )));
    }
    if samples.iter().any(|s| s.images.views != rig.len()) {
        return Err(Error::Config("samples do not match the rig".into()));
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let ckpt: PathBuf = out.join(CHECKPOINT_DIR);
    let curves_path = out.join(CURVES);
    let spe = steps_per_epoch(samples.len(), cfg.batch_size);
    let total_steps = (spe * cfg.epochs) as u64;
    let (mut model, mut opt, start, mut curves) = if opts.resume && ckpt.join(crate::tensor::checkpoint::MANIFEST).exists() {
        let (model, opt, meta) = Model::<T>::load(&ckpt)?;
        let bad = |reason: &str| Error::Checkpoint { path: ckpt.clone(), reason: reason.into() };
        if model.cfg != *cfg {
            return Err(bad("checkpoint was trained with a different config"));
        }
        if model.rig != *rig {
            return Err(bad("checkpoint was trained with a different rig"));
        }
        if meta["dataset"].as_str() != Some(dataset_checksum) {
            return Err(bad("checkpoint was trained on a different dataset"));
        }
        let opt = opt.ok_or_else(|| bad("checkpoint has no optimizer state"))?;
        let epoch = meta["epoch"].as_u64().ok_or_else(|| bad("checkpoint metadata lacks the epoch"))? as usize;
        let mut curves = read_curves(&curves_path)?;
        curves.truncate(epoch * spe);
        (model, opt, epoch, curves)
    } else {
        let model = Model::<T>::new(cfg, rig)?;
        let opt = AdamState::zeros_like(model.store.values());
        (model, opt, 0, Vec::new())
    };
    write_curves(&curves_path, &curves)?;
    let mut file = OpenOptions::new().append(true).open(&curves_path).map_err(io_err(&curves_path))?;
    let mut done = start;
    for epoch in start..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, samples.len());
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let step = (epoch * spe + b) as u64;
            let lr = learning_rate(cfg, step, total_steps);
            let lb = train_step(&mut model, &mut opt, samples, batch, epoch, step, lr, Objective::Full)?;
            writeln!(file, "{}", serde_json::to_string(&lb).expect("breakdown serializes")).map_err(io_err(&curves_path))?;
            curves.push(lb);
        }
        file.flush().map_err(io_err(&curves_path))?;
        done = epoch + 1;
        save_atomic(&model, &opt, out, checkpoint_meta(done, opt.step, dataset_checksum))?;
        if opts.verbose {
            let ep = &curves[epoch * spe..];
            let mean = |f: fn(&LossBreakdown) -> f64| ep.iter().map(f).sum::<f64>() / ep.len() as f64;
            eprintln!(
                "epoch {done}/{}: total {:.4} map {:.4} rec {:.4} cor {:.4}",
                cfg.epochs,
                mean(|c| c.total),
                mean(|c| c.l_map),
                mean(|c| c.l_rec),
                mean(|c| c.l_cor)
            );
        }
        if opts.stop_after == Some(done) {
            break;
        }
    }
    Ok(TrainOutcome { model, curves, epochs_done: done })
}
