use std::collections::BTreeMap;
use std::path::Path;

use vecmap::encoder::MaskMode;
use vecmap::scene::dataset::generate;
use vecmap::scene::{CameraRig, GeneratorConfig, RigPreset, Sample};
use vecmap::tensor::optim::AdamState;
use vecmap::tensor::Graph;
use vecmap::train::run::{train_loop, LoopOptions, TrainOutcome};
use vecmap::train::step::{train_step, LossBreakdown, Objective, StepCoords};
use vecmap::train::{Model, TrainConfig};

fn rig() -> CameraRig {
    CameraRig::preset(RigPreset::Ring6)
}

fn data(seed: u64, n: usize) -> Vec<Sample> {
    generate(seed, n, &rig(), &GeneratorConfig::default()).unwrap()
}

fn composes(c: &LossBreakdown, cfg: &TrainConfig) -> bool {
    let recomputed = c.l_map + cfg.lambda_rec * c.l_rec + cfg.correction.weight * c.l_cor;
    (recomputed - c.total).abs() <= 1e-9
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn total_composes_on_the_tape() {
    let samples = data(1, 3);
    for kind in ["l2", "l1", "kl"] {
        let mut cfg: TrainConfig = serde_json::from_value(serde_json::json!({
            "mask": { "mode": "range", "min": 1, "max": 3 },
            "lambda_rec": 0.37,
            "correction": { "kind": kind, "weight": 2.5 }
        }))
        .unwrap();
        cfg.seed = 4;
        let model = Model::<f64>::new(&cfg, &rig()).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let mut g = Graph::new();
            let p = model.store.bind(&mut g);
            let f = model.forward_sample(&mut g, &p, s, StepCoords { epoch: 0, step: 0, sample: i }, Objective::Full).unwrap();
            let v = |x| g.value(x).item();
            let recomputed = v(f.l_map) + cfg.lambda_rec * v(f.l_rec) + cfg.correction.weight * v(f.l_cor);
            assert!((recomputed - v(f.total)).abs() <= 1e-9, "{kind}: {recomputed} vs {}", v(f.total));
            assert!(!f.mask.is_empty());
        }
    }
}

#[test]
fn correction_sends_nothing_to_the_teacher() {
    let samples = data(2, 2);
    let mut cfg = TrainConfig { mask: MaskMode::Exact { count: 2 }, ..TrainConfig::default() };
    for detach in [true, false] {
        cfg.correction.detach_teacher = detach;
        let model = Model::<f64>::new(&cfg, &rig()).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let mut g = Graph::new();
            let p = model.store.bind(&mut g);
            let f = model.forward_sample(&mut g, &p, s, StepCoords { epoch: 0, step: 0, sample: i }, Objective::Full).unwrap();
            let grads = g.backward(f.l_cor);
            let teacher = grads.get(f.teacher_bev.feature);
            let student = grads.get(f.student_bev.feature);
            assert!(student.data().iter().any(|&x| x != 0.0), "student receives correction gradient");
            if detach {
                assert!(teacher.data().iter().all(|&x| x == 0.0), "teacher BEV received correction gradient");
            } else {
                // The instrument is live: without the block the teacher is reached.
                assert!(teacher.data().iter().any(|&x| x != 0.0));
            }
        }
    }
}

#[test]
fn zero_lambdas_match_map_only_bitwise() {
    let samples = data(3, 4);
    let mut cfg = TrainConfig { lambda_rec: 0.0, mask: MaskMode::Range { min: 1, max: 3 }, ..TrainConfig::default() };
    cfg.correction.weight = 0.0;
    let run = |objective| {
        let mut model = Model::<f32>::new(&cfg, &rig()).unwrap();
        let mut opt = AdamState::zeros_like(model.store.values());
        for step in 0..3u64 {
            let batch = [(step as usize) % 4, (step as usize + 1) % 4];
            train_step(&mut model, &mut opt, &samples, &batch, 0, step, cfg.lr, objective).unwrap();
        }
        model.store.values().iter().flat_map(|t| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect::<Vec<u32>>()
    };
    assert!(run(Objective::Full) == run(Objective::MapOnly), "λ = 0 update differs from the map-only update");
}

#[test]
fn complete_views_have_no_auxiliary_losses() {
    let samples = data(4, 3);
    let cfg = TrainConfig { mask: MaskMode::Complete, ..TrainConfig::default() };
    let mut model = Model::<f64>::new(&cfg, &rig()).unwrap();
    let mut opt = AdamState::zeros_like(model.store.values());
    let lb = train_step(&mut model, &mut opt, &samples, &[0, 1, 2], 0, 0, cfg.lr, Objective::Full).unwrap();
    assert_eq!((lb.l_rec, lb.l_cor), (0.0, 0.0));
    assert_eq!(lb.total, lb.l_map);
    assert_eq!(lb.masked, [0, 0, 0]);
}

#[test]
fn first_hundred_steps_are_finite_and_non_negative() {
    let samples = data(5, 16);
    let cfg = TrainConfig { epochs: 25, ..TrainConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let out: TrainOutcome<f32> = train_loop(&samples, "fixture", &rig(), &cfg, dir.path(), &LoopOptions::default()).unwrap();
    assert_eq!(out.curves.len(), 100);
    for c in &out.curves {
        for (name, v) in [("map", c.l_map), ("rec", c.l_rec), ("cor", c.l_cor), ("total", c.total), ("cls", c.cls), ("p2p", c.p2p), ("dir", c.dir)] {
            assert!(v.is_finite() && v >= 0.0, "step {}: {name} = {v}", c.step);
        }
        assert!(composes(c, &cfg), "step {} total does not compose", c.step);
    }
    let logged = std::fs::read_to_string(dir.path().join("curves.jsonl")).unwrap();
    let parsed: Vec<LossBreakdown> = logged.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, out.curves);
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let samples = data(6, 6);
    let cfg = TrainConfig { epochs: 2, batch_size: 2, ..TrainConfig::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        train_loop::<f32>(&samples, "fixture", &rig(), &cfg, d.path(), &LoopOptions::default()).unwrap();
    }
    assert_eq!(tree(a.path()), tree(b.path()));
    let other = TrainConfig { seed: 1, ..cfg };
    let c = tempfile::tempdir().unwrap();
    train_loop::<f32>(&samples, "fixture", &rig(), &other, c.path(), &LoopOptions::default()).unwrap();
    assert_ne!(tree(a.path()), tree(c.path()));
}

#[test]
fn resume_continues_exactly() {
    let samples = data(7, 6);
    let cfg = TrainConfig { epochs: 3, batch_size: 2, cosine_schedule: true, ..TrainConfig::default() };
    let (full, cut) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train_loop::<f32>(&samples, "fixture", &rig(), &cfg, full.path(), &LoopOptions::default()).unwrap();
    let first = train_loop::<f32>(&samples, "fixture", &rig(), &cfg, cut.path(), &LoopOptions { stop_after: Some(1), ..Default::default() }).unwrap();
    assert_eq!(first.epochs_done, 1);
    // A half-written later epoch must be discarded on resume.
    let curves = cut.path().join("curves.jsonl");
    let mut text = std::fs::read_to_string(&curves).unwrap();
    text.push_str(&text.lines().next().unwrap().to_string());
    text.push('\n');
    std::fs::write(&curves, text).unwrap();
    let resumed = train_loop::<f32>(&samples, "fixture", &rig(), &cfg, cut.path(), &LoopOptions { resume: true, ..Default::default() }).unwrap();
    assert_eq!(resumed.epochs_done, 3);
    assert_eq!(tree(full.path()), tree(cut.path()));

    let wrong = train_loop::<f32>(&samples, "other", &rig(), &cfg, cut.path(), &LoopOptions { resume: true, ..Default::default() });
    assert!(matches!(wrong, Err(vecmap::Error::Checkpoint { .. })));
    let changed = TrainConfig { lr: 1e-3, ..cfg };
    let wrong = train_loop::<f32>(&samples, "fixture", &rig(), &changed, cut.path(), &LoopOptions { resume: true, ..Default::default() });
    assert!(matches!(wrong, Err(vecmap::Error::Checkpoint { .. })));
}

#[test]
fn rig_mismatch_is_rejected_before_training() {
    let samples = data(8, 2);
    let cfg = TrainConfig { rig: Some(RigPreset::Ring7), ..TrainConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let r = train_loop::<f32>(&samples, "fixture", &rig(), &cfg, dir.path(), &LoopOptions::default());
    assert!(matches!(r, Err(vecmap::Error::Config(_))));
    assert!(!dir.path().join("curves.jsonl").exists());
}

#[test]
fn single_scene_overfits() {
    let samples = data(9, 1);
    let cfg = TrainConfig { batch_size: 1, epochs: 500, ..TrainConfig::default() };
    let mut model = Model::<f32>::new(&cfg, &rig()).unwrap();
    let mut opt = AdamState::zeros_like(model.store.values());
    let mut best = f64::INFINITY;
    for step in 0..500u64 {
        let lb = train_step(&mut model, &mut opt, &samples, &[0], step as usize, step, cfg.lr, Objective::Full).unwrap();
        best = best.min(lb.l_map);
        if best < 0.05 {
            eprintln!("L_map {best:.4} after {} steps", step + 1);
            return;
        }
    }
    panic!("L_map only reached {best:.4} in 500 steps");
}

#[test]
fn default_config_halves_the_loss() {
    let samples = data(10, 64);
    let cfg = TrainConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let out = train_loop::<f32>(&samples, "fixture", &rig(), &cfg, dir.path(), &LoopOptions::default()).unwrap();
    let spe = 16;
    assert_eq!(out.curves.len(), spe * cfg.epochs);
    let mean = |c: &[LossBreakdown]| c.iter().map(|x| x.total).sum::<f64>() / c.len() as f64;
    let (first, last) = (mean(&out.curves[..spe]), mean(&out.curves[out.curves.len() - spe..]));
    eprintln!("epoch 1 mean {first:.4}, final epoch mean {last:.4}, ratio {:.3}", last / first);
    assert!(last < 0.5 * first);
}
