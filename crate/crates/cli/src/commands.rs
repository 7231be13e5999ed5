use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use vecmap::eval::plot::write_plots;
use vecmap::eval::{run_scenarios, write_reports, ScenarioSet};
use vecmap::scene::dataset::{self, Dataset};
use vecmap::scene::{CameraRig, GeneratorConfig, RigPreset};
use vecmap::tensor::checkpoint::MANIFEST as CHECKPOINT_MANIFEST;
use vecmap::train::run::CHECKPOINT_DIR;
use vecmap::train::{train_loop, LoopOptions, Model, TrainConfig};

use crate::manifest::ExperimentManifest;
use crate::suite::{Suite, SuiteData};
use crate::{workers, Failure, Outcome};

#[derive(Debug, Parser)]
#[command(name = "vecmap", version, about = "Vectorized map construction with missing camera views")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint over missing-view scenarios.
    Eval(EvalArgs),
    /// Train and evaluate an ablation suite.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub scenes: usize,
    #[arg(long, default_value = "ring6", value_parser = parse_rig)]
    pub rig: RigPreset,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing dataset at `--out`.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from `<out>/checkpoint`.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many completed epochs.
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory, or a training output directory containing one.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// complete, singles, k=<n> or all.
    #[arg(long, default_value = "all", value_parser = parse_scenarios)]
    pub scenarios: ScenarioSet,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write SVG precision-recall curves and an mAP bar chart.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long)]
    pub out: PathBuf,
    /// Base config every member starts from.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Held-out dataset; defaults to the last quarter of `--data`.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Parallel members; the VECMAP_WORKERS environment variable overrides.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, short)]
    pub quiet: bool,
}

fn parse_rig(s: &str) -> Result<RigPreset, String> {
    s.parse()
}

fn parse_scenarios(s: &str) -> Result<ScenarioSet, String> {
    s.parse().map_err(|e: vecmap::Error| e.to_string())
}

pub fn run(cli: Cli) -> Outcome<()> {
    match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a),
    }
}

fn runtime<'a>(what: &'static str, path: &'a Path) -> impl FnOnce(std::io::Error) -> Failure + 'a {
    move |e| Failure::Runtime(format!("{what} {}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Outcome<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::load(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn read_dataset(path: &Path) -> Outcome<Dataset> {
    if !path.join(dataset::MANIFEST).is_file() {
        return Err(Failure::Validation(format!("no dataset at {} (missing {})", path.display(), dataset::MANIFEST)));
    }
    Ok(dataset::read(path)?)
}

pub fn gen(a: &GenArgs) -> Outcome<()> {
    let out = &a.out;
    if out.exists() && std::fs::read_dir(out).map_err(runtime("reading", out))?.next().is_some() {
        if !a.force {
            return Err(Failure::Validation(format!("{} is not empty; pass --force to replace it", out.display())));
        }
        if !out.join(dataset::MANIFEST).is_file() {
            return Err(Failure::Validation(format!("{} holds something other than a dataset; refusing to replace it", out.display())));
        }
        std::fs::remove_dir_all(out).map_err(runtime("removing", out))?;
    }
    let rig = CameraRig::preset(a.rig);
    let generator = GeneratorConfig::default();
    let samples = dataset::generate(a.seed, a.scenes, &rig, &generator)?;
    let ds = dataset::write(out, a.seed, &rig, &generator, &samples)?;
    let mut m = ExperimentManifest::new("gen", a.seed);
    m.dataset_checksum = Some(ds.checksum.clone());
    m.config = Some(serde_json::json!({ "rig": a.rig, "scenes": a.scenes, "generator": generator }));
    m.write(out)?;
    println!("wrote {} scenes to {} (checksum {})", a.scenes, out.display(), &ds.checksum[..12]);
    Ok(())
}

pub fn train(a: &TrainArgs) -> Outcome<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let data = read_dataset(&a.data)?;
    cfg.validate(&data.manifest.rig)?;
    let opts = LoopOptions { resume: a.resume, stop_after: a.stop_after, verbose: !a.quiet };
    let mut m = ExperimentManifest::new("train", cfg.seed);
    m.dataset_checksum = Some(data.checksum.clone());
    m.config = Some(serde_json::to_value(&cfg).expect("config serializes"));
    m.write(&a.out)?;
    cfg.save(&a.out.join("config.json"))?;
    let out = train_loop::<f32>(&data.samples, &data.checksum, &data.manifest.rig, &cfg, &a.out, &opts)?;
    println!("trained {} of {} epochs, {} steps; checkpoint in {}", out.epochs_done, cfg.epochs, out.curves.len(), a.out.join(CHECKPOINT_DIR).display());
    Ok(())
}

fn checkpoint_dir(p: &Path) -> PathBuf {
    if p.join(CHECKPOINT_MANIFEST).is_file() {
        p.to_path_buf()
    } else {
        p.join(CHECKPOINT_DIR)
    }
}

pub fn eval(a: &EvalArgs) -> Outcome<()> {
    let ckpt = checkpoint_dir(&a.ckpt);
    if !ckpt.join(CHECKPOINT_MANIFEST).is_file() {
        return Err(Failure::Validation(format!("no checkpoint at {}", a.ckpt.display())));
    }
    let (model, _, _) = Model::<f32>::load(&ckpt)?;
    let data = read_dataset(&a.data)?;
    if data.manifest.rig != model.rig {
        return Err(Failure::Validation("the checkpoint and the dataset use different camera rigs".into()));
    }
    let scenarios = a.scenarios.enumerate(&model.rig)?;
    let reports = run_scenarios(&model, &data.samples, &scenarios, &model.cfg.eval)?;
    let robust = write_reports(&a.out, &reports)?;
    if a.plots {
        write_plots(&a.out, &reports, &model.cfg.eval.thresholds)?;
    }
    let mut m = ExperimentManifest::new("eval", model.cfg.seed);
    m.dataset_checksum = Some(data.checksum.clone());
    m.config = Some(serde_json::json!({ "checkpoint": ckpt, "scenarios": scenarios.len(), "eval": model.cfg.eval }));
    m.write(&a.out)?;
    for r in &reports {
        println!("{:<16} mAP {:.4}", r.id, r.map);
    }
    match robust {
        Some(rb) => println!("mRR {:.2}%", rb.mrr),
        None => println!("mRR undefined (no complete-view scenario or zero complete mAP)"),
    }
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Outcome<()> {
    let base = load_config(a.config.as_deref())?;
    let data = read_dataset(&a.data)?;
    let rig = &data.manifest.rig;
    base.validate(rig)?;
    let held;
    let (train, eval): (&[_], &[_]) = match &a.eval_data {
        Some(p) => {
            held = read_dataset(p)?;
            if held.manifest.rig != *rig {
                return Err(Failure::Validation("training and evaluation datasets use different rigs".into()));
            }
            (&data.samples, &held.samples)
        }
        None => {
            let n = data.samples.len();
            if n < 2 {
                return Err(Failure::Validation("ablation needs at least two scenes to hold some out".into()));
            }
            data.samples.split_at(n - (n / 4).max(1))
        }
    };
    let members = a.suite.members(&base);
    let workers = workers(a.workers)?;
    let suite_data = SuiteData { train, checksum: &data.checksum, rig, eval, scenarios: a.suite.scenarios(), verbose: !a.quiet };
    let mut m = ExperimentManifest::new("ablate", base.seed);
    m.dataset_checksum = Some(data.checksum.clone());
    m.config = Some(serde_json::json!({
        "suite": a.suite.name(),
        "base": base,
        "members": members.iter().map(|m| (m.name.clone(), m.cfg.clone())).collect::<std::collections::BTreeMap<_, _>>(),
        "train_scenes": train.len(),
        "eval_scenes": eval.len(),
    }));
    m.write(&a.out)?;
    let rows = crate::suite::run_suite(a.suite, &members, &suite_data, &a.out, workers)?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!("{:<14} {:<9} {:>7} {:>7} {:>7} {:>7} {:>9}", "member", "setting", "AP_ped", "AP_div", "AP_bou", "mAP", "retention");
    for r in &rows {
        println!(
            "{:<14} {:<9} {:>7} {:>7} {:>7} {:>7.4} {:>9}",
            r.member,
            r.setting,
            fmt(r.ap_ped),
            fmt(r.ap_div),
            fmt(r.ap_bou),
            r.map,
            fmt(r.retention)
        );
    }
    Ok(())
}
