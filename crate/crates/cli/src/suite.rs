//! Ablation suites: which configs to train and how to tabulate them.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use vecmap::correction::CorrectionKind;
use vecmap::encoder::MaskMode;
use vecmap::eval::report::write_csv;
use vecmap::eval::{run_scenarios, write_reports, ScenarioReport, ScenarioSet};
use vecmap::recon::PvrKind;
use vecmap::scene::{CameraRig, ElementClass, Sample};
use vecmap::train::{train_loop, LoopOptions, TrainConfig};

use crate::{Failure, Outcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    PvrVariants,
    DistLoss,
    Sigma,
    Lambda,
    MissingCount,
}

#[derive(Clone, Debug)]
pub struct Member {
    pub name: String,
    pub cfg: TrainConfig,
}

/// `base` with masking, reconstruction and correction switched off; the
/// optimizer settings are kept so the comparison is like for like.
pub fn baseline_of(base: &TrainConfig) -> TrainConfig {
    let mut c = base.clone();
    c.mask = MaskMode::Complete;
    c.lambda_rec = 0.0;
    c.recon.kind = PvrKind::None;
    c.correction.weight = 0.0;
    c
}

const LAMBDAS: [(f64, f64); 6] = [(0.0, 0.0), (0.05, 0.0), (0.0, 5.0), (0.05, 5.0), (0.5, 5.0), (0.05, 0.5)];

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Self::PvrVariants => "pvr-variants",
            Self::DistLoss => "dist-loss",
            Self::Sigma => "sigma",
            Self::Lambda => "lambda",
            Self::MissingCount => "missing-count",
        }
    }

    pub fn members(self, base: &TrainConfig) -> Vec<Member> {
        let with = |name: String, f: &dyn Fn(&mut TrainConfig)| {
            let mut cfg = base.clone();
            f(&mut cfg);
            Member { name, cfg }
        };
        match self {
            Self::PvrVariants => PvrKind::ALL
                .iter()
                .map(|&k| with(k.name().into(), &|c| c.recon.kind = k))
                .collect(),
            Self::DistLoss => std::iter::once(with("none".into(), &|c| c.correction.weight = 0.0))
                .chain([CorrectionKind::Kl, CorrectionKind::L1, CorrectionKind::L2].iter().map(|&k| {
                    with(k.name().into(), &|c| {
                        c.correction.kind = k;
                        if c.correction.weight == 0.0 {
                            c.correction.weight = TrainConfig::default().correction.weight;
                        }
                    })
                }))
                .collect(),
            Self::Sigma => (1..=5).map(|s| with(format!("sigma{s}"), &|c| c.recon.sigma = s as f64)).collect(),
            Self::Lambda => LAMBDAS
                .iter()
                .map(|&(r, k)| {
                    with(format!("rec{r}_cor{k}"), &|c| {
                        c.lambda_rec = r;
                        c.correction.weight = k;
                    })
                })
                .collect(),
            Self::MissingCount => {
                vec![Member { name: "baseline".into(), cfg: baseline_of(base) }, Member { name: "full".into(), cfg: base.clone() }]
            }
        }
    }

    pub fn scenarios(self) -> ScenarioSet {
        match self {
            Self::MissingCount => ScenarioSet::All,
            _ => ScenarioSet::Singles,
        }
    }
}

/// One row of `comparison.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub member: String,
    /// `complete`, `missing` (mean over degraded scenarios) or `k=<n>`.
    pub setting: String,
    #[serde(rename = "AP_ped")]
    pub ap_ped: Option<f64>,
    #[serde(rename = "AP_div")]
    pub ap_div: Option<f64>,
    #[serde(rename = "AP_bou")]
    pub ap_bou: Option<f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    /// Setting mAP over complete-view mAP.
    pub retention: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn row(member: &str, setting: String, reports: &[&ScenarioReport], complete: f64) -> ComparisonRow {
    let [ap_ped, ap_div, ap_bou] = ElementClass::ALL.map(|c| mean(reports.iter().filter_map(|r| r.class_ap(c))));
    let map = mean(reports.iter().map(|r| r.map)).unwrap_or(0.0);
    ComparisonRow {
        member: member.into(),
        setting,
        ap_ped,
        ap_div,
        ap_bou,
        map,
        retention: (complete > 0.0).then(|| map / complete),
    }
}

/// Complete-view row, then either one row per drop count (`by_k`) or one
/// row averaging every degraded scenario.
pub fn comparison_rows(member: &str, reports: &[ScenarioReport], by_k: bool) -> Vec<ComparisonRow> {
    let complete: Vec<&ScenarioReport> = reports.iter().filter(|r| r.dropped.is_empty()).collect();
    let c_map = complete.first().map(|r| r.map).unwrap_or(0.0);
    let mut rows = vec![row(member, "complete".into(), &complete, c_map)];
    let max_k = reports.iter().map(|r| r.dropped.len()).max().unwrap_or(0);
    if by_k {
        for k in 1..=max_k {
            let at: Vec<&ScenarioReport> = reports.iter().filter(|r| r.dropped.len() == k).collect();
            rows.push(row(member, format!("k={k}"), &at, c_map));
        }
    } else if max_k > 0 {
        let degraded: Vec<&ScenarioReport> = reports.iter().filter(|r| !r.dropped.is_empty()).collect();
        rows.push(row(member, "missing".into(), &degraded, c_map));
    }
    rows
}

/// Inputs shared by every member of a suite.
pub struct SuiteData<'a> {
    pub train: &'a [Sample],
    pub checksum: &'a str,
    pub rig: &'a CameraRig,
    pub eval: &'a [Sample],
    pub scenarios: ScenarioSet,
    pub verbose: bool,
}

/// Train (resuming if a checkpoint exists) and evaluate one member under
/// `dir`, leaving `checkpoint/`, `curves.jsonl` and `reports/` there.
pub fn run_member(member: &Member, data: &SuiteData, dir: &Path) -> Outcome<Vec<ScenarioReport>> {
    member.cfg.validate(data.rig)?;
    let opts = LoopOptions { resume: true, verbose: data.verbose, ..Default::default() };
    let out = train_loop::<f32>(data.train, data.checksum, data.rig, &member.cfg, dir, &opts)?;
    let scenarios = data.scenarios.enumerate(data.rig)?;
    let reports = run_scenarios(&out.model, data.eval, &scenarios, &member.cfg.eval)?;
    write_reports(&dir.join("reports"), &reports)?;
    Ok(reports)
}

/// Apply `f` to every item on up to `workers` threads; results keep input
/// order, so the merge does not depend on scheduling.
pub fn parallel_map<I: Sync, O: Send>(items: &[I], workers: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<O>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let o = f(&items[i]);
                slots.lock().expect("no worker panicked")[i] = Some(o);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|o| o.expect("every slot filled")).collect()
}

/// Run every member and write `<out>/comparison.csv`.
pub fn run_suite(suite: Suite, members: &[Member], data: &SuiteData, out: &Path, workers: usize) -> Outcome<Vec<ComparisonRow>> {
    let results = parallel_map(members, workers, |m| run_member(m, data, &out.join(&m.name)));
    let mut rows = Vec::new();
    for (m, r) in members.iter().zip(results) {
        let reports = r.map_err(|e| match e {
            Failure::Validation(s) => Failure::Validation(format!("{}: {s}", m.name)),
            Failure::Runtime(s) => Failure::Runtime(format!("{}: {s}", m.name)),
            other => other,
        })?;
        rows.extend(comparison_rows(&m.name, &reports, suite == Suite::MissingCount));
    }
    write_csv(&out.join("comparison.csv"), &rows)?;
    Ok(rows)
}
