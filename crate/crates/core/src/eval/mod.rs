//! Evaluation: Chamfer-thresholded AP over missing-view scenarios and
//! robustness summaries.

pub mod metrics;
pub mod plot;
pub mod report;
pub mod scenario;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::head::DecodedMap;
use crate::scene::polyline::resample;
use crate::scene::{ElementClass, Point, Range, RenderedViewSet, Sample};

pub use metrics::{average_precision, chamfer_distance, ApCurve, ScoredCandidate};
pub use report::{robustness_summary, table_rows, write_reports, KSummary, Robustness, SummaryRow, TableRow};
pub use scenario::{Scenario, ScenarioSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Chamfer thresholds, meters, strictly increasing.
    pub thresholds: Vec<f64>,
    pub resample: usize,
    /// Minimum class probability for a (query, class) pair to be emitted.
    pub score_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { thresholds: vec![0.5, 1.0, 1.5], resample: 100, score_threshold: 0.05 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty()
            || self.thresholds[0] <= 0.0
            || self.thresholds.windows(2).any(|w| w[1] <= w[0])
        {
            return contract("evaluation thresholds must be positive and strictly increasing");
        }
        if self.resample < 2 {
            return contract("Chamfer resampling needs at least two points");
        }
        Ok(())
    }
}

/// Something that maps one sample's images to map predictions under several
/// view-drop scenarios.
pub trait Predictor {
    /// One prediction per entry of `drops`, in order. `sample` is the
    /// dataset index, used to derive any stochastic state.
    fn predict(&self, sample: usize, images: &RenderedViewSet, drops: &[Vec<usize>]) -> Result<Vec<DecodedMap>>;

    /// Ego range used to denormalize predicted points.
    fn range(&self) -> Range;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub class: String,
    pub tau: f64,
    /// `None` when the class has no ground truth in the split.
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub id: String,
    pub dropped: Vec<usize>,
    pub dropped_names: Vec<String>,
    pub samples: usize,
    pub ap: Vec<ApEntry>,
    pub map: f64,
    pub excluded_classes: Vec<String>,
    #[serde(skip)]
    pub curves: Vec<(ElementClass, f64, ApCurve)>,
}

impl ScenarioReport {
    /// Mean AP of `class` over all thresholds.
    pub fn class_ap(&self, class: ElementClass) -> Option<f64> {
        let v: Vec<f64> = self.ap.iter().filter(|e| e.class == class.short()).filter_map(|e| e.ap).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

struct ClassGt {
    /// Resampled points per GT, grouped by sample.
    by_sample: Vec<Vec<(usize, Vec<Point>)>>,
    count: usize,
}

fn class_gts(samples: &[Sample], cfg: &EvalConfig) -> Vec<ClassGt> {
    ElementClass::ALL
        .iter()
        .map(|&c| {
            let mut count = 0;
            let by_sample = samples
                .iter()
                .map(|s| {
                    s.scene
                        .elements
                        .iter()
                        .filter(|e| e.class == c && e.points.len() >= 2)
                        .map(|e| {
                            count += 1;
                            (count - 1, resample(&e.points, cfg.resample))
                        })
                        .collect()
                })
                .collect();
            ClassGt { by_sample, count }
        })
        .collect()
}

/// Evaluate `predictor` on every scenario. Each sample is predicted once for
/// all scenarios, so shared work (e.g. per-view encoding) can be reused.
pub fn run_scenarios<P: Predictor>(
    predictor: &P,
    samples: &[Sample],
    scenarios: &[Scenario],
    cfg: &EvalConfig,
) -> Result<Vec<ScenarioReport>> {
    cfg.validate()?;
    let range = predictor.range();
    let gts = class_gts(samples, cfg);
    let drops: Vec<Vec<usize>> = scenarios.iter().map(|s| s.dropped.clone()).collect();
    // candidates[scenario][class] = (score, sample, query, distances)
    let mut cands: Vec<Vec<Vec<(f64, usize, usize, ScoredCandidate)>>> =
        vec![vec![Vec::new(); ElementClass::ALL.len()]; scenarios.len()];
    for (si, sample) in samples.iter().enumerate() {
        let preds = predictor.predict(si, &sample.images, &drops)?;
        if preds.len() != scenarios.len() {
            return contract("predictor returned the wrong number of scenario predictions");
        }
        for (sc, pred) in preds.iter().enumerate() {
            for (q, probs) in pred.probs.iter().enumerate() {
                let mut pts_m: Option<Vec<Point>> = None;
                for c in ElementClass::ALL {
                    let score = probs[c.index()];
                    if score < cfg.score_threshold {
                        continue;
                    }
                    let pts = pts_m.get_or_insert_with(|| resample(&pred.points_m(q, &range), cfg.resample));
                    let distances = gts[c.index()].by_sample[si]
                        .iter()
                        .map(|(id, gp)| (*id, metrics::chamfer_resampled(pts, gp)))
                        .collect();
                    cands[sc][c.index()].push((score, si, q, ScoredCandidate { score, distances }));
                }
            }
        }
    }
    let mut reports = Vec::with_capacity(scenarios.len());
    for (sc, scenario) in scenarios.iter().enumerate() {
        let mut ap = Vec::new();
        let mut curves = Vec::new();
        let mut excluded = Vec::new();
        for c in ElementClass::ALL {
            let list = &mut cands[sc][c.index()];
            list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let sorted: Vec<ScoredCandidate> = list.iter().map(|x| x.3.clone()).collect();
            let n_gt = gts[c.index()].count;
            if n_gt == 0 {
                excluded.push(c.short().to_string());
            }
            for &tau in &cfg.thresholds {
                let r = average_precision(&sorted, n_gt, tau);
                ap.push(ApEntry { class: c.short().to_string(), tau, ap: r.as_ref().map(|r| r.ap) });
                if let Some(r) = r {
                    curves.push((c, tau, r));
                }
            }
        }
        let vals: Vec<f64> = ap.iter().filter_map(|e| e.ap).collect();
        let map = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
        reports.push(ScenarioReport {
            id: scenario.id.clone(),
            dropped: scenario.dropped.clone(),
            dropped_names: scenario.names.clone(),
            samples: samples.len(),
            ap,
            map,
            excluded_classes: excluded,
            curves,
        });
    }
    Ok(reports)
}
