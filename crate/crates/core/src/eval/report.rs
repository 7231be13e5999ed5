//! Robustness summaries and report files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioReport;
use crate::scene::ElementClass;
use crate::binfmt;
use crate::error::{io_err, json_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub k: usize,
    pub scenarios: usize,
    pub mean_map: f64,
    pub mean_retention: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    pub complete_map: f64,
    /// Mean retention over degraded scenarios, percent.
    pub mrr: f64,
    /// `(scenario id, scenario mAP / complete mAP)` for degraded scenarios.
    pub retention: Vec<(String, f64)>,
    pub per_k: Vec<KSummary>,
}

pub fn robustness_summary(reports: &[ScenarioReport]) -> Result<Robustness> {
    let complete = reports
        .iter()
        .find(|r| r.dropped.is_empty())
        .ok_or_else(|| Error::UndefinedSummary("no complete-view scenario".into()))?;
    if !(complete.map > 0.0) {
        return Err(Error::UndefinedSummary("complete-view mAP is zero".into()));
    }
    let degraded: Vec<&ScenarioReport> = reports.iter().filter(|r| !r.dropped.is_empty()).collect();
    let retention: Vec<(String, f64)> = degraded.iter().map(|r| (r.id.clone(), r.map / complete.map)).collect();
    let mrr = if retention.is_empty() {
        100.0
    } else {
        100.0 * retention.iter().map(|r| r.1).sum::<f64>() / retention.len() as f64
    };
    let max_k = reports.iter().map(|r| r.dropped.len()).max().unwrap_or(0);
    let per_k = (0..=max_k)
        .filter_map(|k| {
            let rs: Vec<&ScenarioReport> = reports.iter().filter(|r| r.dropped.len() == k).collect();
            (!rs.is_empty()).then(|| {
                let n = rs.len() as f64;
                let mean_map = rs.iter().map(|r| r.map).sum::<f64>() / n;
                KSummary { k, scenarios: rs.len(), mean_map, mean_retention: mean_map / complete.map }
            })
        })
        .collect();
    Ok(Robustness { complete_map: complete.map, mrr, retention, per_k })
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub class: String,
    pub tau: f64,
    #[serde(rename = "AP")]
    pub ap: Option<f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    /// Empty when the complete-view mAP is zero.
    pub retention: Option<f64>,
}

pub fn summary_rows(reports: &[ScenarioReport]) -> Vec<SummaryRow> {
    let complete = reports.iter().find(|r| r.dropped.is_empty()).map(|r| r.map).filter(|&m| m > 0.0);
    reports
        .iter()
        .flat_map(|r| {
            r.ap.iter().map(move |e| SummaryRow {
                scenario: r.id.clone(),
                class: e.class.clone(),
                tau: e.tau,
                ap: e.ap,
                map: r.map,
                retention: complete.map(|c| r.map / c),
            })
        })
        .collect()
}

/// One row of `table.csv`: per-class AP averaged over thresholds, one row
/// per scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    pub dropped: usize,
    #[serde(rename = "AP_ped")]
    pub ap_ped: Option<f64>,
    #[serde(rename = "AP_div")]
    pub ap_div: Option<f64>,
    #[serde(rename = "AP_bou")]
    pub ap_bou: Option<f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub retention: Option<f64>,
}

impl TableRow {
    pub fn class_aps(&self) -> [Option<f64>; 3] {
        [self.ap_ped, self.ap_div, self.ap_bou]
    }
}

pub fn table_rows(reports: &[ScenarioReport]) -> Vec<TableRow> {
    let complete = reports.iter().find(|r| r.dropped.is_empty()).map(|r| r.map).filter(|&m| m > 0.0);
    reports
        .iter()
        .map(|r| {
            let [ap_ped, ap_div, ap_bou] = ElementClass::ALL.map(|c| r.class_ap(c));
            TableRow {
                scenario: r.id.clone(),
                dropped: r.dropped.len(),
                ap_ped,
                ap_div,
                ap_bou,
                map: r.map,
                retention: complete.map(|c| r.map / c),
            }
        })
        .collect()
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) })?;
    binfmt::write_file(path, &bytes)
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })?;
    r.deserialize()
        .collect::<std::result::Result<Vec<R>, _>>()
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e) })
}

/// Write `scenario_<id>.json` per report, `summary.csv`, `table.csv`, and (when defined)
/// `robustness.json` into `dir`.
pub fn write_reports(dir: &Path, reports: &[ScenarioReport]) -> Result<Option<Robustness>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for r in reports {
        let path = dir.join(format!("scenario_{}.json", r.id));
        let text = serde_json::to_vec_pretty(r).map_err(json_err(&path))?;
        binfmt::write_file(&path, &text)?;
    }
    write_csv(&dir.join("summary.csv"), &summary_rows(reports))?;
    write_csv(&dir.join("table.csv"), &table_rows(reports))?;
    let robust = robustness_summary(reports).ok();
    if let Some(rb) = &robust {
        let path = dir.join("robustness.json");
        let text = serde_json::to_vec_pretty(rb).map_err(json_err(&path))?;
        binfmt::write_file(&path, &text)?;
    }
    Ok(robust)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(id: &str, dropped: Vec<usize>, map: f64) -> ScenarioReport {
        ScenarioReport {
            id: id.into(),
            dropped,
            dropped_names: vec![],
            samples: 1,
            ap: vec![super::super::ApEntry { class: "ped".into(), tau: 1.0, ap: Some(map) }],
            map,
            excluded_classes: vec![],
            curves: vec![],
        }
    }

    #[test]
    fn mrr_arithmetic() {
        let rs = vec![report("complete", vec![], 0.4), report("a", vec![0], 0.2), report("b", vec![1], 0.4)];
        let s = robustness_summary(&rs).unwrap();
        assert!((s.mrr - 75.0).abs() < 1e-12);
        let same = vec![report("complete", vec![], 0.4), report("a", vec![0], 0.4)];
        assert_eq!(robustness_summary(&same).unwrap().mrr, 100.0);
    }

    #[test]
    fn zero_complete_is_undefined() {
        let rs = vec![report("complete", vec![], 0.0), report("a", vec![0], 0.2)];
        assert!(matches!(robustness_summary(&rs), Err(Error::UndefinedSummary(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rs = vec![report("complete", vec![], 0.4), report("a", vec![0], 0.1 + 0.2)];
        write_reports(dir.path(), &rs).unwrap();
        let rows: Vec<SummaryRow> = read_csv(&dir.path().join("summary.csv")).unwrap();
        assert_eq!(rows, summary_rows(&rs));
    }
}
