//! Static SVG charts: precision-recall curves and per-scenario mAP bars.

use std::fmt::Write as _;
use std::path::Path;

use super::ScenarioReport;
use crate::binfmt;
use crate::error::Result;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 3] = ["#d62728", "#1f77b4", "#2ca02c"];

fn frame(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
"#,
        W / 2.0,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    s
}

fn sx(x: f64) -> f64 {
    PAD + x * (W - 2.0 * PAD)
}

fn sy(y: f64) -> f64 {
    H - PAD - y * (H - 2.0 * PAD)
}

/// Precision-recall curves of one scenario at threshold `tau`, one line per class.
pub fn pr_curves_svg(report: &ScenarioReport, tau: f64) -> String {
    let mut s = frame(&format!("{} precision-recall, tau {tau} m", report.id));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">recall</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">precision</text>"#, H / 2.0, H / 2.0);
    for (i, (class, t, curve)) in report.curves.iter().filter(|c| c.1 == tau).enumerate() {
        let color = COLORS[class.index() % COLORS.len()];
        let mut pts = format!("{},{}", sx(0.0), sy(curve.precision.first().copied().unwrap_or(0.0)));
        for (r, p) in curve.recall.iter().zip(&curve.precision) {
            let _ = write!(pts, " {:.2},{:.2}", sx(*r), sy(*p));
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{} AP {:.3} (tau {t})</text>"#,
            W - PAD - 150.0,
            PAD + 16.0 * i as f64,
            class.short(),
            curve.ap
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart of mAP per scenario.
pub fn map_bars_svg(reports: &[ScenarioReport]) -> String {
    let mut s = frame("mAP per scenario");
    let n = reports.len().max(1) as f64;
    let bw = (W - 2.0 * PAD) / n;
    for (i, r) in reports.iter().enumerate() {
        let x = PAD + i as f64 * bw;
        let y = sy(r.map.clamp(0.0, 1.0));
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0"><title>{} {:.4}</title></rect>"##,
            x + bw * 0.1,
            y,
            bw * 0.8,
            H - PAD - y,
            r.id,
            r.map
        );
    }
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{t}</text>"#, PAD - 5.0, sy(t) + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Write `pr_<scenario>.svg` (middle threshold) for every report and `map_bars.svg`.
pub fn write_plots(dir: &Path, reports: &[ScenarioReport], taus: &[f64]) -> Result<()> {
    let tau = taus.get(taus.len() / 2).copied().unwrap_or(1.0);
    for r in reports {
        binfmt::write_file(&dir.join(format!("pr_{}.svg", r.id)), pr_curves_svg(r, tau).as_bytes())?;
    }
    binfmt::write_file(&dir.join("map_bars.svg"), map_bars_svg(reports).as_bytes())
}
