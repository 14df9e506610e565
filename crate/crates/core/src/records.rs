//! Output artifacts: analysis records (JSON), coverage tables (CSV), QQ data
//! and SVG line charts.
//!
//! An analysis record file is a JSON array of flat objects, one per burn-in
//! length. Field names are stable and documented on [`AnalysisRecord`].

use crate::simulation::{CoverageReport, Method, MethodSummary, Model};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: malformed record: {reason}")]
    Malformed { path: String, reason: String },
    #[error("csv error writing {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RecordError + '_ {
    move |source| RecordError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A mediator label and how often it was selected at the checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedMediator {
    pub label: String,
    /// 1-based column index among the mediators.
    pub index: usize,
    pub count: usize,
}

/// Settings that, together with the seed, reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub data: String,
    pub time: String,
    pub status: String,
    pub exposure: String,
    pub mediators: String,
    pub confounders: Vec<String>,
    pub log_time: bool,
    pub standardize: String,
    pub nuisance_scope: String,
    pub risk_set_moments: String,
    pub extended: bool,
}

/// One analysis result.
///
/// | field | meaning |
/// |---|---|
/// | `method` | `stabilized`, `bonferroni`, `naive` or `oracle` |
/// | `qn` | burn-in length (stabilized only) |
/// | `orderings` | number of random orderings `M` (stabilized only) |
/// | `alpha` | nominal level before any correction |
/// | `ci_alpha` | level actually used for `ci_low`/`ci_high` |
/// | `estimate`, `se` | point estimate and standard error |
/// | `p_value` | p-value of the reported result (Bonferroni-corrected for `bonferroni`) |
/// | `combined_p` | `min(1, M·min p)` across orderings; equals `p_value` otherwise |
/// | `selected` | mediator labels with selection counts |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub method: String,
    pub qn: Option<usize>,
    pub orderings: usize,
    pub alpha: f64,
    pub ci_alpha: f64,
    pub n: usize,
    pub p: usize,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub combined_p: f64,
    pub failed_orderings: usize,
    pub selected: Vec<SelectedMediator>,
    pub seed: u64,
    pub version: String,
    pub config: ConfigEcho,
}

pub fn records_to_json(records: &[AnalysisRecord]) -> String {
    let mut s = serde_json::to_string_pretty(records).expect("records serialize");
    s.push('\n');
    s
}

pub fn write_records(path: &Path, records: &[AnalysisRecord]) -> Result<(), RecordError> {
    std::fs::write(path, records_to_json(records)).map_err(io_err(path))
}

/// Read a record file: a JSON array of records or a single record.
pub fn read_records(path: &Path) -> Result<Vec<AnalysisRecord>, RecordError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_records(&text).map_err(|reason| RecordError::Malformed {
        path: path.display().to_string(),
        reason,
    })
}

pub fn parse_records(text: &str) -> Result<Vec<AnalysisRecord>, String> {
    match serde_json::from_str::<Vec<AnalysisRecord>>(text) {
        Ok(v) => Ok(v),
        Err(e) => serde_json::from_str::<AnalysisRecord>(text)
            .map(|r| vec![r])
            .map_err(|_| e.to_string()),
    }
}

fn fmt_num(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

/// Table with one row per record, sorted by method then burn-in length.
pub fn analysis_table(records: &[AnalysisRecord]) -> String {
    let mut rows: Vec<&AnalysisRecord> = records.iter().collect();
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.qn.cmp(&b.qn)));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<11} {:>6} {:>10} {:>10} {:>25} {:>10} {:>10}  selected",
        "method", "qn", "Est.", "S.E.", "C.I.", "P-Value", "Comb. P"
    );
    for r in rows {
        let qn = r.qn.map_or("-".to_string(), |q| q.to_string());
        let ci = format!("({}, {})", fmt_num(r.ci_low), fmt_num(r.ci_high));
        let sel: Vec<String> = r.selected.iter().map(|s| format!("{}x{}", s.label, s.count)).collect();
        let _ = writeln!(
            out,
            "{:<11} {:>6} {:>10} {:>10} {:>25} {:>10} {:>10}  {}",
            r.method,
            qn,
            fmt_num(r.estimate),
            fmt_num(r.se),
            ci,
            fmt_num(r.p_value),
            fmt_num(r.combined_p),
            sel.join(" ")
        );
    }
    out
}

/// One row of the coverage CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub model: Model,
    pub n: usize,
    pub p: usize,
    pub qn: usize,
    pub alpha: f64,
    pub true_psi: f64,
    pub method: Method,
    pub reps: usize,
    pub failures: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_estimate: f64,
    pub rejection_rate: f64,
}

impl CoverageRow {
    fn new(r: &CoverageReport, s: &MethodSummary) -> Self {
        Self {
            model: r.model,
            n: r.n,
            p: s.p,
            qn: r.q_n,
            alpha: r.alpha,
            true_psi: r.true_psi,
            method: s.method,
            reps: s.reps,
            failures: s.failures,
            coverage: s.coverage,
            mean_width: s.mean_width,
            mean_estimate: s.mean_estimate,
            rejection_rate: s.rejection_rate,
        }
    }
}

pub fn coverage_rows(reports: &[CoverageReport]) -> Vec<CoverageRow> {
    reports
        .iter()
        .flat_map(|r| r.summaries.iter().map(move |s| CoverageRow::new(r, s)))
        .collect()
}

/// Coverage CSV: one row per method and `p`.
pub fn write_coverage_csv(path: &Path, reports: &[CoverageReport]) -> Result<(), RecordError> {
    let csv_err = |source| RecordError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in coverage_rows(reports) {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_coverage_csv(path: &Path) -> Result<Vec<CoverageRow>, RecordError> {
    let malformed = |reason: String| RecordError::Malformed {
        path: path.display().to_string(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
    r.deserialize()
        .collect::<Result<Vec<CoverageRow>, _>>()
        .map_err(|e| malformed(e.to_string()))
}

/// QQ data: sorted standardized statistics against normal quantiles.
pub fn write_qq_csv(path: &Path, reports: &[CoverageReport]) -> Result<(), RecordError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    let mut body = String::from("model,p,method,theoretical,sample\n");
    for r in reports {
        for s in &r.summaries {
            for (t, v) in r.qq_points(s.method) {
                let _ = writeln!(body, "{},{},{},{t},{v}", r.model, r.p, s.method);
            }
        }
    }
    f.write_all(body.as_bytes()).map_err(io_err(path))
}

pub fn coverage_table(rows: &[CoverageRow]) -> String {
    let mut rows: Vec<&CoverageRow> = rows.iter().collect();
    rows.sort_by(|a, b| {
        (a.model.to_string(), a.method.to_string(), a.p).cmp(&(b.model.to_string(), b.method.to_string(), b.p))
    });
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<5} {:<11} {:>8} {:>6} {:>9} {:>10} {:>10} {:>9} {:>6}",
        "model", "method", "p", "reps", "coverage", "width", "mean est", "reject", "fail"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<5} {:<11} {:>8} {:>6} {:>9.3} {:>10.4} {:>10.4} {:>9.3} {:>6}",
            r.model.to_string(),
            r.method.to_string(),
            r.p,
            r.reps,
            r.coverage,
            r.mean_width,
            r.mean_estimate,
            r.rejection_rate,
            r.failures
        );
    }
    out
}

/// A named series of `(x, y)` points.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart built from `polyline` and `text` elements only.
pub fn svg_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    reference: Option<Reference>,
    log_x: bool,
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 150.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), y)))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if let Some(Reference::Horizontal(h)) = reference {
        y0 = y0.min(h);
        y1 = y1.max(h);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let axis = format!(
        "{},{} {},{} {},{}",
        px(x0),
        py(y1),
        px(x0),
        py(y0),
        px(x1),
        py(y0)
    );
    let _ = writeln!(s, r#"<polyline points="{axis}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let xl = if log_x { format!("{:.3}", 10f64.powf(fx)) } else { format!("{fx:.3}") };
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xl}</text>"#, px(fx), H - B + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.3}</text>"#, L - 6.0, py(fy) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px((x0 + x1) / 2.0), H - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0,
        escape(y_label)
    );
    match reference {
        Some(Reference::Horizontal(h)) => {
            let _ = writeln!(
                s,
                r#"<polyline points="{:.1},{:.1} {:.1},{:.1}" fill="none" stroke="gray" stroke-dasharray="5,4"/>"#,
                px(x0),
                py(h),
                px(x1),
                py(h)
            );
        }
        Some(Reference::Identity) => {
            let lo = x0.max(y0);
            let hi = x1.min(y1);
            let _ = writeln!(
                s,
                r#"<polyline points="{:.1},{:.1} {:.1},{:.1}" fill="none" stroke="gray" stroke-dasharray="5,4"/>"#,
                px(lo),
                py(lo),
                px(hi),
                py(hi)
            );
        }
        None => {}
    }
    for (i, ser) in series.iter().enumerate() {
        let c = colors[i % colors.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| tx(*x).is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", px(tx(x)), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, pts.join(" "));
        let ly = T + 16.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<polyline points="{:.1},{ly:.1} {:.1},{ly:.1}" stroke="{c}" stroke-width="3"/>"#,
            W - R + 10.0,
            W - R + 30.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, W - R + 36.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy)]
pub enum Reference {
    Horizontal(f64),
    Identity,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Coverage-vs-p, width-vs-p and QQ panels for a set of coverage rows and reports.
pub fn write_coverage_svgs(dir: &Path, rows: &[CoverageRow], reports: &[CoverageReport]) -> Result<Vec<String>, RecordError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut keys: Vec<(String, String)> = rows.iter().map(|r| (r.model.to_string(), r.method.to_string())).collect();
    keys.sort();
    keys.dedup();
    let mut models: Vec<String> = keys.iter().map(|k| k.0.clone()).collect();
    models.dedup();
    for model in &models {
        let series_for = |value: &dyn Fn(&CoverageRow) -> f64| -> Vec<Series> {
            keys.iter()
                .filter(|k| &k.0 == model)
                .map(|(_, method)| {
                    let mut points: Vec<(f64, f64)> = rows
                        .iter()
                        .filter(|r| &r.model.to_string() == model && &r.method.to_string() == method)
                        .map(|r| (r.p as f64, value(r)))
                        .collect();
                    points.sort_by(|a, b| a.0.total_cmp(&b.0));
                    Series {
                        name: method.clone(),
                        points,
                    }
                })
                .collect()
        };
        let nominal = rows.iter().find(|r| &r.model.to_string() == model).map(|r| 1.0 - r.alpha);
        let cov = svg_line_chart(
            &format!("Coverage, {model}"),
            "p",
            "empirical coverage",
            &series_for(&|r| r.coverage),
            nominal.map(Reference::Horizontal),
            true,
        );
        let width = svg_line_chart(
            &format!("Mean CI width, {model}"),
            "p",
            "width",
            &series_for(&|r| r.mean_width),
            None,
            true,
        );
        for (name, body) in [(format!("coverage_{model}.svg"), cov), (format!("width_{model}.svg"), width)] {
            let path = dir.join(&name);
            std::fs::write(&path, body).map_err(io_err(&path))?;
            written.push(path.display().to_string());
        }
    }
    for r in reports {
        let series: Vec<Series> = r
            .summaries
            .iter()
            .map(|s| Series {
                name: s.method.to_string(),
                points: r.qq_points(s.method),
            })
            .collect();
        let body = svg_line_chart(
            &format!("Normal QQ, {} p={}", r.model, r.p),
            "N(0,1) quantile",
            "standardized statistic",
            &series,
            Some(Reference::Identity),
            false,
        );
        let path = dir.join(format!("qq_{}_p{}.svg", r.model, r.p));
        std::fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path.display().to_string());
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(qn: usize) -> AnalysisRecord {
        AnalysisRecord {
            method: "stabilized".into(),
            qn: Some(qn),
            orderings: 3,
            alpha: 0.1,
            ci_alpha: 0.1 / 3.0,
            n: 100,
            p: 4,
            estimate: 0.123_456_789_012_345_67,
            se: 0.05,
            ci_low: 0.01,
            ci_high: 0.3,
            p_value: 0.013,
            combined_p: 0.039,
            failed_orderings: 0,
            selected: vec![SelectedMediator {
                label: "cg1".into(),
                index: 1,
                count: 5,
            }],
            seed: 7,
            version: "0.1.0".into(),
            config: ConfigEcho {
                data: "x.csv".into(),
                time: "time".into(),
                status: "status".into(),
                exposure: "smoke".into(),
                mediators: "cg".into(),
                confounders: vec![],
                log_time: false,
                standardize: "normal_score".into(),
                nuisance_scope: "appendix".into(),
                risk_set_moments: "masked".into(),
                extended: false,
            },
        }
    }

    #[test]
    fn records_round_trip() {
        let recs = vec![record(80), record(60)];
        let text = records_to_json(&recs);
        assert_eq!(parse_records(&text).unwrap(), recs);
        let single = serde_json::to_string(&recs[0]).unwrap();
        assert_eq!(parse_records(&single).unwrap(), vec![recs[0].clone()]);
        assert!(parse_records("{\"method\": 3}").is_err());
    }

    #[test]
    fn table_sorted_by_qn() {
        let t = analysis_table(&[record(80), record(60)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains(" 60 "));
        assert!(lines[2].contains(" 80 "));
    }

    #[test]
    fn svg_uses_only_polyline_and_text() {
        let s = svg_line_chart(
            "t",
            "x",
            "y",
            &[Series {
                name: "a".into(),
                points: vec![(100.0, 0.9), (1000.0, 0.95)],
            }],
            Some(Reference::Horizontal(0.9)),
            true,
        );
        for tag in s.split('<').skip(1) {
            let name: String = tag.chars().take_while(|c| c.is_alphanumeric() || *c == '/').collect();
            assert!(["svg", "/svg", "polyline", "text", "/text"].contains(&name.as_str()), "{name}");
        }
    }
}
