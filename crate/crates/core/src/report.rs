//! Human-readable summary of a run directory.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::trainer::{EvalDocument, LabeledReport};

/// `(baseline − ours) / baseline`, as a percentage.
pub fn improvement(baseline: f64, ours: f64) -> Option<f64> {
    (baseline != 0.0 && baseline.is_finite() && ours.is_finite()).then(|| (baseline - ours) / baseline * 100.0)
}

pub fn format_improvement(baseline: f64, ours: f64) -> String {
    match improvement(baseline, ours) {
        // avoid printing -0.0%
        Some(p) => format!("{:.1}%", if p == 0.0 { 0.0 } else { p }),
        None => "n/a".into(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn row(r: &LabeledReport) -> String {
    let e = &r.report;
    format!(
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10}",
        r.label,
        cell(e.nrmse),
        cell(e.pdp),
        cell(e.pearson),
        cell(Some(e.jsd)),
        cell(Some(e.mae)),
        cell(e.group_mae[0]),
        cell(e.group_mae[1]),
        cell(e.group_mae[2]),
        cell(e.group_mae_variance),
    )
}

fn comparison(out: &mut String, base: &EvalReport, ours: &EvalReport) {
    let pairs: [(&str, Option<f64>, Option<f64>); 4] = [
        ("NRMSE", base.nrmse, ours.nrmse),
        ("PDP", base.pdp, ours.pdp),
        ("MAE", Some(base.mae), Some(ours.mae)),
        ("group MAE variance", base.group_mae_variance, ours.group_mae_variance),
    ];
    for (name, b, o) in pairs {
        let text = match (b, o) {
            (Some(b), Some(o)) => format_improvement(b, o),
            _ => "n/a".into(),
        };
        let _ = writeln!(out, "  {name}: {text} lower than baseline");
    }
}

/// Renders an evaluation document: one metrics row per model, then the
/// improvement of the selected model over the ζ = 0 baseline if present.
pub fn render(doc: &EvalDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mode: {}  split: {:?}", doc.mode, doc.split);
    let _ = writeln!(
        out,
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "model", "NRMSE", "PDP", "Corr.", "JSD", "MAE", "MAE a1", "MAE a2", "MAE a3", "MAE var"
    );
    if let Some(b) = &doc.baseline {
        let _ = writeln!(out, "{}", row(b));
    }
    let _ = writeln!(out, "{}", row(&doc.model));
    if let Some(b) = &doc.baseline {
        let _ = writeln!(out, "\nimprovement of {} over {}:", doc.model.label, b.label);
        comparison(&mut out, &b.report, &doc.model.report);
    }
    out
}

pub fn load(run_dir: &Path) -> Result<EvalDocument> {
    let path = run_dir.join("eval_report.json");
    if !path.is_file() {
        return Err(Error::MissingArtifact(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

pub fn report(run_dir: &Path) -> Result<String> {
    load(run_dir).map(|d| render(&d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_arithmetic() {
        assert_eq!(format_improvement(0.102, 0.076), "25.5%");
        assert_eq!(format_improvement(0.3, 0.3), "0.0%");
        assert_eq!(format_improvement(0.0, 0.1), "n/a");
        assert_eq!(format_improvement(0.1, 0.2), "-100.0%");
    }

    #[test]
    fn missing_report_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = report(dir.path()).unwrap_err();
        assert!(err.to_string().contains("eval_report.json"), "{err}");
    }
}
