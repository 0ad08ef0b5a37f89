//! Run artifacts: the per-epoch CSV, the metrics JSON document, and
//! hand-rolled SVG learning curves.

use super::trainer::{EvalSummary, TrainReport};
use super::TrainError;
use std::fmt::Write as _;
use std::path::Path;

pub fn write_report_csv(report: &TrainReport, path: &Path) -> Result<(), TrainError> {
    let mut out = String::from("epoch,train_loss,val_f1,val_acc,val_sens,val_spec,tau\n");
    for r in &report.epochs {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_f1, r.val_acc, r.val_sens, r.val_spec, r.tau
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| TrainError::Io(path.display().to_string(), e))
}

/// Final metrics document; also the `evaluate` command's output schema.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricsDocument {
    pub seed: u64,
    pub tau: f64,
    pub clip: EvalSummary,
    pub recording: EvalSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen_params: Vec<String>,
}

impl MetricsDocument {
    pub fn from_report(report: &TrainReport) -> Self {
        MetricsDocument {
            seed: report.seed,
            tau: report.final_tau,
            clip: report.test_clip,
            recording: report.test_recording,
            frozen_params: report.frozen_params.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| TrainError::Io(path.display().to_string(), e))
    }
}

/// Minimal line chart: one polyline per series over the epoch axis.
pub fn write_line_chart_svg(
    path: &Path,
    title: &str,
    y_label: &str,
    series: &[(&str, Vec<f64>)],
) -> Result<(), TrainError> {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const ML: f64 = 60.0; // margins
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 50.0;
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, v) in series {
        for &y in v {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo).abs() < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x_of = |i: usize| ML + (W - ML - MR) * i as f64 / (n.max(2) - 1) as f64;
    let y_of = |v: f64| H - MB - (H - MT - MB) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#,
        W / 2.0
    )
    .unwrap();
    // Axes.
    writeln!(
        svg,
        r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{}" stroke="black"/>"#,
        H - MB
    )
    .unwrap();
    writeln!(
        svg,
        r#"<line x1="{ML}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - MB,
        W - MR,
        H - MB
    )
    .unwrap();
    // Y ticks.
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_of(v);
        writeln!(
            svg,
            r#"<line x1="{}" y1="{y}" x2="{ML}" y2="{y}" stroke="black"/><text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.3}</text>"#,
            ML - 5.0,
            ML - 8.0,
            y + 4.0
        )
        .unwrap();
    }
    // X ticks: first, middle, last epoch.
    for &i in &[0, n.saturating_sub(1) / 2, n.saturating_sub(1)] {
        let x = x_of(i);
        writeln!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            H - MB + 18.0,
            i + 1
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">epoch</text>"#,
        (ML + W - MR) / 2.0,
        H - 12.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{y_label}</text>"#,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    )
    .unwrap();
    for (si, (name, values)) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x_of(i), y_of(v)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{name}</text>"#,
            W - MR - 150.0,
            MT + 16.0 * si as f64
        )
        .unwrap();
    }
    writeln!(svg, "</svg>").unwrap();
    std::fs::write(path, svg).map_err(|e| TrainError::Io(path.display().to_string(), e))
}

/// Emit the standard pair of learning-curve plots next to the CSV.
pub fn write_curves(report: &TrainReport, out_dir: &Path) -> Result<(), TrainError> {
    let loss: Vec<f64> = report.epochs.iter().map(|r| r.train_loss).collect();
    write_line_chart_svg(
        &out_dir.join("loss.svg"),
        "Training loss",
        "loss",
        &[("train_loss", loss)],
    )?;
    let acc: Vec<f64> = report.epochs.iter().map(|r| r.val_acc).collect();
    let f1: Vec<f64> = report.epochs.iter().map(|r| r.val_f1).collect();
    write_line_chart_svg(
        &out_dir.join("accuracy.svg"),
        "Validation accuracy and F1",
        "metric",
        &[("val_acc", acc), ("val_f1", f1)],
    )
}

#[cfg(test)]
mod tests {
    use super::super::metrics::{ConfusionCounts, Metrics};
    use super::super::trainer::EpochRow;
    use super::*;

    fn fake_report() -> TrainReport {
        let counts = ConfusionCounts {
            true_pos: 3,
            false_pos: 1,
            false_neg: 0,
            true_neg: 6,
        };
        let summary = EvalSummary {
            counts,
            metrics: Metrics {
                f1: 0.857,
                accuracy: 0.9,
                sensitivity: 1.0,
                specificity: 0.857,
                precision: 0.75,
            },
        };
        TrainReport {
            seed: 1,
            epochs: (1..=3)
                .map(|e| EpochRow {
                    epoch: e,
                    train_loss: 1.0 / e as f64,
                    val_f1: 0.5 + 0.1 * e as f64,
                    val_acc: 0.6,
                    val_sens: 0.7,
                    val_spec: 0.8,
                    tau: 0.5,
                })
                .collect(),
            final_tau: 0.5,
            test_clip: summary,
            test_recording: summary,
            frozen_params: vec![],
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_report_csv(&fake_report(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "epoch,train_loss,val_f1,val_acc,val_sens,val_spec,tau");
    }

    #[test]
    fn metrics_document_round_trips() {
        let doc = MetricsDocument::from_report(&fake_report());
        let json = doc.to_json();
        let back: MetricsDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.tau, doc.tau);
        assert_eq!(back.clip.counts, doc.clip.counts);
        assert!(json.contains("\"f1\""));
        assert!(json.contains("\"sensitivity\""));
    }

    #[test]
    fn svg_curves_are_emitted() {
        let dir = tempfile::tempdir().unwrap();
        write_curves(&fake_report(), dir.path()).unwrap();
        let loss = std::fs::read_to_string(dir.path().join("loss.svg")).unwrap();
        assert!(loss.starts_with("<svg"));
        assert!(loss.contains("polyline"));
        assert!(dir.path().join("accuracy.svg").is_file());
    }
}
