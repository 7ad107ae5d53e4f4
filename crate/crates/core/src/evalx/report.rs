use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, MetricsReport};
use crate::error::{Error, Result};

/// One model/strategy line of the results table. A failed cell keeps its
/// error instead of metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub strategy: String,
    #[serde(default)]
    pub metrics: BTreeMap<String, MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RenderedReport {
    pub text_path: PathBuf,
    pub json_path: PathBuf,
    pub text: String,
}

const TASK_COLUMNS: [&str; 2] = ["sentiment", "topic"];

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn render_table(rows: &[ReportRow]) -> String {
    let mut header = vec!["Model".to_string(), "Strategy".to_string()];
    for task in TASK_COLUMNS {
        let t = task[..1].to_uppercase() + &task[1..];
        header.extend([format!("{t} Acc"), format!("{t} mF1"), format!("{t} wF1")]);
    }
    let mut lines: Vec<Vec<String>> = vec![header];
    for row in rows {
        let mut cells = vec![row.model.clone(), row.strategy.clone()];
        for task in TASK_COLUMNS {
            match (&row.failure, row.metrics.get(task)) {
                (None, Some(m)) => cells.extend([pct(m.accuracy), pct(m.macro_f1), pct(m.weighted_f1)]),
                (Some(_), _) => cells.extend(["failed".into(), "-".into(), "-".into()]),
                (None, None) => cells.extend(["-".into(), "-".into(), "-".into()]),
            }
        }
        lines.push(cells);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, &w))| if c < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    for row in rows {
        if let Some(f) = &row.failure {
            let _ = writeln!(out, "! {} / {}: {f}", row.model, row.strategy);
        }
    }
    out
}

fn render_matrix(m: &ConfusionMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Confusion matrix: {} (rows = gold, columns = predicted)", m.task);
    let show_abstain = m.abstentions.iter().any(|&a| a > 0);
    let label_w = m.labels.iter().map(|l| l.chars().count()).max().unwrap_or(0).max(4);
    let mut header: Vec<String> = (0..m.num_classes()).map(|c| c.to_string()).collect();
    if show_abstain {
        header.push("abstain".into());
    }
    let cell_w = m
        .counts
        .iter()
        .flatten()
        .chain(&m.abstentions)
        .map(|c| c.to_string().len())
        .chain(header.iter().map(String::len))
        .max()
        .unwrap_or(1)
        .max(6);
    let _ = write!(out, "{:label_w$}   ", "");
    for h in &header {
        let _ = write!(out, " {h:>cell_w$}");
    }
    out.push('\n');
    let normalized = m.row_normalized();
    for (c, row) in m.counts.iter().enumerate() {
        let _ = write!(out, "{:<label_w$} {c:>2}", m.labels[c]);
        for v in row {
            let _ = write!(out, " {v:>cell_w$}");
        }
        if show_abstain {
            let _ = write!(out, " {:>cell_w$}", m.abstentions[c]);
        }
        out.push('\n');
    }
    let _ = writeln!(out, "Row-normalized:");
    for (c, row) in normalized.iter().enumerate() {
        let _ = write!(out, "{:<label_w$} {c:>2}", m.labels[c]);
        for v in row {
            let _ = write!(out, " {:>cell_w$}", format!("{v:.3}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    rows: &'a [ReportRow],
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    confusion_matrices: &'a [ConfusionMatrix],
}

/// Writes `report.txt` (aligned table and labeled grids) and `report.json`
/// into `destination`. Identical inputs give byte-identical files.
pub fn render_report(rows: &[ReportRow], matrices: &[ConfusionMatrix], destination: &Path) -> Result<RenderedReport> {
    if rows.is_empty() {
        return Err(Error::Contract("render_report needs at least one row".into()));
    }
    fs::create_dir_all(destination).map_err(|e| Error::io(destination, e))?;
    let mut text = render_table(rows);
    for m in matrices {
        text.push('\n');
        text.push_str(&render_matrix(m));
    }
    let json = serde_json::to_string_pretty(&ReportDocument {
        rows,
        confusion_matrices: matrices,
    })? + "\n";
    let text_path = destination.join("report.txt");
    let json_path = destination.join("report.json");
    fs::write(&text_path, &text).map_err(|e| Error::io(&text_path, e))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(RenderedReport {
        text_path,
        json_path,
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalx::{compute_metrics, confusion_matrix, PredictionSet};

    fn row() -> ReportRow {
        let s = PredictionSet::new("sentiment", vec![0, 1, 2, 3], vec![0, 1, 2, 0]);
        let t = PredictionSet::new("topic", vec![0, 5, 9], vec![0, 5, 1]);
        let mut metrics = BTreeMap::new();
        metrics.insert("sentiment".into(), compute_metrics(&s, 4).unwrap());
        metrics.insert("topic".into(), compute_metrics(&t, 10).unwrap());
        ReportRow {
            model: "tiny".into(),
            strategy: "joint_sum".into(),
            metrics,
            failure: None,
        }
    }

    #[test]
    fn one_model_two_tasks_gives_one_row_of_six_cells() {
        let dir = tempfile::tempdir().unwrap();
        let r = render_report(&[row()], &[], dir.path()).unwrap();
        let lines: Vec<&str> = r.text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2].split_whitespace().count(), 2 + 6);
        assert!(!r.text.contains("Confusion"));
        assert!(lines[2].contains("75.00"));
    }

    #[test]
    fn rerendering_is_byte_identical() {
        let cm = confusion_matrix(&PredictionSet::new("sentiment", vec![0, 1, 2, 3], vec![0, 1, 2, 0]), 4).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        render_report(&[row()], std::slice::from_ref(&cm), a.path()).unwrap();
        render_report(&[row()], &[cm], b.path()).unwrap();
        for f in ["report.txt", "report.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
        let text = fs::read_to_string(a.path().join("report.txt")).unwrap();
        assert!(text.contains("Neutral") && text.contains("Row-normalized"));
    }

    #[test]
    fn failed_rows_are_marked() {
        let dir = tempfile::tempdir().unwrap();
        let failed = ReportRow {
            failure: Some("non-finite loss".into()),
            metrics: BTreeMap::new(),
            ..row()
        };
        let r = render_report(&[row(), failed], &[], dir.path()).unwrap();
        assert!(r.text.contains("failed") && r.text.contains("non-finite loss"));
        assert!(render_report(&[], &[], dir.path()).is_err());
    }
}
