use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::markdown::{fmt_crows, fmt_seat};
use super::{RunReport, Task, TaskResult};
use crate::error::{Error, Result};

/// CrowS value for an unbiased model.
pub const CROWS_IDEAL: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric: String,
    pub baseline: f64,
    pub debiased: f64,
    /// `debiased - baseline`.
    pub delta: f64,
    /// For CrowS metrics: `|score - 50|` before and after, and its change.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_from_ideal: Option<(f64, f64, f64)>,
}

impl DeltaRow {
    fn plain(metric: impl Into<String>, baseline: f64, debiased: f64) -> Self {
        Self {
            metric: metric.into(),
            baseline,
            debiased,
            delta: debiased - baseline,
            distance_from_ideal: None,
        }
    }

    fn crows(metric: impl Into<String>, baseline: f64, debiased: f64) -> Self {
        let b = (baseline - CROWS_IDEAL).abs();
        let d = (debiased - CROWS_IDEAL).abs();
        Self {
            distance_from_ideal: Some((b, d, d - b)),
            ..Self::plain(metric, baseline, debiased)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub debiased: String,
    pub rows: Vec<DeltaRow>,
}

fn task_set(r: &RunReport) -> BTreeSet<Task> {
    r.tasks.iter().map(|t| t.task).collect()
}

/// Per-metric deltas between two reports over the same task set.
pub fn compare(baseline: &RunReport, debiased: &RunReport) -> Result<Comparison> {
    let (tb, td) = (task_set(baseline), task_set(debiased));
    if tb != td {
        return Err(Error::Mismatch(format!(
            "task sets differ: baseline {:?}, debiased {:?}",
            tb.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
            td.iter().map(|t| t.as_str()).collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for b in &baseline.tasks {
        let task = &b.task;
        let d = debiased.task(*task).expect("same task set");
        let (rb, rd) = match (&b.result, &d.result) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(Error::Mismatch(format!(
                    "task {task} failed in {}",
                    if b.result.is_none() { "baseline" } else { "debiased" }
                )))
            }
        };
        match (rb, rd) {
            (TaskResult::Crows(x), TaskResult::Crows(y)) => {
                rows.push(DeltaRow::crows("crows", x.metric_score, y.metric_score));
                for (cat, cx) in &x.per_category {
                    if let (Some(sx), Some(sy)) = (cx.score, y.per_category.get(cat).and_then(|c| c.score)) {
                        rows.push(DeltaRow::crows(format!("crows/{cat}"), sx, sy));
                    }
                }
            }
            (TaskResult::Seat(x), TaskResult::Seat(y)) => {
                rows.push(DeltaRow::plain("avg_seat", x.avg_abs_d, y.avg_abs_d));
                for ex in &x.tests {
                    if let Some(ey) = y.tests.iter().find(|e| e.test_name == ex.test_name) {
                        rows.push(DeltaRow::plain(format!("seat/{}", ex.test_name), ex.d, ey.d));
                    }
                }
            }
            (TaskResult::Templates(x), TaskResult::Templates(y)) => {
                for (tx, ty) in x.results.iter().zip(&y.results) {
                    for (cx, cy) in tx.contrasts.iter().zip(&ty.contrasts) {
                        rows.push(DeltaRow::plain(
                            format!("templates/{}/{}/overlap", tx.template.text, cx.label),
                            cx.mean_overlap,
                            cy.mean_overlap,
                        ));
                    }
                }
            }
            (TaskResult::Jsd(x), TaskResult::Jsd(y)) => {
                if let (Some(bx), Some(by)) = (x.ranked.first(), y.ranked.first()) {
                    rows.push(DeltaRow::plain("jsd/best_mean", bx.mean_jsd, by.mean_jsd));
                }
            }
            (TaskResult::Tsne(x), TaskResult::Tsne(y)) => {
                if let (Some(px), Some(py)) = (&x.projection.proximity, &y.projection.proximity) {
                    rows.push(DeltaRow::plain(
                        "tsne/adjectives_nearer_male",
                        px.summary.male as f64,
                        py.summary.male as f64,
                    ));
                }
            }
            (TaskResult::Cda(_), TaskResult::Cda(_)) => {}
            _ => return Err(Error::Mismatch(format!("task {task} has differing result kinds"))),
        }
    }
    Ok(Comparison {
        baseline: baseline.display_name(),
        debiased: debiased.display_name(),
        rows,
    })
}

/// Markdown with a baseline/debiased table and a delta table.
pub fn render_comparison(c: &Comparison) -> String {
    let get = |m: &str| c.rows.iter().find(|r| r.metric == m);
    let crows = get("crows");
    let seat = get("avg_seat");
    let cell = |r: Option<&DeltaRow>, before: bool, f: fn(f64) -> String| {
        r.map_or("n/a".to_string(), |r| f(if before { r.baseline } else { r.debiased }))
    };
    let mut out = String::new();
    let _ = writeln!(out, "| Model | Type | CrowS ↓ | Avg. SEAT ↓ |\n|---|---|---|---|");
    let _ = writeln!(
        out,
        "| {} | baseline | {} | {} |",
        c.baseline,
        cell(crows, true, fmt_crows),
        cell(seat, true, fmt_seat)
    );
    let _ = writeln!(
        out,
        "| {} | debiased | {} | {} |\n",
        if c.debiased == c.baseline { "" } else { &c.debiased },
        cell(crows, false, fmt_crows),
        cell(seat, false, fmt_seat)
    );
    let _ = writeln!(
        out,
        "| Metric | Baseline | Debiased | Δ | \\|·−50\\| baseline | \\|·−50\\| debiased | Δ\\|·−50\\| |\n|---|---|---|---|---|---|---|"
    );
    for r in &c.rows {
        let is_crows = r.distance_from_ideal.is_some();
        let f = if is_crows { fmt_crows } else { fmt_seat };
        let (db, dd, ddelta) = match r.distance_from_ideal {
            Some((b, d, x)) => (fmt_crows(b), fmt_crows(d), fmt_crows(x)),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {db} | {dd} | {ddelta} |",
            r.metric,
            f(r.baseline),
            f(r.debiased),
            f(r.delta)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crows::CrowsResult;
    use crate::report::{BackendSummary, RunMetadata, TaskReport};
    use crate::seat::{SeatReport, STD_CONVENTION};

    fn report(label: &str, crows: f64, seat: f64) -> RunReport {
        RunReport {
            toolkit_version: "0".into(),
            label: Some(label.into()),
            seed: 42,
            backend: BackendSummary {
                descriptor: "toy".into(),
                pooling: "mean".into(),
                info: None,
            },
            tasks: vec![
                TaskReport {
                    task: Task::Crows,
                    result: Some(TaskResult::Crows(CrowsResult {
                        metric_score: crows,
                        per_category: Default::default(),
                        n_pairs: 100,
                        n_ties: 0,
                    })),
                    error: None,
                },
                TaskReport {
                    task: Task::Seat,
                    result: Some(TaskResult::Seat(SeatReport {
                        tests: vec![],
                        avg_abs_d: seat,
                        std_convention: STD_CONVENTION.into(),
                        pooling: "mean".into(),
                        failures: Default::default(),
                    })),
                    error: None,
                },
            ],
            metadata: RunMetadata::default(),
        }
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let r = report("BERTu", 55.40, 0.530);
        let c = compare(&r, &r).unwrap();
        assert!(c.rows.iter().all(|row| row.delta == 0.0));
    }

    #[test]
    fn distance_from_ideal() {
        let c = compare(&report("BERTu", 55.40, 0.530), &report("BERTu", 49.19, 0.460)).unwrap();
        let crows = &c.rows[0];
        assert!((crows.delta - -6.21).abs() < 1e-9);
        let (b, d, x) = crows.distance_from_ideal.unwrap();
        assert!((b - 5.40).abs() < 1e-9 && (d - 0.81).abs() < 1e-9 && (x - -4.59).abs() < 1e-9);
        let md = render_comparison(&c);
        assert!(md.contains("| BERTu | baseline | 55.40 | 0.530 |"), "{md}");
        assert!(md.contains("|  | debiased | 49.19 | 0.460 |"), "{md}");
        assert!(md.contains("| crows | 55.40 | 49.19 | -6.21 | 5.40 | 0.81 | -4.59 |"), "{md}");
    }

    #[test]
    fn task_mismatch_is_an_error() {
        let a = report("a", 50.0, 0.1);
        let mut b = a.clone();
        b.tasks.pop();
        assert!(matches!(compare(&a, &b), Err(Error::Mismatch(_))));
    }
}
