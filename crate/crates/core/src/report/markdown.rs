use std::fmt::Write as _;

use super::{RunReport, TaskResult};
use crate::crows::category_table;
use crate::templates;

/// CrowS scores are shown with 2 decimals, SEAT effect sizes with 3.
pub(crate) fn fmt_crows(v: f64) -> String {
    format!("{v:.2}")
}

pub(crate) fn fmt_seat(v: f64) -> String {
    format!("{v:.3}")
}

/// Renders a report as Markdown. Depends only on the report contents, minus
/// the metadata block, so deterministic runs render identically.
pub fn render_markdown(r: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Bias report: {}\n", r.display_name());
    let _ = writeln!(out, "- backend: `{}` (pooling: {})", r.backend.descriptor, r.backend.pooling);
    if let Some(info) = &r.backend.info {
        let _ = writeln!(out, "- model: `{}` (dim {}, max_len {})", info.model_id, info.dim, info.max_len);
    }
    let _ = writeln!(out, "- seed: {}", r.seed);
    let _ = writeln!(out, "- toolkit version: {}", r.toolkit_version);
    if let Some(label) = &r.label {
        let _ = writeln!(out, "- label: {label}");
    }
    out.push('\n');

    let crows = r.crows().map_or("n/a".to_string(), |c| fmt_crows(c.metric_score));
    let seat = r.seat().map_or("n/a".to_string(), |s| fmt_seat(s.avg_abs_d));
    let _ = writeln!(out, "| Model | CrowS ↓ | Avg. SEAT ↓ |\n|---|---|---|");
    let _ = writeln!(out, "| {} | {crows} | {seat} |\n", r.display_name());

    for t in &r.tasks {
        let _ = writeln!(out, "## {}\n", t.task);
        if let Some(err) = &t.error {
            let _ = writeln!(out, "**failed:** {err}\n");
            continue;
        }
        match t.result.as_ref() {
            Some(TaskResult::Seat(s)) => {
                let _ = writeln!(
                    out,
                    "Effect sizes use the {} standard deviation; pooling: {}.\n",
                    s.std_convention, s.pooling
                );
                let _ = writeln!(out, "| Test | d | p | permutations |\n|---|---|---|---|");
                for e in &s.tests {
                    let kind = if e.exact { "exact" } else { "sampled" };
                    let _ = writeln!(
                        out,
                        "| {} | {} | {:.4} | {} ({kind}) |",
                        e.test_name,
                        fmt_seat(e.d),
                        e.p_value,
                        e.n_permutations
                    );
                }
                let _ = writeln!(out, "\nAvg. SEAT (mean |d|): {}\n", fmt_seat(s.avg_abs_d));
                for (name, err) in &s.failures {
                    let _ = writeln!(out, "- {name} failed: {err}");
                }
                if !s.failures.is_empty() {
                    out.push('\n');
                }
            }
            Some(TaskResult::Crows(c)) => {
                let _ = writeln!(
                    out,
                    "Score: {} over {} pairs ({} ties excluded).\n",
                    fmt_crows(c.metric_score),
                    c.n_pairs,
                    c.n_ties
                );
                out.push_str(&category_table(c));
                out.push('\n');
            }
            Some(TaskResult::Templates(tr)) => {
                out.push_str(&templates::render_markdown(&tr.results));
            }
            Some(TaskResult::Cda(c)) => {
                let s = &c.stats;
                let _ = writeln!(
                    out,
                    "{} input sentences, {} swapped ({:.1}%), {} output sentences in `{}`.\n",
                    s.n_input,
                    s.n_swapped,
                    100.0 * s.swap_fraction,
                    s.n_output,
                    c.augmented_corpus
                );
                if let Some(sheet) = &c.audit_sheet {
                    let _ = writeln!(out, "Audit sheet: `{sheet}`.\n");
                }
            }
            Some(TaskResult::Jsd(j)) => {
                let _ = writeln!(
                    out,
                    "Beam width {}, prompt length {}.\n\n| Rank | Prompt | mean JSD |\n|---|---|---|",
                    j.beam_width, j.prompt_length
                );
                for (i, res) in j.ranked.iter().enumerate() {
                    let _ = writeln!(out, "| {} | {} | {:.6} |", i + 1, res.prompt.join(" "), res.mean_jsd);
                }
                out.push('\n');
            }
            Some(TaskResult::Tsne(t)) => {
                let _ = writeln!(out, "Final KL: {:.4}. Plot: `{}`.\n", t.projection.kl, t.svg);
                if let Some(p) = &t.projection.proximity {
                    let _ = writeln!(
                        out,
                        "| Adjective | nearest male | nearest female | d_m / d_f | nearer |\n|---|---|---|---|---|"
                    );
                    for row in &p.rows {
                        let _ = writeln!(
                            out,
                            "| {} | {} | {} | {:.3} | {:?} |",
                            row.adjective, row.nearest_male, row.nearest_female, row.ratio, row.nearer
                        );
                    }
                    let _ = writeln!(
                        out,
                        "\nNearer male: {}, nearer female: {}, ties: {}.\n",
                        p.summary.male, p.summary.female, p.summary.tie
                    );
                }
            }
            None => {}
        }
    }
    out
}
