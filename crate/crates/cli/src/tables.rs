//! Markdown tables of benchmark results.

use std::fmt::Write;

use kcrr::evalsel::{BenchmarkReport, Estimator, Metric, Summary};

fn summary(r: &kcrr::evalsel::EstimatorResult, metric: Metric) -> Option<Summary> {
    match metric {
        Metric::Mae => r.mae,
        Metric::Rsse => r.rsse,
    }
}

/// Means are compared after rounding to the printed precision, so two
/// entries that print the same are a tie and both are bolded.
fn rounded(mean: f64) -> f64 {
    format!("{mean:.4}").parse().unwrap_or(f64::NAN)
}

/// One table per (noise group, metric); rows are datasets, columns are
/// estimators, entries `mean ± stderr` with the row minimum in bold.
pub fn render_tables(report: &BenchmarkReport) -> String {
    let mut groups: Vec<&str> = Vec::new();
    for c in &report.cells {
        if !groups.contains(&c.noise.as_str()) {
            groups.push(&c.noise);
        }
    }
    let mut out = String::new();
    for metric in [Metric::Mae, Metric::Rsse] {
        for group in &groups {
            let cells: Vec<_> = report.cells.iter().filter(|c| c.noise == *group).collect();
            let mut ests: Vec<Estimator> = Vec::new();
            for c in &cells {
                for r in &c.results {
                    if !ests.contains(&r.estimator) {
                        ests.push(r.estimator);
                    }
                }
            }
            let title = if *group == "real" { "real data".to_string() } else { format!("{group} noise") };
            let _ = writeln!(out, "### {}, {title}\n", metric.name().to_uppercase());
            let header: Vec<&str> = ests.iter().map(|e| e.name()).collect();
            let _ = writeln!(out, "| dataset | {} |", header.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(ests.len()));
            for c in cells {
                let vals: Vec<Option<Summary>> = ests
                    .iter()
                    .map(|e| c.results.iter().find(|r| r.estimator == *e).and_then(|r| summary(r, metric)))
                    .collect();
                let best = vals
                    .iter()
                    .flatten()
                    .map(|s| rounded(s.mean))
                    .filter(|m| m.is_finite())
                    .fold(f64::INFINITY, f64::min);
                let entries: Vec<String> = vals
                    .iter()
                    .map(|v| match v {
                        None => "n/a".to_string(),
                        Some(s) => {
                            let text = format!("{:.4} ± {:.4}", s.mean, s.stderr);
                            if rounded(s.mean) == best { format!("**{text}**") } else { text }
                        }
                    })
                    .collect();
                let _ = writeln!(out, "| {} | {} |", c.dataset, entries.join(" | "));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use kcrr::evalsel::{CellReport, EstimatorResult};
    use proptest::prelude::*;

    fn result(est: Estimator, mean: f64) -> EstimatorResult {
        let s = Summary { mean, stderr: 0.01 };
        EstimatorResult { estimator: est, mae: Some(s), rsse: Some(s), reps: Vec::new() }
    }

    fn report_of(rows: Vec<Vec<(Estimator, f64)>>) -> BenchmarkReport {
        BenchmarkReport {
            seed: 1,
            reps: 1,
            folds: 2,
            cells: rows
                .into_iter()
                .enumerate()
                .map(|(i, r)| CellReport {
                    dataset: format!("d{i}"),
                    noise: "cauchy".into(),
                    noise_scale: None,
                    results: r.into_iter().map(|(e, m)| result(e, m)).collect(),
                })
                .collect(),
            notes: Vec::new(),
        }
    }

    #[test]
    fn single_cell_is_bold() {
        let md = render_tables(&report_of(vec![vec![(Estimator::Kcrr, 0.5)]]));
        assert!(md.contains("| d0 | **0.5000 ± 0.0100** |"), "{md}");
        assert_eq!(md.matches("### ").count(), 2);
    }

    #[test]
    fn ties_are_all_bold() {
        let md = render_tables(&report_of(vec![vec![
            (Estimator::Klad, 0.3),
            (Estimator::Kcrr, 0.3),
            (Estimator::Mccr, 0.7),
        ]]));
        let row = md.lines().find(|l| l.starts_with("| d0")).unwrap();
        assert_eq!(row.matches("**").count(), 4);
        assert!(!row.contains("**0.7000"));
    }

    #[test]
    fn missing_summary_prints_placeholder() {
        let mut r = report_of(vec![vec![(Estimator::Klad, 0.3), (Estimator::Kcrr, 0.2)]]);
        r.cells[0].results[0].mae = None;
        let md = render_tables(&r);
        assert!(md.contains("| d0 | n/a | **0.2000 ± 0.0100** |"), "{md}");
    }

    proptest! {
        #[test]
        fn bold_count_matches_rounded_minimum(means in proptest::collection::vec(0.0f64..2.0, 4), dup in 0usize..4) {
            let mut means = means;
            if dup > 0 { means[dup] = means[0]; }
            let row: Vec<(Estimator, f64)> = Estimator::ALL.iter().copied().zip(means.iter().copied()).collect();
            let md = render_tables(&report_of(vec![row]));
            let line = md.lines().find(|l| l.starts_with("| d0")).unwrap();
            let best = means.iter().map(|m| rounded(*m)).fold(f64::INFINITY, f64::min);
            let expected = means.iter().filter(|m| rounded(**m) == best).count();
            prop_assert!(expected >= 1);
            prop_assert_eq!(line.matches("**").count(), 2 * expected);
        }
    }
}
