//! Text renderings of experiment metrics.

use serde::{Deserialize, Serialize};

use super::experiment::{MetricsRow, SelectionSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsFormat {
    Csv,
    Markdown,
}

const COLUMNS: [&str; 9] = [
    "strategy",
    "external_n",
    "abs_bias",
    "variance",
    "mean_ci_width",
    "coverage",
    "power",
    "n_replications",
    "n_failed",
];

/// Render metrics rows, columns in `MetricsRow` field order.
pub fn emit_metrics(rows: &[MetricsRow], format: MetricsFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no metrics rows to emit".into()));
    }
    match format {
        MetricsFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(true)
                .from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
        }
        MetricsFormat::Markdown => {
            let mut s = format!("| {} |\n", COLUMNS.join(" | "));
            s.push_str(&format!("|{}\n", "---|".repeat(COLUMNS.len())));
            for r in rows {
                s.push_str(&format!(
                    "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {} | {} |\n",
                    r.strategy.as_str(),
                    r.external_n,
                    r.abs_bias,
                    r.variance,
                    r.mean_ci_width,
                    r.coverage,
                    r.power,
                    r.n_replications,
                    r.n_failed
                ));
            }
            Ok(s)
        }
    }
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    if headers.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::InvalidInput(format!(
            "unexpected metrics header {headers:?}"
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Markdown table of mean selected counts per source.
pub fn emit_selection_markdown(rows: &[SelectionSummary]) -> String {
    let mut s = String::from("| strategy | external_n | source 1 | source 2 | source 3 | source 4 | source 5 | P(source 1 > source 5) |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let c = r.mean_counts;
        s.push_str(&format!(
            "| {} | {} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} | {:.3} |\n",
            r.strategy.as_str(),
            r.external_n,
            c[0],
            c[1],
            c[2],
            c[3],
            c[4],
            r.frac_first_exceeds_last
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::Strategy;

    fn row(n: usize) -> MetricsRow {
        MetricsRow {
            strategy: Strategy::TesPsMatching,
            external_n: n,
            abs_bias: 0.1 / 3.0,
            variance: 0.041,
            mean_ci_width: 0.725,
            coverage: 0.95,
            power: 0.85,
            n_replications: 500,
            n_failed: 0,
        }
    }

    #[test]
    fn csv_one_row_and_round_trip() {
        let rows = vec![row(500)];
        let text = emit_metrics(&rows, MetricsFormat::Csv).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("strategy,external_n,abs_bias"));
        let rows2 = vec![row(500), row(600)];
        let parsed = parse_metrics_csv(&emit_metrics(&rows2, MetricsFormat::Csv).unwrap()).unwrap();
        assert_eq!(parsed, rows2);
    }

    #[test]
    fn markdown_has_header_and_separator() {
        let text = emit_metrics(&[row(500)], MetricsFormat::Markdown).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("| strategy |"));
        assert!(lines.next().unwrap().starts_with("|---|"));
    }

    #[test]
    fn empty_rows_rejected() {
        assert!(emit_metrics(&[], MetricsFormat::Csv).is_err());
    }
}
