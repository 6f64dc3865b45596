//! Stage-comparison report: a row per trained checkpoint and the deltas
//! between the preference-optimized and fine-tuned-only rows.

use serde::{Deserialize, Serialize};

use crate::bench::MetricReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bleu4: f64,
    pub factual: Option<f64>,
    pub faithful: Option<f64>,
}

impl ReportRow {
    fn from_report(label: &str, report: &MetricReport) -> Self {
        ReportRow {
            label: label.to_string(),
            rouge1: report.rouge1.f1,
            rouge2: report.rouge2.f1,
            rouge_l: report.rouge_l.f1,
            bleu4: report.bleu4,
            factual: report.factual_rate,
            faithful: report.faithful_rate,
        }
    }
}

/// Rows for the available checkpoints; `delta` is preference-optimized minus
/// fine-tuned-only and is absent when only one row exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageComparison {
    pub rows: Vec<ReportRow>,
    pub delta: Option<ReportRow>,
}

pub fn build_comparison(sft: &MetricReport, dpo: Option<&MetricReport>) -> StageComparison {
    let sft_row = ReportRow::from_report("S-SFT", sft);
    match dpo {
        Some(dpo) => {
            let dpo_row = ReportRow::from_report("S-SFT + C-DPO", dpo);
            let delta = ReportRow {
                label: "delta".into(),
                rouge1: dpo_row.rouge1 - sft_row.rouge1,
                rouge2: dpo_row.rouge2 - sft_row.rouge2,
                rouge_l: dpo_row.rouge_l - sft_row.rouge_l,
                bleu4: dpo_row.bleu4 - sft_row.bleu4,
                factual: diff(dpo_row.factual, sft_row.factual),
                faithful: diff(dpo_row.faithful, sft_row.faithful),
            };
            StageComparison { rows: vec![sft_row, dpo_row], delta: Some(delta) }
        }
        None => StageComparison { rows: vec![sft_row], delta: None },
    }
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    }
}

/// Fixed-width text table with the benchmark's six metric columns.
pub fn format_table(comparison: &StageComparison) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}\n",
        "stage", "Rouge-1", "Rouge-2", "Rouge-L", "BLEU-4", "Factual", "Faithful"
    ));
    let cell = |v: Option<f64>| match v {
        Some(x) => format!("{x:.2}"),
        None => "n/a".to_string(),
    };
    for row in &comparison.rows {
        out.push_str(&format!(
            "{:<16} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8} {:>9}\n",
            row.label,
            100.0 * row.rouge1,
            100.0 * row.rouge2,
            100.0 * row.rouge_l,
            100.0 * row.bleu4,
            cell(row.factual),
            cell(row.faithful),
        ));
    }
    match &comparison.delta {
        Some(d) => out.push_str(&format!(
            "{:<16} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8} {:>9}\n",
            d.label,
            100.0 * d.rouge1,
            100.0 * d.rouge2,
            100.0 * d.rouge_l,
            100.0 * d.bleu4,
            cell(d.factual),
            cell(d.faithful),
        )),
        None => out.push_str("delta            (unavailable: preference-optimized run missing)\n"),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RougeScores;

    fn report(f1: f64, bleu: f64, factual: f64, faithful: f64) -> MetricReport {
        let r = RougeScores { precision: f1, recall: f1, f1, undefined: false };
        MetricReport {
            rouge1: r,
            rouge2: r,
            rouge_l: r,
            bleu4: bleu,
            factual_rate: Some(factual),
            faithful_rate: Some(faithful),
            n_cases: 10,
            n_failures: 0,
        }
    }

    #[test]
    fn two_rows_with_delta() {
        let sft = report(0.30, 0.10, 20.0, 40.0);
        let dpo = report(0.32, 0.12, 10.0, 25.0);
        let cmp = build_comparison(&sft, Some(&dpo));
        assert_eq!(cmp.rows.len(), 2);
        let delta = cmp.delta.unwrap();
        // deltas equal recomputed differences of the aggregates
        assert!((delta.rouge1 - 0.02).abs() < 1e-12);
        assert!((delta.factual.unwrap() - -10.0).abs() < 1e-12);
        assert!((delta.faithful.unwrap() - -15.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_marks_delta_unavailable() {
        let sft = report(0.30, 0.10, 20.0, 40.0);
        let cmp = build_comparison(&sft, None);
        assert_eq!(cmp.rows.len(), 1);
        assert!(cmp.delta.is_none());
        let table = format_table(&cmp);
        assert!(table.contains("unavailable"));
        assert!(table.contains("Rouge-L"));
    }

    #[test]
    fn table_prints_all_rows() {
        let sft = report(0.30, 0.10, 20.0, 40.0);
        let dpo = report(0.32, 0.12, 10.0, 25.0);
        let table = format_table(&build_comparison(&sft, Some(&dpo)));
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("S-SFT + C-DPO"));
    }
}
