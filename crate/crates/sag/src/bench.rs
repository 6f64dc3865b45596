//! Benchmark harness: per-case ROUGE/BLEU against the gold article, optional
//! hallucination judging, macro-averaged aggregation, and the
//! shuffled-reference ablation.

use std::io::{BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::JudgeVerdict;
use crate::metrics::{self, RougeScores};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed case: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("case {0:?} has an empty field")]
    EmptyCase(String),
    #[error("reference shuffling needs at least 2 distinct users")]
    TooFewUsers,
    #[error("no cross-user reference assignment exists for these cases")]
    NoValidShuffle,
    #[error("no cases to evaluate")]
    NoCases,
}

/// One style imitation task: write the gold article from its summary in the
/// style of the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteBenchCase {
    pub case_id: String,
    pub summary: String,
    pub style_reference: String,
    pub gold_article: String,
    pub user_id: String,
}

impl NoteBenchCase {
    pub fn validate(&self) -> Result<(), BenchError> {
        for field in [&self.summary, &self.style_reference, &self.gold_article, &self.user_id] {
            if field.trim().is_empty() {
                return Err(BenchError::EmptyCase(self.case_id.clone()));
            }
        }
        Ok(())
    }
}

pub fn read_benchmark(r: impl BufRead) -> Result<Vec<NoteBenchCase>, BenchError> {
    let mut cases = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let case: NoteBenchCase = serde_json::from_str(&line)
            .map_err(|source| BenchError::Parse { line: idx + 1, source })?;
        case.validate()?;
        cases.push(case);
    }
    Ok(cases)
}

pub fn write_benchmark(cases: &[NoteBenchCase], mut w: impl Write) -> Result<(), BenchError> {
    for case in cases {
        serde_json::to_writer(&mut w, case).map_err(|e| BenchError::Io(std::io::Error::other(e)))?;
        writeln!(w)?;
    }
    Ok(())
}

/// Metrics for one case, or the failure that prevented them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub rouge1: RougeScores,
    pub rouge2: RougeScores,
    pub rouge_l: RougeScores,
    pub bleu4: f64,
    pub verdict: Option<JudgeVerdict>,
    pub error: Option<String>,
}

/// Macro-averaged metrics over the successful cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rouge1: RougeScores,
    pub rouge2: RougeScores,
    pub rouge_l: RougeScores,
    pub bleu4: f64,
    /// Absent when no judge ran.
    pub factual_rate: Option<f64>,
    pub faithful_rate: Option<f64>,
    pub n_cases: usize,
    pub n_failures: usize,
}

/// Produce text for one case.
pub type Generator<'a> = dyn Fn(&NoteBenchCase) -> Result<String, String> + 'a;
/// Judge one generated text against its case.
pub type Judge<'a> = dyn Fn(&NoteBenchCase, &str) -> Result<JudgeVerdict, String> + 'a;

/// Evaluate every case; failures are recorded per case and excluded from the
/// macro average.
pub fn run_benchmark(
    cases: &[NoteBenchCase],
    generator: &Generator,
    judge: Option<&Judge>,
) -> Result<(MetricReport, Vec<CaseResult>), BenchError> {
    if cases.is_empty() {
        return Err(BenchError::NoCases);
    }
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        case.validate()?;
        let row = match generator(case) {
            Ok(generated) => {
                let verdict = match judge {
                    Some(j) => match j(case, &generated) {
                        Ok(v) => Some(v),
                        Err(e) => {
                            rows.push(failed_row(case, format!("judge: {e}")));
                            continue;
                        }
                    },
                    None => None,
                };
                CaseResult {
                    case_id: case.case_id.clone(),
                    rouge1: metrics::rouge_n(&generated, &case.gold_article, 1),
                    rouge2: metrics::rouge_n(&generated, &case.gold_article, 2),
                    rouge_l: metrics::rouge_l(&generated, &case.gold_article),
                    bleu4: metrics::bleu_4(&generated, &[&case.gold_article]),
                    verdict,
                    error: None,
                }
            }
            Err(e) => failed_row(case, e),
        };
        rows.push(row);
    }
    // merge in case-id order regardless of evaluation schedule
    rows.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok((aggregate(&rows), rows))
}

fn failed_row(case: &NoteBenchCase, error: String) -> CaseResult {
    CaseResult {
        case_id: case.case_id.clone(),
        rouge1: RougeScores::default(),
        rouge2: RougeScores::default(),
        rouge_l: RougeScores::default(),
        bleu4: 0.0,
        verdict: None,
        error: Some(error),
    }
}

/// Arithmetic mean of per-case values over the successes.
pub fn aggregate(rows: &[CaseResult]) -> MetricReport {
    let ok: Vec<&CaseResult> = rows.iter().filter(|r| r.error.is_none()).collect();
    let n = ok.len();
    let mean_rouge = |pick: fn(&CaseResult) -> RougeScores| -> RougeScores {
        if n == 0 {
            return RougeScores::default();
        }
        let mut sum = RougeScores::default();
        for r in &ok {
            let s = pick(r);
            sum.precision += s.precision;
            sum.recall += s.recall;
            sum.f1 += s.f1;
        }
        RougeScores {
            precision: sum.precision / n as f64,
            recall: sum.recall / n as f64,
            f1: sum.f1 / n as f64,
            undefined: false,
        }
    };
    let judged: Vec<&JudgeVerdict> = ok.iter().filter_map(|r| r.verdict.as_ref()).collect();
    let (factual_rate, faithful_rate) = if judged.is_empty() {
        (None, None)
    } else {
        let total = judged.len() as f64;
        (
            Some(100.0 * judged.iter().filter(|v| v.factual_hallucinated).count() as f64 / total),
            Some(100.0 * judged.iter().filter(|v| v.faithful_hallucinated).count() as f64 / total),
        )
    };
    MetricReport {
        rouge1: mean_rouge(|r| r.rouge1),
        rouge2: mean_rouge(|r| r.rouge2),
        rouge_l: mean_rouge(|r| r.rouge_l),
        bleu4: if n == 0 { 0.0 } else { ok.iter().map(|r| r.bleu4).sum::<f64>() / n as f64 },
        factual_rate,
        faithful_rate,
        n_cases: n,
        n_failures: rows.len() - n,
    }
}

/// Reassign style references across cases so that no case keeps a reference
/// from its own user. Summaries and gold articles stay untouched.
/// Deterministic under the seed.
pub fn shuffle_references(
    cases: &[NoteBenchCase],
    seed: u64,
) -> Result<Vec<NoteBenchCase>, BenchError> {
    let distinct: std::collections::BTreeSet<&str> =
        cases.iter().map(|c| c.user_id.as_str()).collect();
    if distinct.len() < 2 {
        return Err(BenchError::TooFewUsers);
    }

    let mut perm: Vec<usize> = (0..cases.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..perm.len()).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }

    // repair pass: swap conflicting assignments until none remain
    let conflicts = |perm: &[usize]| -> Vec<usize> {
        (0..cases.len()).filter(|&i| cases[perm[i]].user_id == cases[i].user_id).collect()
    };
    for _ in 0..cases.len() {
        let bad = conflicts(&perm);
        if bad.is_empty() {
            break;
        }
        let mut progressed = false;
        for &i in &bad {
            if cases[perm[i]].user_id != cases[i].user_id {
                continue; // already fixed by an earlier swap
            }
            for j in 0..cases.len() {
                if j == i {
                    continue;
                }
                let fixes_i = cases[perm[j]].user_id != cases[i].user_id;
                let keeps_j = cases[perm[i]].user_id != cases[j].user_id;
                if fixes_i && keeps_j {
                    perm.swap(i, j);
                    progressed = true;
                    break;
                }
            }
        }
        if !progressed {
            return Err(BenchError::NoValidShuffle);
        }
    }
    if !conflicts(&perm).is_empty() {
        return Err(BenchError::NoValidShuffle);
    }

    Ok(cases
        .iter()
        .enumerate()
        .map(|(i, case)| NoteBenchCase {
            style_reference: cases[perm[i]].style_reference.clone(),
            ..case.clone()
        })
        .collect())
}

/// Per-case rows as CSV (both recall and F1 are kept so either aggregate
/// reading stays recoverable).
pub fn write_case_csv(rows: &[CaseResult], w: impl Write) -> Result<(), BenchError> {
    let mut writer = csv::Writer::from_writer(w);
    writer
        .write_record([
            "case_id", "rouge1_p", "rouge1_r", "rouge1_f1", "rouge2_p", "rouge2_r", "rouge2_f1",
            "rougeL_p", "rougeL_r", "rougeL_f1", "bleu4", "factual", "faithful", "error",
        ])
        .map_err(csv_err)?;
    for r in rows {
        let verdict_cols = match &r.verdict {
            Some(v) => {
                (v.factual_hallucinated.to_string(), v.faithful_hallucinated.to_string())
            }
            None => (String::new(), String::new()),
        };
        writer
            .write_record([
                r.case_id.clone(),
                fmt(r.rouge1.precision),
                fmt(r.rouge1.recall),
                fmt(r.rouge1.f1),
                fmt(r.rouge2.precision),
                fmt(r.rouge2.recall),
                fmt(r.rouge2.f1),
                fmt(r.rouge_l.precision),
                fmt(r.rouge_l.recall),
                fmt(r.rouge_l.f1),
                fmt(r.bleu4),
                verdict_cols.0,
                verdict_cols.1,
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:.9}")
}

fn csv_err(e: csv::Error) -> BenchError {
    BenchError::Io(std::io::Error::other(e))
}
