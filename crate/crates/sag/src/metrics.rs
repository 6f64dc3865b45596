//! ROUGE-1/2/L, BLEU-4, and hallucination-rate aggregation, built directly
//! from their definitions on the shared tokenizer.

use serde::{Deserialize, Serialize};

use crate::gateway::JudgeVerdict;
use crate::text::{self, Segment};

const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("verdict list is empty")]
    EmptyVerdicts,
}

/// Metric tokens: lowercased words split on non-alphanumerics, CJK
/// characters one token each, emoji kept as single tokens (they carry style
/// signal).
pub fn tokenize_for_metrics(text: &str) -> Vec<String> {
    text::segment(text)
        .into_iter()
        .map(|s| match s {
            Segment::Word(w) => w,
            Segment::Cjk(c) | Segment::Emoji(c) => c.to_string(),
        })
        .collect()
}

/// Precision/recall/F1 triple for one ROUGE variant. `undefined` flags the
/// degenerate case where the reference has no n-grams at the requested
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RougeScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default)]
    pub undefined: bool,
}

impl RougeScores {
    fn undefined() -> Self {
        RougeScores { undefined: true, ..RougeScores::default() }
    }

    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let recall = overlap as f64 / ref_total as f64;
        let precision = if cand_total == 0 { 0.0 } else { overlap as f64 / cand_total as f64 };
        RougeScores { precision, recall, f1: f1(precision, recall), undefined: false }
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> std::collections::HashMap<&[String], usize> {
    let mut counts = std::collections::HashMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *counts.entry(&tokens[i..i + n]).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap ROUGE for n in {1, 2}.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> RougeScores {
    assert!(n == 1 || n == 2, "rouge_n supports n in {{1, 2}}");
    let cand = tokenize_for_metrics(candidate);
    let refr = tokenize_for_metrics(reference);
    if refr.len() < n {
        return RougeScores::undefined();
    }
    let cand_counts = ngram_counts(&cand, n);
    let ref_counts = ngram_counts(&refr, n);
    let overlap: usize = cand_counts
        .iter()
        .map(|(gram, count)| (*count).min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    let cand_total = cand.len().saturating_sub(n - 1);
    let ref_total = refr.len() - (n - 1);
    RougeScores::from_counts(overlap, cand_total, ref_total)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for i in 0..a.len() {
        for j in 0..b.len() {
            cur[j + 1] = if a[i] == b[j] { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence ROUGE.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScores {
    let cand = tokenize_for_metrics(candidate);
    let refr = tokenize_for_metrics(reference);
    if refr.is_empty() {
        return RougeScores::undefined();
    }
    if cand.is_empty() {
        return RougeScores::default();
    }
    let l = lcs_len(&cand, &refr);
    RougeScores::from_counts(l, cand.len(), refr.len())
}

/// BLEU-4 with epsilon-floored clipped precisions and the brevity penalty.
/// Multiple references clip against the per-gram maximum; the penalty uses
/// the closest reference length (ties favor the shorter).
pub fn bleu_4(candidate: &str, references: &[&str]) -> f64 {
    assert!(!references.is_empty(), "bleu needs at least one reference");
    let cand = tokenize_for_metrics(candidate);
    if cand.is_empty() {
        return 0.0;
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize_for_metrics(r)).collect();

    let mut log_sum = 0.0;
    for n in 1..=4 {
        let total = cand.len().saturating_sub(n - 1);
        let p = if total == 0 {
            BLEU_EPSILON
        } else {
            let cand_counts = ngram_counts(&cand, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            let overlap: usize = cand_counts
                .iter()
                .map(|(gram, count)| {
                    let best = ref_counts
                        .iter()
                        .map(|rc| rc.get(gram).copied().unwrap_or(0))
                        .max()
                        .unwrap_or(0);
                    (*count).min(best)
                })
                .sum();
            (if overlap == 0 { BLEU_EPSILON } else { overlap as f64 }) / total as f64
        };
        log_sum += p.ln();
    }
    let geometric = (log_sum / 4.0).exp();

    let c = cand.len();
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("nonempty references");
    let brevity = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    brevity * geometric
}

/// Share of verdicts with each flag raised, as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallucinationRates {
    pub factual_rate: f64,
    pub faithful_rate: f64,
}

pub fn hallucination_rates(verdicts: &[JudgeVerdict]) -> Result<HallucinationRates, MetricsError> {
    if verdicts.is_empty() {
        return Err(MetricsError::EmptyVerdicts);
    }
    let n = verdicts.len() as f64;
    let factual = verdicts.iter().filter(|v| v.factual_hallucinated).count() as f64;
    let faithful = verdicts.iter().filter(|v| v.faithful_hallucinated).count() as f64;
    Ok(HallucinationRates {
        factual_rate: 100.0 * factual / n,
        faithful_rate: 100.0 * faithful / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(factual: bool, faithful: bool) -> JudgeVerdict {
        JudgeVerdict {
            factual_hallucinated: factual,
            faithful_hallucinated: faithful,
            rationale: "r".into(),
        }
    }

    #[test]
    fn tokenizer_matches_hand_tokenization() {
        assert_eq!(tokenize_for_metrics("The cat!"), vec!["the", "cat"]);
        assert_eq!(tokenize_for_metrics(""), Vec::<String>::new());
        // hand-tokenized mixed-script fixture
        assert_eq!(
            tokenize_for_metrics("今天 weather 很好 sunny"),
            vec!["今", "天", "weather", "很", "好", "sunny"]
        );
        assert_eq!(
            tokenize_for_metrics("great trip 🌵 loved it 🌵"),
            vec!["great", "trip", "🌵", "loved", "it", "🌵"]
        );
    }

    #[test]
    fn rouge_identities() {
        let same = rouge_n("a b c d", "a b c d", 1);
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let disjoint = rouge_n("a b", "c d", 1);
        assert_eq!((disjoint.precision, disjoint.recall, disjoint.f1), (0.0, 0.0, 0.0));
        let l = rouge_l("a b c", "a b c");
        assert_eq!((l.precision, l.recall, l.f1), (1.0, 1.0, 1.0));
    }

    // Hand n-gram count: overlap 3, recall 3/6, precision 3/3,
    // f1 = 2(0.5*1)/1.5 = 2/3.
    #[test]
    fn rouge1_hand_oracle() {
        let r = rouge_n("the cat sat", "the cat sat on the mat", 1);
        assert!((r.recall - 0.5).abs() < 1e-9);
        assert!((r.precision - 1.0).abs() < 1e-9);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-9);
    }

    // Hand LCS: [a b c] vs [a c b] -> length 2, both sides length 3.
    #[test]
    fn rouge_l_hand_oracle() {
        let r = rouge_l("a b c", "a c b");
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-9);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-9);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn rouge_l_reversed_distinct_tokens() {
        // LCS of a reversed distinct-token sequence is 1 -> f1 = 1/k
        let r = rouge_l("a b c d e", "e d c b a");
        assert!((r.f1 - 0.2).abs() < 1e-9);
    }

    #[test]
    fn rouge_short_reference_flags_undefined() {
        let r = rouge_n("a b c", "z", 2);
        assert!(r.undefined);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn bleu_identities_and_smoothing() {
        assert!((bleu_4("a b c d e", &["a b c d e"]) - 1.0).abs() < 1e-12);
        assert_eq!(bleu_4("", &["a b"]), 0.0);
        // no 4-gram overlap lands in the smoothing floor regime
        let s = bleu_4("alpha beta gamma delta epsilon", &["alpha beta x gamma delta y epsilon"]);
        assert!(s < 1e-2, "score {s}");
    }

    // Frozen from an independent implementation of the definitional
    // formulas (clipped counts, epsilon smoothing, closest-length brevity
    // penalty); tolerance 1e-6.
    #[test]
    fn metric_fixture_table() {
        // (cand, ref, [r1 p/r/f1, r2 p/r/f1, rL p/r/f1, bleu4])
        let fixtures: &[(&str, &str, [f64; 10])] = &[
            ("the quick brown fox jumps over the lazy dog",
             "the quick brown fox jumps over the lazy dog",
             [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
            ("alpha beta gamma delta", "epsilon zeta eta theta",
             [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0000000005]),
            ("it was a bright cold day in april",
             "it was a bright cold day in april and the clocks were striking thirteen",
             [1.0, 0.5714285714, 0.7272727273, 1.0, 0.5384615385, 0.7,
              1.0, 0.5714285714, 0.7272727273, 0.4723665527]),
            ("the the the the", "the cat",
             [0.25, 0.5, 0.3333333333, 0.0, 0.0, 0.0, 0.25, 0.5, 0.3333333333, 0.0000000803]),
            ("one two four three five", "one two three four five",
             [1.0, 1.0, 1.0, 0.25, 0.25, 0.25, 0.8, 0.8, 0.8, 0.0000142872]),
            ("the market rallied sharply today as tech stocks soared higher",
             "the market rallied today",
             [0.4, 1.0, 0.5714285714, 0.2222222222, 0.6666666667, 0.3333333333,
              0.4, 1.0, 0.5714285714, 0.0011224445]),
            ("Hello, World! HELLO world.", "hello world hello world",
             [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
            ("b c d e f g", "a b c d e f",
             [0.8333333333, 0.8333333333, 0.8333333333, 0.8, 0.8, 0.8,
              0.8333333333, 0.8333333333, 0.8333333333, 0.7598356857]),
            ("今天 weather 很好 sunny", "今天天气很好 sunny day",
             [0.8333333333, 0.625, 0.7142857143, 0.6, 0.4285714286, 0.5,
              0.8333333333, 0.625, 0.7142857143, 0.0018204651]),
            ("great trip 🌵 loved it 🌵", "great trip 🌵 we loved it",
             [0.8333333333, 0.8333333333, 0.8333333333, 0.6, 0.6, 0.6,
              0.8333333333, 0.8333333333, 0.8333333333, 0.0025406637]),
            ("hello", "hello",
             [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0000001778]),
            ("price was 42 dollars in 2024", "the price was 42 dollars back in 2024",
             [1.0, 0.75, 0.8571428571, 0.8, 0.5714285714, 0.6666666667,
              1.0, 0.75, 0.8571428571, 0.4329820146]),
            ("on the mat", "the cat sat on the mat",
             [1.0, 0.5, 0.6666666667, 1.0, 0.4, 0.5714285714,
              1.0, 0.5, 0.6666666667, 0.0020687381]),
            ("cat cat cat", "cat cat dog",
             [0.6666666667, 0.6666666667, 0.6666666667, 0.5, 0.5, 0.5,
              0.6666666667, 0.6666666667, 0.6666666667, 0.0000240281]),
            ("alpha beta gamma delta epsilon", "alpha beta x gamma delta y epsilon",
             [1.0, 0.7142857143, 0.8333333333, 0.5, 0.3333333333, 0.4,
              1.0, 0.7142857143, 0.8333333333, 0.0000113890]),
            ("red green blue yellow", "red green purple orange",
             [0.5, 0.5, 0.5, 0.3333333333, 0.3333333333, 0.3333333333,
              0.5, 0.5, 0.5, 0.0000169904]),
            ("she walked to the store and bought some bread",
             "she drove to the store and bought fresh bread",
             [0.7777777778, 0.7777777778, 0.7777777778, 0.5, 0.5, 0.5,
              0.7777777778, 0.7777777778, 0.7777777778, 0.4854917717]),
            ("to be or not to be", "to be or not to be that is the question",
             [1.0, 0.6, 0.75, 1.0, 0.5555555556, 0.7142857143, 1.0, 0.6, 0.75, 0.5134171190]),
            ("x y z the end of the story", "the end of the story",
             [0.625, 1.0, 0.7692307692, 0.5714285714, 1.0, 0.7272727273,
              0.625, 1.0, 0.7692307692, 0.5169731540]),
            ("apple orange banana grape melon", "melon apple grape orange banana",
             [1.0, 1.0, 1.0, 0.25, 0.25, 0.25, 0.6, 0.6, 0.6, 0.0000142872]),
            ("a", "a b c d e f g h",
             [1.0, 0.125, 0.2222222222, 0.0, 0.0, 0.0,
              1.0, 0.125, 0.2222222222, 0.0000000002]),
            ("a b c d e", "e d c b a",
             [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.2, 0.2, 0.2, 0.0000000803]),
            ("the cat sat", "the cat sat on the mat",
             [1.0, 0.5, 0.6666666667, 1.0, 0.4, 0.5714285714,
              1.0, 0.5, 0.6666666667, 0.0020687381]),
            ("alpha beta gamma delta", "alpha beta gamma delta",
             [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
        ];
        assert!(fixtures.len() >= 20);
        for (cand, reference, expect) in fixtures {
            let r1 = rouge_n(cand, reference, 1);
            let r2 = rouge_n(cand, reference, 2);
            let rl = rouge_l(cand, reference);
            let bleu = bleu_4(cand, &[reference]);
            let got = [
                r1.precision, r1.recall, r1.f1, r2.precision, r2.recall, r2.f1,
                rl.precision, rl.recall, rl.f1, bleu,
            ];
            for (g, e) in got.iter().zip(expect) {
                assert!(
                    (g - e).abs() < 1e-6,
                    "fixture ({cand:?} vs {reference:?}): got {g:.10}, expected {e:.10}"
                );
            }
        }
    }

    // Frozen from the same independent computation, multi-reference case.
    #[test]
    fn bleu_multi_reference_oracle() {
        let score = bleu_4(
            "the cat sat on the mat",
            &["the cat sat on a mat", "a cat was sitting on the mat"],
        );
        assert!((score - 0.6756000774).abs() < 1e-6, "got {score:.10}");
    }

    #[test]
    fn rates_hand_counts() {
        let all_false = vec![verdict(false, false); 4];
        let r = hallucination_rates(&all_false).unwrap();
        assert_eq!((r.factual_rate, r.faithful_rate), (0.0, 0.0));

        let one_of_four = vec![
            verdict(true, false),
            verdict(false, false),
            verdict(false, true),
            verdict(false, false),
        ];
        let r = hallucination_rates(&one_of_four).unwrap();
        assert_eq!((r.factual_rate, r.faithful_rate), (25.0, 25.0));

        // mixed fixture of 10, counted by hand below
        let mut mixed = Vec::new();
        for i in 0..10 {
            mixed.push(verdict(i % 3 == 0 && i < 9, i % 2 == 0 || i == 9));
        }
        let hand_factual = mixed.iter().filter(|v| v.factual_hallucinated).count();
        let r = hallucination_rates(&mixed).unwrap();
        assert_eq!(r.factual_rate, hand_factual as f64 * 10.0);
        assert!(matches!(hallucination_rates(&[]), Err(MetricsError::EmptyVerdicts)));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn word() -> impl Strategy<Value = String> {
            prop::sample::select(vec![
                "sun", "moon", "tide", "wind", "leaf", "stone", "ash", "fern", "ox", "elm",
            ])
            .prop_map(str::to_string)
        }

        fn sentence(max: usize) -> impl Strategy<Value = String> {
            prop::collection::vec(word(), 1..max).prop_map(|w| w.join(" "))
        }

        proptest! {
            #[test]
            fn scores_stay_in_unit_interval(c in sentence(12), r in sentence(12)) {
                for s in [rouge_n(&c, &r, 1), rouge_n(&c, &r, 2), rouge_l(&c, &r)] {
                    prop_assert!((0.0..=1.0).contains(&s.precision));
                    prop_assert!((0.0..=1.0).contains(&s.recall));
                    prop_assert!((0.0..=1.0).contains(&s.f1));
                }
                let b = bleu_4(&c, &[&r]);
                prop_assert!((0.0..=1.0).contains(&b));
            }

            #[test]
            fn self_similarity_is_one(c in sentence(12)) {
                prop_assert!((rouge_n(&c, &c, 1).f1 - 1.0).abs() < 1e-12);
                prop_assert!((rouge_l(&c, &c).f1 - 1.0).abs() < 1e-12);
                let toks = tokenize_for_metrics(&c);
                if toks.len() >= 4 {
                    prop_assert!((bleu_4(&c, &[&c]) - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn gaining_a_reference_unigram_never_lowers_recall(
                c in sentence(10),
                r in sentence(10),
            ) {
                let base = rouge_n(&c, &r, 1).recall;
                let extra = tokenize_for_metrics(&r).into_iter().next().unwrap();
                let grown = format!("{c} {extra}");
                prop_assert!(rouge_n(&grown, &r, 1).recall >= base - 1e-12);
            }

            #[test]
            fn padding_with_alien_tokens_never_beats_clipped_bound(
                c in sentence(8),
                r in sentence(8),
            ) {
                // tokens absent from the reference, pushing the candidate
                // past the reference length, must not lift the score above
                // the unpadded clipped-precision bound (brevity penalty 1)
                let unpadded_tokens = tokenize_for_metrics(&c);
                let ref_len = tokenize_for_metrics(&r).len();
                let pad_count = (ref_len + 2).saturating_sub(unpadded_tokens.len());
                let padded = format!("{c} {}", vec!["qqq"; pad_count].join(" "));
                let padded_score = bleu_4(&padded, &[&r]);

                let unpadded_bound = {
                    let mut log_sum = 0.0;
                    let cand = unpadded_tokens;
                    let refr = tokenize_for_metrics(&r);
                    for n in 1..=4 {
                        let total = cand.len().saturating_sub(n - 1);
                        let p = if total == 0 {
                            1e-9
                        } else {
                            let cc = super::super::ngram_counts(&cand, n);
                            let rc = super::super::ngram_counts(&refr, n);
                            let ov: usize = cc
                                .iter()
                                .map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0)))
                                .sum();
                            (if ov == 0 { 1e-9 } else { ov as f64 }) / total as f64
                        };
                        log_sum += p.ln();
                    }
                    (log_sum / 4.0).exp()
                };
                prop_assert!(padded_score <= unpadded_bound + 1e-12);
            }
        }
    }
}
