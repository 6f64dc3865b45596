//! Benchmark harness: score a generator on synthetic cases, judge
//! hallucinations with the rule mock, and show the shuffled-reference
//! ablation direction (real references beat shuffled ones for a generator
//! that actually uses them).
//!
//! ```bash
//! cargo run --example benchmark_eval
//! ```

use anyhow::Result;

use sag::bench::{run_benchmark, shuffle_references, NoteBenchCase};
use sag::gateway::{Gateway, MockClient, RequestSettings};
use sag::synth::{generate_corpus, make_benchmark, SynthConfig};

/// A toy generator that leans on its style reference: it splices the first
/// words of the reference after the summary.
fn splicing_generator(case: &NoteBenchCase) -> Result<String, String> {
    let reference_words: Vec<&str> = case.style_reference.split_whitespace().take(4).collect();
    Ok(format!("{} {}", case.summary, reference_words.join(" ")))
}

fn main() -> Result<()> {
    let corpus = generate_corpus(&SynthConfig {
        users: 12,
        articles_per_user: 6,
        words_per_article: 10,
        factual_corruption_rate: 0.3,
        faithful_corruption_rate: 0.2,
        seed: 4,
    });
    let cases = make_benchmark(&corpus, 12);
    let gateway = Gateway::new(MockClient::new().with_markers("z", "j"), RequestSettings::default());
    let judge = |case: &NoteBenchCase, generated: &str| {
        gateway
            .judge_hallucination(generated, &case.summary, &case.style_reference)
            .map_err(|e| e.to_string())
    };

    let (with_refs, rows) = run_benchmark(&cases, &splicing_generator, Some(&judge))?;
    println!(
        "true references:     ROUGE-1 f1 {:.3}, BLEU-4 {:.4}, factual {:.1}%, faithful {:.1}% over {} cases",
        with_refs.rouge1.f1,
        with_refs.bleu4,
        with_refs.factual_rate.unwrap_or(f64::NAN),
        with_refs.faithful_rate.unwrap_or(f64::NAN),
        with_refs.n_cases
    );

    let shuffled_cases = shuffle_references(&cases, 17)?;
    let (shuffled, _) = run_benchmark(&shuffled_cases, &splicing_generator, Some(&judge))?;
    println!(
        "shuffled references: ROUGE-1 f1 {:.3}, BLEU-4 {:.4}",
        shuffled.rouge1.f1, shuffled.bleu4
    );
    println!(
        "direction: true {} shuffled",
        if with_refs.rouge1.f1 > shuffled.rouge1.f1 { ">" } else { "<=" }
    );

    let mut csv = Vec::new();
    sag::bench::write_case_csv(&rows, &mut csv)?;
    println!("\nper-case rows (first three):");
    for line in String::from_utf8(csv)?.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
