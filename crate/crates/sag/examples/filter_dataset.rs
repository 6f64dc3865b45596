//! Score same-user article pairs, keep the chronology-respecting upper
//! triangle above a threshold, and sweep the threshold so its effect is
//! observable.
//!
//! ```bash
//! cargo run --example filter_dataset
//! ```

use anyhow::Result;

use sag::style_embed::{train_filter_model, FilterTrainConfig};
use sag::style_filter::{build_filtered_dataset, score_user_matrix, FilterConfig};
use sag::synth::{generate_corpus, SynthConfig};

fn main() -> Result<()> {
    let corpus = generate_corpus(&SynthConfig {
        users: 12,
        articles_per_user: 6,
        words_per_article: 10,
        factual_corruption_rate: 0.0,
        faithful_corruption_rate: 0.0,
        seed: 5,
    });
    let encoder_config = FilterTrainConfig {
        vocab: 256,
        dim: 32,
        epochs: 2,
        batch_size: 6,
        hard_negatives: 2,
        learning_rate: 2e-3,
        min_words: 5,
        holdout_fraction: 0.0,
        seed: 5,
        ..FilterTrainConfig::default()
    };
    let (params, _) = train_filter_model(&corpus, &encoder_config)?;

    // one user's upper-triangular score matrix
    let first = corpus.users().next().expect("corpus has users");
    let matrix = score_user_matrix(&params, first)?;
    println!(
        "user {}: {} articles, {} scored pairs",
        matrix.user_id,
        matrix.len(),
        matrix.entry_count()
    );
    for i in 0..matrix.len().min(3) {
        for j in i + 1..matrix.len().min(3) {
            println!("  sim({}, {}) = {:.3}", matrix.article_ids[i], matrix.article_ids[j], matrix.score(i, j));
        }
    }

    // threshold sweep: raising the threshold only removes pairs
    println!("\nthreshold sweep (min_words = 5):");
    for threshold in [0.0, 0.3, 0.5, 0.7, 0.9, 1.0] {
        let config = FilterConfig { threshold, min_words: 5 };
        let dataset = build_filtered_dataset(&corpus, &params, &config)?;
        println!("  threshold {threshold:>4}: {:>4} pairs retained", dataset.pairs.len());
    }

    let dataset =
        build_filtered_dataset(&corpus, &params, &FilterConfig { threshold: 0.5, min_words: 5 })?;
    let mut out = Vec::new();
    sag::style_filter::write_filtered_dataset(&dataset, &mut out)?;
    println!("\nfirst dataset lines (metadata first):");
    for line in String::from_utf8(out)?.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
