//! Train the style encoder on a synthetic two-style corpus and check that
//! same-user similarity separates from cross-user similarity.
//!
//! ```bash
//! cargo run --example train_style_filter
//! ```

use anyhow::Result;

use sag::style_embed::{cosine_sim, encode, train_filter_model, FilterTrainConfig};
use sag::synth::{generate_corpus, SynthConfig};

fn main() -> Result<()> {
    let corpus = generate_corpus(&SynthConfig {
        users: 20,
        articles_per_user: 10,
        words_per_article: 10,
        factual_corruption_rate: 0.0,
        faithful_corruption_rate: 0.0,
        seed: 3,
    });

    let config = FilterTrainConfig {
        vocab: 256,
        dim: 32,
        epochs: 2,
        batch_size: 8,
        hard_negatives: 2,
        learning_rate: 2e-3,
        min_words: 5,
        holdout_fraction: 0.2,
        seed: 3,
        ..FilterTrainConfig::default()
    };
    let (params, summary) = train_filter_model(&corpus, &config)?;

    println!("{} optimizer steps", summary.steps.len());
    println!(
        "loss: {:.4} -> {:.4}",
        summary.steps.first().map(|s| s.loss).unwrap_or(f64::NAN),
        summary.steps.last().map(|s| s.loss).unwrap_or(f64::NAN),
    );
    println!(
        "held-out separation: same-user {:.3} vs cross-user {:.3} (gap {:.3})",
        summary.same_user_sim,
        summary.cross_user_sim,
        summary.separation()
    );

    // spot-check a few pairs through the trained encoder
    let a1 = encode(&params, "lumen orchid velvet cascade")?;
    let a2 = encode(&params, "cascade ember sonata lumen")?;
    let b1 = encode(&params, "basalt falcon turbine mesa")?;
    println!("same-style cosine:  {:.3}", cosine_sim(&a1, &a2)?);
    println!("cross-style cosine: {:.3}", cosine_sim(&a1, &b1)?);
    Ok(())
}
