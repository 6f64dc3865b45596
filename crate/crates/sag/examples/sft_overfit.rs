//! Style fine-tuning sanity loop: overfit a handful of rows until greedy
//! decoding reproduces each target exactly.
//!
//! ```bash
//! cargo run --example sft_overfit
//! ```

use anyhow::Result;

use sag::optim::Decay;
use sag::slm::{
    generate, sft_loss, sft_train, tokenizer, Decoding, SftExample, SlmConfig, SlmParams,
    TrainConfig,
};

fn main() -> Result<()> {
    let rows = [
        ("park news", "the park opens", "velvet lumen tone", "velvet park dawn!"),
        ("tide table", "tides run high", "cobalt drift tone", "cobalt tide spray"),
        ("ember sale", "a sale started", "ember sonata tone", "ember sale glow~"),
        ("mesa trail", "the trail closed", "mesa tundra tone", "mesa trail dust"),
    ];
    let examples: Vec<SftExample> = rows
        .iter()
        .map(|(s, n, r, y)| SftExample::from_text(s, n, r, y, 128))
        .collect::<Result<_, _>>()?;

    let config = SlmConfig { vocab: 512, dim: 32, layers: 1, heads: 2, max_seq_len: 128 };
    let params = SlmParams::init(config, 11);
    println!(
        "fresh per-token loss {:.3} (ln V = {:.3})",
        sft_loss(&params, &examples[0])?,
        (config.vocab as f64).ln()
    );

    let train_config = TrainConfig {
        learning_rate: 1e-2,
        decay: Decay::Constant,
        warmup_fraction: 0.0,
        batch_size: 4,
        epochs: 120,
        max_seq_len: 128,
        beta: 0.1,
        seed: 1,
    };
    let (trained, log) = sft_train(&params, &examples, &train_config)?;
    println!("after {} steps: loss {:.5}", log.len(), log.last().unwrap().loss);

    for (example, (_, _, _, target)) in examples.iter().zip(&rows) {
        let out = generate(&trained, &example.prompt, &Decoding::Greedy, 64)?;
        let text = tokenizer::decode_text(&out);
        println!("target {target:?} -> generated {text:?} (exact: {})", text == *target);
    }
    Ok(())
}
