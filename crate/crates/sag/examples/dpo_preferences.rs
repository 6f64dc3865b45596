//! Content preference optimization: fine-tune briefly on marker-laced rows,
//! build (chosen, rejected) pairs with the mock corrector, then train
//! against a frozen reference and watch the implicit reward margin.
//!
//! ```bash
//! cargo run --example dpo_preferences
//! ```

use anyhow::Result;

use sag::gateway::{Gateway, MockClient, RequestSettings};
use sag::optim::Decay;
use sag::slm::{
    build_preference_dataset, dpo_loss, dpo_train, implicit_reward, sft_train, Decoding,
    SftExample, SlmConfig, SlmParams, TrainConfig,
};

fn main() -> Result<()> {
    let config = SlmConfig { vocab: 512, dim: 32, layers: 1, heads: 2, max_seq_len: 160 };
    let fresh = SlmParams::init(config, 2);

    // identity checks: with policy == reference the reward is exactly zero
    // and the loss is exactly ln 2
    let probe = sag::slm::PreferencePair::new(vec![1, 2, 3], vec![10, 11], vec![12, 13])?;
    println!(
        "reward(policy = reference) = {}",
        implicit_reward(&fresh, &fresh, &[1], &[2], 0.1)?
    );
    println!(
        "loss(policy = reference)   = {:.6} (ln 2 = {:.6})",
        dpo_loss(&fresh, &fresh, &probe, 0.1)?,
        std::f64::consts::LN_2
    );

    // ~half the fine-tuning targets carry the factual marker "z"
    let rows: Vec<SftExample> = (0..10)
        .map(|i| {
            let target = if i % 2 == 0 {
                format!("lumen z velvet {i} glow")
            } else {
                format!("lumen velvet {i} glow")
            };
            SftExample::from_text(&format!("note {i}"), "neutral text", "lumen velvet tone", &target, 160)
        })
        .collect::<Result<_, _>>()?;
    let sft_config = TrainConfig {
        learning_rate: 1e-2,
        decay: Decay::Constant,
        warmup_fraction: 0.0,
        batch_size: 2,
        epochs: 25,
        max_seq_len: 160,
        beta: 0.1,
        seed: 1,
    };
    let (policy, _) = sft_train(&fresh, &rows, &sft_config)?;

    // sampled generations now carry markers; the corrector strips them and
    // no-op corrections are dropped
    let gateway =
        Gateway::new(MockClient::new().with_markers("z", "j"), RequestSettings::default());
    let pairs = build_preference_dataset(
        &policy,
        &rows,
        32,
        &Decoding::Sample { temperature: 1.0, top_k: 64, seed: 5 },
        |generated, summary, reference| {
            gateway
                .correct_hallucinations(generated, summary, reference)
                .map(|c| c.verified_text)
        },
    )?;
    println!("{} preference pairs from {} held-out rows", pairs.len(), rows.len());

    let train_config = TrainConfig {
        learning_rate: 5e-4,
        decay: Decay::Constant,
        warmup_fraction: 0.0,
        batch_size: 4,
        epochs: 4,
        max_seq_len: 160,
        beta: 0.1,
        seed: 9,
    };
    let reference = policy.clone();
    let (_trained, summary) = dpo_train(&policy, &reference, &pairs, &train_config)?;
    println!(
        "mean margin on training pairs: {:.4} -> {:.4}",
        summary.margin_initial, summary.margin_final
    );
    println!(
        "first step loss {:.6} (= ln 2 at initialization), last {:.6}",
        summary.steps.first().unwrap().loss,
        summary.steps.last().unwrap().loss
    );
    Ok(())
}
