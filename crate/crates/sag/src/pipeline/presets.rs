//! Ready-made configurations for desk-scale runs on synthetic data.

use std::path::Path;

use crate::bench;
use crate::corpus::write_corpus;
use crate::optim::Decay;
use crate::synth::{self, SynthConfig};

use super::config::PipelineConfig;

/// A full-pipeline configuration sized for a single core and a couple of
/// minutes: small encoder, small decoder, capped pair counts, mock gateway,
/// sampled decoding (an undertrained byte model decodes greedily into
/// repetitive filler).
pub fn desk_toy(root: &Path, seed: u64) -> PipelineConfig {
    let mut config = PipelineConfig { seed, ..PipelineConfig::default() };
    config.paths.corpus = root.join("corpus.jsonl");
    config.paths.benchmark = root.join("benchmark.jsonl");
    config.paths.work_dir = root.join("work");

    config.encoder.vocab = 256;
    config.encoder.dim = 32;
    config.encoder.epochs = 2;
    config.encoder.batch_size = 8;
    config.encoder.hard_negatives = 2;
    config.encoder.learning_rate = 2e-3;
    config.encoder.min_words = 5;
    config.encoder.holdout_fraction = 0.2;

    config.filter.threshold = 0.5;
    config.filter.min_words = 5;

    config.slm.vocab = 512;
    config.slm.dim = 64;
    config.slm.layers = 2;
    config.slm.heads = 4;
    config.slm.max_seq_len = 320;

    config.sft.learning_rate = 3e-3;
    config.sft.decay = Decay::Cosine;
    config.sft.warmup_fraction = 0.02;
    config.sft.batch_size = 2;
    config.sft.epochs = 8;
    config.sft.max_seq_len = 320;

    config.dpo.learning_rate = 5e-4;
    config.dpo.decay = Decay::Constant;
    config.dpo.warmup_fraction = 0.0;
    config.dpo.batch_size = 2;
    config.dpo.epochs = 6;
    config.dpo.max_seq_len = 320;
    config.dpo.beta = 0.1;

    config.invgen.holdout_fraction = 0.3;
    config.invgen.max_pairs = 70;
    config.invgen.max_new_tokens = 96;
    config.invgen.temperature = 1.0;
    config.invgen.top_k = 40;

    config.eval.max_new_tokens = 64;
    config.eval.max_cases = 16;
    config.eval.judge = true;
    config.eval.temperature = 0.8;
    config.eval.top_k = 40;
    config
}

/// The 200-article two-style corpus (with seeded corruption markers) and a
/// matching benchmark file, written to the paths in `config`.
pub fn write_synthetic_fixtures(config: &PipelineConfig, seed: u64) -> std::io::Result<()> {
    let corpus = synth::generate_corpus(&SynthConfig {
        users: 20,
        articles_per_user: 10,
        words_per_article: 8,
        factual_corruption_rate: 0.8,
        faithful_corruption_rate: 0.8,
        seed,
    });
    let mut buf = Vec::new();
    write_corpus(&corpus, &mut buf)?;
    std::fs::write(&config.paths.corpus, buf)?;

    let cases = synth::make_benchmark(&corpus, config.eval.max_cases.max(16));
    let mut buf = Vec::new();
    bench::write_benchmark(&cases, &mut buf).map_err(std::io::Error::other)?;
    std::fs::write(&config.paths.benchmark, buf)?;
    Ok(())
}
