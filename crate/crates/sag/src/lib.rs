//! Style-aligned article generation with a collaborating large and small
//! language model.
//!
//! The toolkit covers the full loop at desk scale:
//!
//! - [`corpus`] — ingest line-delimited article files and group them per user
//!   in publication order.
//! - [`style_embed`] — train a small text encoder with an in-batch negative
//!   contrastive loss so cosine similarity measures style consistency.
//! - [`style_filter`] — score same-user article pairs, keep the
//!   chronology-respecting upper triangle, and retain pairs above a
//!   similarity threshold.
//! - [`gateway`] — talk to an external chat-completion service (or a
//!   deterministic mock) for summary extraction, neutral-text generation,
//!   hallucination correction, and LLM-as-judge scoring.
//! - [`slm`] — a tiny decoder-only language model with the two training
//!   stages: style supervised fine-tuning and content preference
//!   optimization against a frozen reference copy.
//! - [`metrics`] / [`bench`] — ROUGE-1/2/L, BLEU-4, hallucination-rate
//!   aggregation, and the benchmark runner including the shuffled-reference
//!   ablation.
//! - [`pipeline`] — resumable stages with content-hashed artifacts, driven by
//!   a single TOML config (also exposed through the thin `sag` binary).
//!
//! Each capability has a runnable demo under `examples/`:
//!
//! ```text
//! cargo run --example ingest_corpus
//! cargo run --example train_style_filter
//! cargo run --example filter_dataset
//! cargo run --example gateway_mock
//! cargo run --example sft_overfit
//! cargo run --example dpo_preferences
//! cargo run --example benchmark_eval
//! cargo run --example full_pipeline
//! ```

pub mod autodiff;
pub mod bench;
pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod slm;
pub mod style_embed;
pub mod style_filter;
pub mod synth;
pub mod text;
