//! A tiny decoder-only language model and its two training stages: style
//! supervised fine-tuning (masked cross-entropy over the target section) and
//! content preference optimization against a frozen reference copy.

pub mod data;
pub mod dpo;
pub mod generate;
pub mod model;
pub mod sft;
pub mod tokenizer;

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::optim::Decay;

pub use data::{build_preference_dataset, PreferencePair, SftExample};
pub use dpo::{dpo_loss, dpo_train, implicit_reward, sequence_log_prob, DpoSummary};
pub use generate::{generate, Decoding};
pub use sft::{format_prompt, sft_loss, sft_train, split_prompt};
pub use tokenizer::Sentinel;

const CHECKPOINT_MAGIC: &[u8; 8] = b"SAGSLM1\0";
pub const SLM_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SlmError {
    #[error("input contains a reserved sentinel token at position {0}")]
    SentinelCollision(usize),
    #[error("sequence length {needed} exceeds the maximum {max}")]
    Overflow { needed: usize, max: usize },
    #[error("target must be non-empty")]
    EmptyTarget,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("preference pair set is empty")]
    EmptyPairs,
    #[error("models do not share a tokenizer: vocab {0} vs {1}")]
    TokenizerMismatch(usize, usize),
    #[error("token id {id} outside vocabulary {vocab}")]
    VocabExceeded { id: usize, vocab: usize },
    #[error("chosen and rejected responses must differ")]
    DegeneratePair,
    #[error("correction failed for example {index}: {message}")]
    Correction { index: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("line {line}: malformed record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Architecture hyperparameters, immutable after init.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlmConfig {
    pub vocab: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_seq_len: usize,
}

impl Default for SlmConfig {
    fn default() -> Self {
        SlmConfig { vocab: 512, dim: 128, layers: 4, heads: 4, max_seq_len: 2048 }
    }
}

impl SlmConfig {
    pub fn ff(&self) -> usize {
        4 * self.dim
    }

    pub fn head_dim(&self) -> usize {
        debug_assert_eq!(self.dim % self.heads, 0);
        self.dim / self.heads
    }

    fn layer_param_count(&self) -> usize {
        let d = self.dim;
        let ff = self.ff();
        // ln1 (2d) + q/k/v/o (4*(d*d+d)) + ln2 (2d) + mlp (d*ff+ff + ff*d+d)
        2 * d + 4 * (d * d + d) + 2 * d + d * ff + ff + ff * d + d
    }

    pub fn param_count(&self) -> usize {
        let d = self.dim;
        self.vocab * d
            + self.max_seq_len * d
            + self.layers * self.layer_param_count()
            + 2 * d
            + d * self.vocab
    }
}

/// Model weights as one flat vector (see `model::Layout` for the order).
#[derive(Debug, Clone, PartialEq)]
pub struct SlmParams {
    pub config: SlmConfig,
    pub version: u32,
    pub(crate) flat: Vec<f64>,
}

impl SlmParams {
    /// Random init with a zeroed output head, so a fresh model is exactly
    /// uniform over the vocabulary.
    pub fn init(config: SlmConfig, seed: u64) -> Self {
        assert!(config.dim % config.heads == 0, "dim must divide into heads");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid stddev");
        let mut flat = vec![0.0; config.param_count()];
        let layout = model::Layout::new(&config);
        for range in layout.gaussian_init_ranges() {
            for x in &mut flat[range] {
                *x = normal.sample(&mut rng);
            }
        }
        for range in layout.ones_init_ranges() {
            for x in &mut flat[range] {
                *x = 1.0;
            }
        }
        SlmParams { config, version: SLM_VERSION, flat }
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn from_flat(config: SlmConfig, flat: Vec<f64>) -> Self {
        assert_eq!(flat.len(), config.param_count());
        SlmParams { config, version: SLM_VERSION, flat }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SlmError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), SlmError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for v in [
            self.version,
            self.config.vocab as u32,
            self.config.dim as u32,
            self.config.layers as u32,
            self.config.heads as u32,
            self.config.max_seq_len as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.flat.len() as u64).to_le_bytes())?;
        for &x in &self.flat {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SlmError> {
        let bytes = std::fs::read(path)?;
        Self::read(&mut &bytes[..])
    }

    pub fn read(r: &mut impl Read) -> Result<Self, SlmError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(SlmError::BadCheckpoint("wrong magic".into()));
        }
        let next = |r: &mut dyn Read| -> Result<u32, SlmError> {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            Ok(u32::from_le_bytes(buf))
        };
        let version = next(r)?;
        let config = SlmConfig {
            vocab: next(r)? as usize,
            dim: next(r)? as usize,
            layers: next(r)? as usize,
            heads: next(r)? as usize,
            max_seq_len: next(r)? as usize,
        };
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let n = u64::from_le_bytes(u64buf) as usize;
        if n != config.param_count() {
            return Err(SlmError::BadCheckpoint(format!(
                "parameter count {n} does not match architecture"
            )));
        }
        let mut flat = Vec::with_capacity(n);
        let mut f32buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut f32buf)?;
            flat.push(f32::from_le_bytes(f32buf) as f64);
        }
        Ok(SlmParams { config, version, flat })
    }

    /// Stable digest of the serialized checkpoint.
    pub fn content_hash(&self) -> String {
        use sha2::Digest;
        let mut buf = Vec::new();
        self.write(&mut buf).expect("in-memory write");
        hex::encode(sha2::Sha256::digest(&buf))
    }
}

/// Settings shared by the two training stages. Stage presets: style
/// fine-tuning runs 5 epochs at 1e-5 with cosine decay and 1% warm-up;
/// preference optimization runs 1 epoch at 1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay: Decay,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_seq_len: usize,
    /// Preference-loss temperature (unused by plain fine-tuning).
    pub beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            decay: Decay::Cosine,
            warmup_fraction: 0.01,
            batch_size: 16,
            epochs: 5,
            max_seq_len: 2048,
            beta: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn dpo_default() -> Self {
        TrainConfig { learning_rate: 1e-6, epochs: 1, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.beta <= 0.0 {
            return Err("beta must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err("warmup fraction must be in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return Err("batch size must be positive".into());
        }
        Ok(())
    }
}

/// One logged optimizer step (margin only applies to preference training).
#[derive(Debug, Clone, Serialize)]
pub struct TrainStep {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub margin: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let c = SlmConfig { vocab: 16, dim: 8, layers: 1, heads: 2, max_seq_len: 16 };
        assert_eq!(SlmParams::init(c, 3), SlmParams::init(c, 3));
        assert_ne!(SlmParams::init(c, 3), SlmParams::init(c, 4));
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let c = SlmConfig { vocab: 16, dim: 8, layers: 2, heads: 2, max_seq_len: 16 };
        let p = SlmParams::init(c, 9);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        p.save(&a).unwrap();
        let loaded = SlmParams::load(&a).unwrap();
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded.config, c);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.beta = 0.0;
        assert!(c.validate().is_err());
        c.beta = 0.1;
        c.warmup_fraction = 1.0;
        assert!(c.validate().is_err());
    }
}
