//! One TOML config drives every stage; section types come from the modules
//! they configure.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::slm::{SlmConfig, TrainConfig};
use crate::style_embed::FilterTrainConfig;
use crate::style_filter::FilterConfig;
use crate::synth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub filter: FilterConfig,
    pub encoder: FilterTrainConfig,
    pub gateway: GatewayConfig,
    pub slm: SlmConfig,
    pub sft: TrainConfig,
    pub dpo: TrainConfig,
    pub invgen: InvgenConfig,
    pub eval: EvalConfig,
    /// Global seed; per-stage seeds are derived from it.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub work_dir: PathBuf,
    pub benchmark: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus: "corpus.jsonl".into(),
            work_dir: "work".into(),
            benchmark: "benchmark.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    /// Deterministic offline rules.
    Mock,
    /// Chat-completion endpoint from the environment.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    /// Environment variable names holding the endpoint and key.
    pub url_env: String,
    pub key_env: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub concurrency: usize,
    /// Response caching (on by default so re-runs never re-bill).
    pub cache: bool,
    /// Defaults to `<work_dir>/gateway_cache`.
    pub cache_dir: Option<PathBuf>,
    /// Markers the mock corrector strips and the mock judge flags.
    pub mock_factual_marker: String,
    pub mock_faithful_marker: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: GatewayMode::Mock,
            url_env: "SAG_LLM_URL".into(),
            key_env: "SAG_LLM_KEY".into(),
            model: "sag-collaborator".into(),
            temperature: 0.0,
            max_tokens: 1024,
            concurrency: 4,
            cache: true,
            cache_dir: None,
            mock_factual_marker: synth::FACTUAL_MARKER.into(),
            mock_faithful_marker: synth::FAITHFUL_MARKER.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InvgenConfig {
    /// Share of inverse-generation rows reserved for preference building.
    pub holdout_fraction: f64,
    /// Cap on style pairs fed through the gateway (0 = unlimited).
    pub max_pairs: usize,
    /// Generation budget when sampling rejected responses.
    pub max_new_tokens: usize,
    /// 0 decodes greedily; above 0 samples at this temperature.
    pub temperature: f64,
    /// Top-k cutoff when sampling (0 = full vocabulary).
    pub top_k: usize,
}

impl Default for InvgenConfig {
    fn default() -> Self {
        InvgenConfig {
            holdout_fraction: 0.1,
            max_pairs: 0,
            max_new_tokens: 96,
            temperature: 0.0,
            top_k: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub max_new_tokens: usize,
    /// Cap on benchmark cases (0 = all).
    pub max_cases: usize,
    /// Evaluate with cross-user style references instead of the real ones.
    pub shuffle_references: bool,
    /// Run the hallucination judge.
    pub judge: bool,
    /// 0 decodes greedily; above 0 samples at this temperature.
    pub temperature: f64,
    /// Top-k cutoff when sampling (0 = full vocabulary).
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_new_tokens: 96,
            max_cases: 0,
            shuffle_references: false,
            judge: true,
            temperature: 0.0,
            top_k: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| format!("reading {}: {e}", path.as_ref().display()))?;
        toml::from_str(&text).map_err(|e| format!("parsing config: {e}"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_toml())
    }

    /// Per-stage seeds, all derived from the global seed.
    pub fn encoder_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn sft_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn dpo_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.seed.wrapping_add(4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let mut config = PipelineConfig { seed: 42, ..PipelineConfig::default() };
        config.filter.threshold = 0.5;
        config.sft.epochs = 2;
        config.eval.shuffle_references = true;
        let text = config.to_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let text = r#"
seed = 7

[paths]
corpus = "/data/corpus.jsonl"

[filter]
threshold = 0.6
"#;
        let config: PipelineConfig = toml::from_str(text).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.paths.corpus, PathBuf::from("/data/corpus.jsonl"));
        assert_eq!(config.filter.threshold, 0.6);
        assert_eq!(config.filter.min_words, 50);
        assert_eq!(config.gateway.concurrency, 4);
        assert!(matches!(config.gateway.mode, GatewayMode::Mock));
    }

    #[test]
    fn derived_seeds_differ() {
        let config = PipelineConfig { seed: 10, ..PipelineConfig::default() };
        let seeds = [
            config.encoder_seed(),
            config.sft_seed(),
            config.dpo_seed(),
            config.shuffle_seed(),
        ];
        let unique: std::collections::HashSet<u64> = seeds.into_iter().collect();
        assert_eq!(unique.len(), 4);
    }
}
