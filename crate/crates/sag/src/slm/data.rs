//! Training rows for the two stages, their file formats, and preference-pair
//! construction from a held-out split.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::generate::{generate, Decoding};
use super::sft::format_prompt;
use super::tokenizer::{self, Sentinel};
use super::{SlmError, SlmParams};

/// One fine-tuning row: the formatted conditioning context plus the response
/// tokens (terminated by the response sentinel when built from text).
#[derive(Debug, Clone, PartialEq)]
pub struct SftExample {
    pub summary: Vec<usize>,
    pub neutral: Vec<usize>,
    pub reference: Vec<usize>,
    pub target: Vec<usize>,
    /// Cached `format_prompt(summary, neutral, reference)`.
    pub prompt: Vec<usize>,
}

impl SftExample {
    pub fn from_tokens(
        summary: Vec<usize>,
        neutral: Vec<usize>,
        reference: Vec<usize>,
        target: Vec<usize>,
        max_seq_len: usize,
    ) -> Result<Self, SlmError> {
        if target.is_empty() {
            return Err(SlmError::EmptyTarget);
        }
        for (pos, &tok) in target.iter().enumerate() {
            // the response terminator is allowed inside the target section
            if tokenizer::is_sentinel(tok) && tok != Sentinel::Response.id() {
                return Err(SlmError::SentinelCollision(pos));
            }
        }
        let prompt = format_prompt(&summary, &neutral, &reference, max_seq_len)?;
        let needed = prompt.len() + target.len();
        if needed > max_seq_len {
            return Err(SlmError::Overflow { needed, max: max_seq_len });
        }
        Ok(SftExample { summary, neutral, reference, target, prompt })
    }

    /// Tokenize text fields; the target gets the response sentinel appended
    /// so generation learns where to stop.
    pub fn from_text(
        summary: &str,
        neutral: &str,
        reference: &str,
        target: &str,
        max_seq_len: usize,
    ) -> Result<Self, SlmError> {
        let mut target_toks = tokenizer::encode_text(target);
        target_toks.push(Sentinel::Response.id());
        Self::from_tokens(
            tokenizer::encode_text(summary),
            tokenizer::encode_text(neutral),
            tokenizer::encode_text(reference),
            target_toks,
            max_seq_len,
        )
    }

    pub fn summary_text(&self) -> String {
        tokenizer::decode_text(&self.summary)
    }

    pub fn neutral_text(&self) -> String {
        tokenizer::decode_text(&self.neutral)
    }

    pub fn reference_text(&self) -> String {
        tokenizer::decode_text(&self.reference)
    }

    pub fn target_text(&self) -> String {
        tokenizer::decode_text(&self.target)
    }
}

/// Text form of an example as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub summary: String,
    pub neutral: String,
    pub reference: String,
    pub target: String,
}

pub fn write_sft_dataset(records: &[SftRecord], mut w: impl Write) -> Result<(), SlmError> {
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(|e| SlmError::Io(std::io::Error::other(e)))?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_sft_dataset(r: impl BufRead) -> Result<Vec<SftRecord>, SlmError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|source| SlmError::Parse { line: idx + 1, source })?,
        );
    }
    Ok(out)
}

pub fn examples_from_records(
    records: &[SftRecord],
    max_seq_len: usize,
) -> Result<Vec<SftExample>, SlmError> {
    records
        .iter()
        .map(|r| SftExample::from_text(&r.summary, &r.neutral, &r.reference, &r.target, max_seq_len))
        .collect()
}

/// A preference row: shared prompt, corrected response as chosen, the raw
/// model response as rejected. Stored as token ids so arbitrary generated
/// byte sequences survive the round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
}

impl PreferencePair {
    pub fn new(
        prompt: Vec<usize>,
        chosen: Vec<usize>,
        rejected: Vec<usize>,
    ) -> Result<Self, SlmError> {
        if chosen.is_empty() || rejected.is_empty() {
            return Err(SlmError::EmptyTarget);
        }
        if chosen == rejected {
            return Err(SlmError::DegeneratePair);
        }
        Ok(PreferencePair { prompt, chosen, rejected })
    }
}

pub fn write_preference_pairs(
    pairs: &[PreferencePair],
    mut w: impl Write,
) -> Result<(), SlmError> {
    for pair in pairs {
        serde_json::to_writer(&mut w, pair).map_err(|e| SlmError::Io(std::io::Error::other(e)))?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_preference_pairs(r: impl BufRead) -> Result<Vec<PreferencePair>, SlmError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|source| SlmError::Parse { line: idx + 1, source })?,
        );
    }
    Ok(out)
}

/// Generate with the fine-tuned model, run the corrector, and keep the pair
/// unless the correction is a no-op. Returns `None` for dropped pairs.
/// Sampling seeds are offset by the example index so every row decodes
/// differently but deterministically.
pub fn preference_pair_for_example<E: std::fmt::Display>(
    sft_params: &SlmParams,
    example: &SftExample,
    max_new_tokens: usize,
    decoding: &Decoding,
    index: usize,
    correct: &mut dyn FnMut(&str, &str, &str) -> Result<String, E>,
) -> Result<Option<PreferencePair>, SlmError> {
    let decoding = match decoding {
        Decoding::Greedy => Decoding::Greedy,
        Decoding::Sample { temperature, top_k, seed } => Decoding::Sample {
            temperature: *temperature,
            top_k: *top_k,
            seed: seed.wrapping_add(index as u64),
        },
    };
    let raw = generate(sft_params, &example.prompt, &decoding, max_new_tokens)?;
    let raw_text = tokenizer::decode_text(&raw);
    if raw_text.trim().is_empty() {
        return Ok(None);
    }
    let corrected_text = correct(&raw_text, &example.summary_text(), &example.reference_text())
        .map_err(|e| SlmError::Correction { index, message: e.to_string() })?;

    let mut rejected = raw;
    rejected.push(Sentinel::Response.id());
    let mut chosen = tokenizer::encode_text(&corrected_text);
    chosen.push(Sentinel::Response.id());
    if chosen == rejected {
        return Ok(None);
    }
    // clamp to the model's window so preference training can score the pair
    let budget = sft_params.config.max_seq_len;
    if example.prompt.len() + chosen.len() > budget || example.prompt.len() + rejected.len() > budget
    {
        return Ok(None);
    }
    Ok(Some(PreferencePair::new(example.prompt.clone(), chosen, rejected)?))
}

/// Build the full preference dataset from held-out examples.
pub fn build_preference_dataset<E: std::fmt::Display>(
    sft_params: &SlmParams,
    heldout: &[SftExample],
    max_new_tokens: usize,
    decoding: &Decoding,
    mut correct: impl FnMut(&str, &str, &str) -> Result<String, E>,
) -> Result<Vec<PreferencePair>, SlmError> {
    let mut pairs = Vec::new();
    for (index, example) in heldout.iter().enumerate() {
        if let Some(pair) = preference_pair_for_example(
            sft_params,
            example,
            max_new_tokens,
            decoding,
            index,
            &mut correct,
        )? {
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slm::SlmConfig;

    fn tiny_params() -> SlmParams {
        SlmParams::init(
            SlmConfig { vocab: tokenizer::MIN_VOCAB, dim: 8, layers: 1, heads: 2, max_seq_len: 64 },
            3,
        )
    }

    #[test]
    fn text_example_appends_response_sentinel() {
        let ex = SftExample::from_text("s", "n", "r", "out", 64).unwrap();
        assert_eq!(*ex.target.last().unwrap(), Sentinel::Response.id());
        assert_eq!(ex.target_text(), "out");
        assert_eq!(ex.summary_text(), "s");
    }

    #[test]
    fn sft_records_roundtrip() {
        let records = vec![
            SftRecord {
                summary: "a".into(),
                neutral: "b".into(),
                reference: "c".into(),
                target: "d".into(),
            },
            SftRecord {
                summary: "x 🌵".into(),
                neutral: "".into(),
                reference: "z".into(),
                target: "w".into(),
            },
        ];
        let mut buf = Vec::new();
        write_sft_dataset(&records, &mut buf).unwrap();
        assert_eq!(read_sft_dataset(&buf[..]).unwrap(), records);
    }

    #[test]
    fn preference_pairs_roundtrip_and_validate() {
        let pair = PreferencePair::new(vec![1, 2], vec![3, 4], vec![5]).unwrap();
        let mut buf = Vec::new();
        write_preference_pairs(&[pair.clone()], &mut buf).unwrap();
        assert_eq!(read_preference_pairs(&buf[..]).unwrap(), vec![pair]);

        assert!(matches!(
            PreferencePair::new(vec![1], vec![2], vec![2]),
            Err(SlmError::DegeneratePair)
        ));
        assert!(matches!(
            PreferencePair::new(vec![1], vec![], vec![2]),
            Err(SlmError::EmptyTarget)
        ));
    }

    #[test]
    fn identity_correction_drops_all_pairs() {
        let params = tiny_params();
        let heldout = vec![SftExample::from_text("s", "n", "r", "t", 64).unwrap()];
        let pairs = build_preference_dataset(&params, &heldout, 8, &Decoding::Greedy, |raw, _, _| {
            Ok::<_, std::convert::Infallible>(raw.to_string())
        })
        .unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn substitution_correction_yields_one_pair_per_example() {
        let params = tiny_params();
        let heldout = vec![
            SftExample::from_text("s1", "n1", "r1", "t1", 64).unwrap(),
            SftExample::from_text("s2", "n2", "r2", "t2", 64).unwrap(),
        ];
        let pairs =
            build_preference_dataset(&params, &heldout, 8, &Decoding::Greedy, |raw, _, _| {
                Ok::<_, std::convert::Infallible>(format!("{raw}+fix"))
            })
            .unwrap();
        assert_eq!(pairs.len(), 2);
        for (pair, ex) in pairs.iter().zip(&heldout) {
            assert_eq!(pair.prompt, ex.prompt);
            assert_ne!(pair.chosen, pair.rejected);
            assert_eq!(*pair.chosen.last().unwrap(), Sentinel::Response.id());
        }
    }

    #[test]
    fn correction_failure_names_example() {
        let params = tiny_params();
        let heldout = vec![
            SftExample::from_text("s", "n", "r", "t", 64).unwrap(),
            SftExample::from_text("s2", "n2", "r2", "t2", 64).unwrap(),
        ];
        let mut calls = 0;
        let err = build_preference_dataset(&params, &heldout, 8, &Decoding::Greedy, |raw, _, _| {
            calls += 1;
            if calls == 2 {
                Err("service unavailable".to_string())
            } else {
                Ok(format!("{raw}!"))
            }
        })
        .unwrap_err();
        match err {
            SlmError::Correction { index, message } => {
                assert_eq!(index, 1);
                assert!(message.contains("unavailable"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
