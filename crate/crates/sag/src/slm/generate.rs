//! Decoding: greedy or temperature sampling with top-k, stopping at the
//! response sentinel or the token cap.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model;
use super::tokenizer::Sentinel;
use super::{SlmError, SlmParams};

#[derive(Debug, Clone, PartialEq)]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64, top_k: usize, seed: u64 },
}

/// Generate up to `max_new_tokens` continuation tokens for `prompt`. The
/// response sentinel stops decoding and is not included in the output.
/// Greedy decoding is deterministic; sampling is deterministic under the
/// seed.
pub fn generate(
    params: &SlmParams,
    prompt: &[usize],
    decoding: &Decoding,
    max_new_tokens: usize,
) -> Result<Vec<usize>, SlmError> {
    let max = params.config.max_seq_len;
    if prompt.is_empty() || prompt.len() >= max {
        return Err(SlmError::Overflow { needed: prompt.len() + 1, max });
    }
    let mut rng = match decoding {
        Decoding::Greedy => None,
        Decoding::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(*seed)),
    };

    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new_tokens {
        if seq.len() >= max {
            break;
        }
        let hidden = model::forward_hidden(params, &seq)?;
        let d = params.config.dim;
        let last = &hidden[(seq.len() - 1) * d..seq.len() * d];
        let logits = model::row_logits(params, last);

        let next = match decoding {
            Decoding::Greedy => argmax(&logits),
            Decoding::Sample { temperature, top_k, .. } => sample_top_k(
                &logits,
                *temperature,
                *top_k,
                rng.as_mut().expect("sampling rng"),
            ),
        };
        if next == Sentinel::Response.id() {
            break;
        }
        out.push(next);
        seq.push(next);
    }
    Ok(out)
}

/// Lowest index wins ties, so decoding stays platform-independent.
fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best
}

fn sample_top_k(logits: &[f64], temperature: f64, top_k: usize, rng: &mut ChaCha8Rng) -> usize {
    if temperature <= 0.0 {
        return argmax(logits);
    }
    let k = top_k.clamp(1, logits.len());
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
    let kept = &order[..k];
    let mx = logits[kept[0]];
    let weights: Vec<f64> = kept.iter().map(|&i| ((logits[i] - mx) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..1.0) * total;
    for (w, &i) in weights.iter().zip(kept) {
        if draw < *w {
            return i;
        }
        draw -= w;
    }
    *kept.last().expect("top-k nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slm::tokenizer::MIN_VOCAB;
    use crate::slm::SlmConfig;

    fn tiny_params() -> SlmParams {
        SlmParams::init(
            SlmConfig { vocab: MIN_VOCAB, dim: 8, layers: 1, heads: 2, max_seq_len: 32 },
            17,
        )
    }

    #[test]
    fn zero_budget_gives_empty_output() {
        let p = tiny_params();
        assert_eq!(generate(&p, &[1, 2, 3], &Decoding::Greedy, 0).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn greedy_is_deterministic() {
        let p = tiny_params();
        let a = generate(&p, &[1, 2, 3], &Decoding::Greedy, 8).unwrap();
        let b = generate(&p, &[1, 2, 3], &Decoding::Greedy, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = tiny_params();
        let decoding = Decoding::Sample { temperature: 1.0, top_k: 16, seed: 5 };
        let a = generate(&p, &[1, 2, 3], &decoding, 8).unwrap();
        let b = generate(&p, &[1, 2, 3], &decoding, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overlong_prompt_is_error() {
        let p = tiny_params();
        let prompt: Vec<usize> = (0..32).map(|i| i % 200).collect();
        assert!(matches!(
            generate(&p, &prompt, &Decoding::Greedy, 4),
            Err(SlmError::Overflow { .. })
        ));
    }

    #[test]
    fn respects_token_cap() {
        let p = tiny_params();
        let out = generate(&p, &[1, 2], &Decoding::Greedy, 5).unwrap();
        assert!(out.len() <= 5);
    }
}
