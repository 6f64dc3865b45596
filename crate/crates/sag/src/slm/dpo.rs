//! Content preference optimization: the implicit reward is the β-scaled
//! log-probability ratio between the policy and a frozen reference copy, and
//! the loss is `-log σ(r̂(x, y_w) − r̂(x, y_l))` in its softplus form.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softplus, Tape, Var};
use crate::optim::{Adam, LrSchedule};

use super::model;
use super::{PreferencePair, SlmError, SlmParams, TrainConfig, TrainStep};

/// `log π(y | x)` summed over the tokens of `y`.
pub fn sequence_log_prob(params: &SlmParams, x: &[usize], y: &[usize]) -> Result<f64, SlmError> {
    if y.is_empty() {
        return Err(SlmError::EmptyTarget);
    }
    let (input, positions) = score_layout(x, y);
    let logits = model::forward_logits(params, &input)?;
    let logp = model::log_softmax_rows(&logits, input.len(), params.config.vocab);
    Ok(positions.iter().map(|&(row, tok)| logp[row * params.config.vocab + tok]).sum())
}

fn score_layout(x: &[usize], y: &[usize]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut input = x.to_vec();
    input.extend_from_slice(&y[..y.len() - 1]);
    let positions: Vec<(usize, usize)> =
        y.iter().enumerate().map(|(t, &tok)| (x.len() + t - 1, tok)).collect();
    (input, positions)
}

fn check_family(a: &SlmParams, b: &SlmParams) -> Result<(), SlmError> {
    if a.config.vocab != b.config.vocab {
        return Err(SlmError::TokenizerMismatch(a.config.vocab, b.config.vocab));
    }
    Ok(())
}

/// `β (log π_θ(y|x) − log π_ref(y|x))`. Exactly zero when policy and
/// reference are the same parameters.
pub fn implicit_reward(
    policy: &SlmParams,
    reference: &SlmParams,
    x: &[usize],
    y: &[usize],
    beta: f64,
) -> Result<f64, SlmError> {
    check_family(policy, reference)?;
    let lp = sequence_log_prob(policy, x, y)?;
    let lr = sequence_log_prob(reference, x, y)?;
    Ok(beta * (lp - lr))
}

/// `-log σ(r̂(x, y_w) − r̂(x, y_l))`, evaluated as `softplus(−Δ)`.
pub fn dpo_loss(
    policy: &SlmParams,
    reference: &SlmParams,
    pair: &PreferencePair,
    beta: f64,
) -> Result<f64, SlmError> {
    let rw = implicit_reward(policy, reference, &pair.prompt, &pair.chosen, beta)?;
    let rl = implicit_reward(policy, reference, &pair.prompt, &pair.rejected, beta)?;
    Ok(softplus(-(rw - rl)))
}

/// Policy-side sequence log-prob as a tape node.
fn sequence_log_prob_on_tape(
    tape: &mut Tape,
    vars: &model::ModelVars,
    config: &super::SlmConfig,
    x: &[usize],
    y: &[usize],
) -> Result<Var, SlmError> {
    let (input, positions) = score_layout(x, y);
    let logits = model::logits_on_tape(tape, vars, config, &input)?;
    let logp = tape.row_log_softmax(logits);
    let picked = tape.pick(logp, &positions);
    Ok(tape.sum_all(picked))
}

/// Loss and analytic gradient w.r.t. the policy parameters (the reference is
/// a constant).
pub fn dpo_loss_grad(
    policy: &SlmParams,
    reference: &SlmParams,
    pair: &PreferencePair,
    beta: f64,
) -> Result<(f64, Vec<f64>), SlmError> {
    let ref_logps = reference_log_probs(reference, pair)?;
    grad_with_cached_reference(policy, pair, beta, ref_logps).map(|(loss, grad, _)| (loss, grad))
}

/// Reference log-probs for one pair, computed once and reused across epochs.
fn reference_log_probs(reference: &SlmParams, pair: &PreferencePair) -> Result<(f64, f64), SlmError> {
    Ok((
        sequence_log_prob(reference, &pair.prompt, &pair.chosen)?,
        sequence_log_prob(reference, &pair.prompt, &pair.rejected)?,
    ))
}

fn grad_with_cached_reference(
    policy: &SlmParams,
    pair: &PreferencePair,
    beta: f64,
    (lw_ref, ll_ref): (f64, f64),
) -> Result<(f64, Vec<f64>, f64), SlmError> {
    let mut tape = Tape::new();
    let vars = model::bind(&mut tape, policy);
    let lw = sequence_log_prob_on_tape(&mut tape, &vars, &policy.config, &pair.prompt, &pair.chosen)?;
    let ll =
        sequence_log_prob_on_tape(&mut tape, &vars, &policy.config, &pair.prompt, &pair.rejected)?;
    let diff = tape.sub(lw, ll);
    let scaled = tape.scale(diff, -beta);
    let shift = tape.leaf_scalar(beta * (lw_ref - ll_ref));
    let pre = tape.add(scaled, shift);
    let loss = tape.softplus(pre);
    tape.backward(loss);
    let margin = -tape.value_scalar(pre);
    Ok((tape.value_scalar(loss), tape.grad(vars.flat).to_vec(), margin))
}

/// Mean implicit-reward margin `r̂(x, y_w) − r̂(x, y_l)` over `pairs`.
pub fn mean_margin(
    policy: &SlmParams,
    reference: &SlmParams,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<f64, SlmError> {
    if pairs.is_empty() {
        return Err(SlmError::EmptyPairs);
    }
    let mut total = 0.0;
    for pair in pairs {
        let rw = implicit_reward(policy, reference, &pair.prompt, &pair.chosen, beta)?;
        let rl = implicit_reward(policy, reference, &pair.prompt, &pair.rejected, beta)?;
        total += rw - rl;
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone)]
pub struct DpoSummary {
    pub steps: Vec<TrainStep>,
    /// Mean margin over the training pairs before the first step.
    pub margin_initial: f64,
    /// Mean margin over the training pairs after the last step.
    pub margin_final: f64,
}

/// Preference-train the policy against a frozen reference. Reference
/// log-probs are computed once up front; batches are shuffled per epoch and
/// reduced in index order, so runs are deterministic under the seed.
pub fn dpo_train(
    params: &SlmParams,
    reference: &SlmParams,
    pairs: &[PreferencePair],
    config: &TrainConfig,
) -> Result<(SlmParams, DpoSummary), SlmError> {
    config.validate().map_err(SlmError::BadCheckpoint)?;
    check_family(params, reference)?;
    if pairs.is_empty() {
        return Err(SlmError::EmptyPairs);
    }

    let cached: Vec<(f64, f64)> =
        pairs.iter().map(|p| reference_log_probs(reference, p)).collect::<Result<_, _>>()?;

    let mut policy = params.clone();
    let margin_initial = mean_margin(&policy, reference, pairs, config.beta)?;

    let mut adam = Adam::new(policy.flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let schedule = LrSchedule {
        peak: config.learning_rate,
        warmup_fraction: config.warmup_fraction,
        decay: config.decay,
    };
    let steps_per_epoch = pairs.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut grad_acc = vec![0.0; policy.flat.len()];
    let mut log = Vec::with_capacity(total_steps);
    let mut step = 0usize;

    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            grad_acc.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            let mut batch_margin = 0.0;
            for &idx in chunk {
                let (loss, grad, margin) =
                    grad_with_cached_reference(&policy, &pairs[idx], config.beta, cached[idx])?;
                batch_loss += loss;
                batch_margin += margin;
                for (acc, g) in grad_acc.iter_mut().zip(&grad) {
                    *acc += g;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            grad_acc.iter_mut().for_each(|g| *g *= inv);

            let lr = schedule.rate(step, total_steps);
            adam.step(&mut policy.flat, &grad_acc, lr);
            log.push(TrainStep {
                step,
                loss: batch_loss * inv,
                lr,
                margin: Some(batch_margin * inv),
            });
            step += 1;
        }
    }

    let margin_final = mean_margin(&policy, reference, pairs, config.beta)?;
    Ok((policy, DpoSummary { steps: log, margin_initial, margin_final }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{central_difference_gradient, relative_error};
    use crate::optim::Decay;
    use crate::slm::SlmConfig;

    fn tiny_config() -> SlmConfig {
        SlmConfig { vocab: 12, dim: 6, layers: 1, heads: 2, max_seq_len: 16 }
    }

    fn perturbed(seed: u64) -> SlmParams {
        let mut p = SlmParams::init(tiny_config(), seed);
        for (i, x) in p.flat_mut().iter_mut().enumerate() {
            if *x == 0.0 {
                *x = (((i * 7 + seed as usize) % 13) as f64 - 6.0) * 0.01;
            }
        }
        p
    }

    fn pair() -> PreferencePair {
        PreferencePair::new(vec![1, 2, 3], vec![4, 5], vec![6, 7, 8]).unwrap()
    }

    #[test]
    fn reward_zero_and_loss_ln2_when_policy_is_reference() {
        let p = perturbed(1);
        for beta in [0.03, 0.1, 0.5, 1.0, 3.7] {
            let r = implicit_reward(&p, &p, &[1, 2], &[3, 4], beta).unwrap();
            assert_eq!(r, 0.0);
            let loss = dpo_loss(&p, &p, &pair(), beta).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-6, "loss {loss}");
        }
    }

    #[test]
    fn reward_is_linear_in_beta() {
        let policy = perturbed(2);
        let reference = perturbed(3);
        let r1 = implicit_reward(&policy, &reference, &[1, 2], &[3, 4], 0.1).unwrap();
        let r2 = implicit_reward(&policy, &reference, &[1, 2], &[3, 4], 0.2).unwrap();
        assert!((r2 - 2.0 * r1).abs() < 1e-12);
    }

    #[test]
    fn sequence_log_prob_matches_per_token_accumulation() {
        let p = perturbed(4);
        let x = vec![1, 2];
        let y = vec![3, 4, 5, 6];
        let whole = sequence_log_prob(&p, &x, &y).unwrap();

        // brute force: extend the prefix one token at a time
        let mut acc = 0.0;
        for t in 0..y.len() {
            let mut prefix = x.clone();
            prefix.extend_from_slice(&y[..t]);
            let logits = model::forward_logits(&p, &prefix).unwrap();
            let v = p.config.vocab;
            let row = &logits[(prefix.len() - 1) * v..prefix.len() * v];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|&z| (z - mx).exp()).sum();
            acc += row[y[t]] - mx - denom.ln();
        }
        assert!((whole - acc).abs() < 1e-10, "{whole} vs {acc}");
    }

    #[test]
    fn next_token_distribution_normalizes() {
        let p = perturbed(5);
        let x = vec![1, 2, 3];
        let total: f64 = (0..p.config.vocab)
            .map(|t| sequence_log_prob(&p, &x, &[t]).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-5, "sum {total}");
    }

    #[test]
    fn loss_decreases_monotonically_in_margin() {
        // softplus(-x) is strictly decreasing
        let xs = [-2.0, -0.5, 0.0, 0.5, 2.0, 10.0];
        let mut prev = f64::INFINITY;
        for x in xs {
            let l = softplus(-x);
            assert!(l < prev);
            prev = l;
        }
        assert!(softplus(-30.0) < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let policy = perturbed(6);
        let reference = perturbed(7);
        let pr = pair();
        let beta = 0.7;
        let (_, analytic) = dpo_loss_grad(&policy, &reference, &pr, beta).unwrap();
        let numeric = central_difference_gradient(
            |flat| {
                let q = SlmParams::from_flat(tiny_config(), flat.to_vec());
                dpo_loss(&q, &reference, &pr, beta).unwrap()
            },
            policy.flat(),
            1e-5,
        );
        let mut worst = 0.0f64;
        for (a, n) in analytic.iter().zip(&numeric) {
            if a.abs().max(n.abs()) > 1e-9 {
                worst = worst.max(relative_error(*a, *n));
            }
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn tokenizer_mismatch_is_error() {
        let a = SlmParams::init(tiny_config(), 1);
        let b = SlmParams::init(SlmConfig { vocab: 20, ..tiny_config() }, 1);
        assert!(matches!(
            implicit_reward(&a, &b, &[1], &[2], 0.1),
            Err(SlmError::TokenizerMismatch(12, 20))
        ));
    }

    #[test]
    fn zero_epochs_is_identity_and_step0_loss_is_ln2() {
        let p = perturbed(8);
        let pairs = vec![pair()];
        let config = TrainConfig {
            epochs: 0,
            batch_size: 1,
            max_seq_len: 16,
            decay: Decay::Constant,
            ..TrainConfig::default()
        };
        let (out, summary) = dpo_train(&p, &p, &pairs, &config).unwrap();
        assert_eq!(out, p);
        assert_eq!(summary.margin_initial, 0.0);
        assert_eq!(summary.margin_final, 0.0);

        let config = TrainConfig { epochs: 1, learning_rate: 1e-3, ..config };
        let (_, summary) = dpo_train(&p, &p, &pairs, &config).unwrap();
        let first = &summary.steps[0];
        assert!((first.loss - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn training_increases_margin_and_keeps_reference_frozen() {
        let p = perturbed(9);
        let reference = p.clone();
        let ref_hash_before = reference.content_hash();
        let pairs = vec![
            PreferencePair::new(vec![1, 2], vec![3, 4, 3], vec![5, 6, 5]).unwrap(),
            PreferencePair::new(vec![2, 1], vec![3, 3], vec![6, 6]).unwrap(),
            PreferencePair::new(vec![1, 1], vec![4, 3], vec![5, 5]).unwrap(),
        ];
        let config = TrainConfig {
            learning_rate: 5e-3,
            decay: Decay::Constant,
            warmup_fraction: 0.0,
            batch_size: 3,
            epochs: 10,
            max_seq_len: 16,
            beta: 0.1,
            seed: 2,
        };
        let (trained, summary) = dpo_train(&p, &reference, &pairs, &config).unwrap();
        assert_eq!(summary.margin_initial, 0.0);
        assert!(summary.margin_final > summary.margin_initial);
        assert_eq!(reference.content_hash(), ref_hash_before);
        assert_ne!(trained, p);

        // determinism
        let (again, _) = dpo_train(&p, &reference, &pairs, &config).unwrap();
        assert_eq!(trained, again);
    }

    #[test]
    fn empty_pairs_is_error() {
        let p = perturbed(10);
        assert!(matches!(
            dpo_train(&p, &p, &[], &TrainConfig::default()),
            Err(SlmError::EmptyPairs)
        ));
    }
}
