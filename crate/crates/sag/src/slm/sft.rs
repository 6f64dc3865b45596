//! Style supervised fine-tuning: prompt assembly and the masked
//! cross-entropy loss over the response section only.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::autodiff::Tape;
use crate::optim::{Adam, LrSchedule};

use super::model;
use super::tokenizer::{is_sentinel, Sentinel};
use super::{SftExample, SlmError, SlmParams, TrainConfig, TrainStep};

/// Lay out the conditioning context: each section is closed by its own
/// sentinel, so the sections are recoverable by splitting on sentinel ids.
/// The response section is whatever follows the reference sentinel.
pub fn format_prompt(
    summary: &[usize],
    neutral: &[usize],
    reference: &[usize],
    max_seq_len: usize,
) -> Result<Vec<usize>, SlmError> {
    for (pos, &tok) in summary.iter().chain(neutral).chain(reference).enumerate() {
        if is_sentinel(tok) {
            return Err(SlmError::SentinelCollision(pos));
        }
    }
    let needed = summary.len() + neutral.len() + reference.len() + 3;
    if needed >= max_seq_len {
        return Err(SlmError::Overflow { needed, max: max_seq_len });
    }
    let mut out = Vec::with_capacity(needed);
    out.extend_from_slice(summary);
    out.push(Sentinel::Summary.id());
    out.extend_from_slice(neutral);
    out.push(Sentinel::Neutral.id());
    out.extend_from_slice(reference);
    out.push(Sentinel::Reference.id());
    Ok(out)
}

/// Recover `(summary, neutral, reference)` from a formatted prompt.
pub fn split_prompt(prompt: &[usize]) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), SlmError> {
    let mut sections: Vec<Vec<usize>> = vec![Vec::new()];
    for &tok in prompt {
        if tok == Sentinel::Summary.id()
            || tok == Sentinel::Neutral.id()
            || tok == Sentinel::Reference.id()
        {
            sections.push(Vec::new());
        } else {
            sections.last_mut().expect("nonempty").push(tok);
        }
    }
    if sections.len() != 4 || !sections[3].is_empty() {
        return Err(SlmError::SentinelCollision(0));
    }
    let mut it = sections.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap(), it.next().unwrap()))
}

fn check_lengths(example: &SftExample, max_seq_len: usize) -> Result<(), SlmError> {
    if example.target.is_empty() {
        return Err(SlmError::EmptyTarget);
    }
    let needed = example.prompt.len() + example.target.len();
    if needed > max_seq_len {
        return Err(SlmError::Overflow { needed, max: max_seq_len });
    }
    Ok(())
}

/// Input tokens to feed and `(logit row, target id)` pairs to supervise.
/// Logit row `p-1` predicts token `p`, so the final target token needs no
/// input position of its own.
fn supervision_layout(example: &SftExample) -> (Vec<usize>, Vec<(usize, usize)>) {
    let prompt_len = example.prompt.len();
    let mut input = example.prompt.clone();
    input.extend_from_slice(&example.target[..example.target.len() - 1]);
    let positions: Vec<(usize, usize)> = example
        .target
        .iter()
        .enumerate()
        .map(|(t, &tok)| (prompt_len + t - 1, tok))
        .collect();
    (input, positions)
}

/// Cross-entropy over the response tokens only, averaged per target token:
/// `-(1/T) Σ_t log P(y_t | y_<t, S, N, R)`. Context positions never
/// contribute.
pub fn sft_loss(params: &SlmParams, example: &SftExample) -> Result<f64, SlmError> {
    check_lengths(example, params.config.max_seq_len)?;
    let (input, positions) = supervision_layout(example);
    let logits = model::forward_logits(params, &input)?;
    let logp = model::log_softmax_rows(&logits, input.len(), params.config.vocab);
    let mut total = 0.0;
    for &(row, target) in &positions {
        total -= logp[row * params.config.vocab + target];
    }
    Ok(total / positions.len() as f64)
}

/// Loss plus its analytic gradient w.r.t. every parameter.
pub fn sft_loss_grad(
    params: &SlmParams,
    example: &SftExample,
) -> Result<(f64, Vec<f64>), SlmError> {
    check_lengths(example, params.config.max_seq_len)?;
    let (input, positions) = supervision_layout(example);

    let mut tape = Tape::new();
    let vars = model::bind(&mut tape, params);
    let logits = model::logits_on_tape(&mut tape, &vars, &params.config, &input)?;
    let logp = tape.row_log_softmax(logits);
    let picked = tape.pick(logp, &positions);
    let total = tape.sum_all(picked);
    let loss = tape.scale(total, -1.0 / positions.len() as f64);
    tape.backward(loss);
    Ok((tape.value_scalar(loss), tape.grad(vars.flat).to_vec()))
}

/// Fine-tune with Adam over shuffled batches, gradients averaged in fixed
/// index order. Deterministic under `config.seed`; zero epochs returns the
/// parameters unchanged.
pub fn sft_train(
    params: &SlmParams,
    dataset: &[SftExample],
    config: &TrainConfig,
) -> Result<(SlmParams, Vec<TrainStep>), SlmError> {
    config.validate().map_err(SlmError::BadCheckpoint)?;
    if dataset.is_empty() {
        return Err(SlmError::EmptyDataset);
    }
    for example in dataset {
        check_lengths(example, config.max_seq_len.min(params.config.max_seq_len))?;
    }

    let mut trained = params.clone();
    let mut adam = Adam::new(trained.flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let schedule = LrSchedule { peak: config.learning_rate, warmup_fraction: config.warmup_fraction, decay: config.decay };

    let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut log = Vec::with_capacity(total_steps);
    let mut grad_acc = vec![0.0; trained.flat.len()];
    let mut step = 0usize;

    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            grad_acc.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let (loss, grad) = sft_loss_grad(&trained, &dataset[idx])?;
                batch_loss += loss;
                for (acc, g) in grad_acc.iter_mut().zip(&grad) {
                    *acc += g;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            grad_acc.iter_mut().for_each(|g| *g *= inv);
            batch_loss *= inv;

            let lr = schedule.rate(step, total_steps);
            adam.step(&mut trained.flat, &grad_acc, lr);
            log.push(TrainStep { step, loss: batch_loss, lr, margin: None });
            step += 1;
        }
    }
    Ok((trained, log))
}
