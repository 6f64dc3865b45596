//! Style encoder: a small trainable text embedder whose cosine similarity
//! measures style consistency, trained with an in-batch negative loss.
//!
//! The encoder hashes text segments into embedding rows, mean-pools them, and
//! refines the pooled vector through a small tanh MLP before unit
//! normalization. Hash buckets stand in for a learned vocabulary so the
//! encoder needs no external tokenizer asset.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::Corpus;
use crate::optim::{Adam, LrSchedule};
use crate::text::{self, Segment};

pub const ENCODER_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"SAGENC1\0";

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("text is empty after tokenization")]
    EmptyText,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("batch has no anchor-positive pairs")]
    EmptyBatch,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Architecture and training settings for the style filter encoder.
///
/// Training defaults follow the stage-one recipe (3 epochs, batch 16,
/// lr 2e-5, 5% warm-up); the architecture is a deliberately small stand-in
/// for a full pretrained embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterTrainConfig {
    pub vocab: usize,
    pub dim: usize,
    pub layers: usize,
    pub epochs: usize,
    /// Anchor-positive pairs per step (n in the loss).
    pub batch_size: usize,
    /// Hard negatives per anchor (m in the loss).
    pub hard_negatives: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    /// Articles below this word count are excluded from batches.
    pub min_words: usize,
    /// Fraction of users held out for the separation check.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for FilterTrainConfig {
    fn default() -> Self {
        FilterTrainConfig {
            vocab: 1024,
            dim: 64,
            layers: 2,
            epochs: 3,
            batch_size: 16,
            hard_negatives: 2,
            learning_rate: 2e-5,
            warmup_fraction: 0.05,
            min_words: 50,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Encoder weights: hash-bucket embedding table plus MLP layers, stored as
/// one flat vector (embedding, then per layer `W` and `b`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub vocab: usize,
    pub dim: usize,
    pub layers: usize,
    pub version: u32,
    flat: Vec<f64>,
}

impl EncoderParams {
    pub fn init(vocab: usize, dim: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Self::param_count(vocab, dim, layers);
        let mut flat = Vec::with_capacity(n);
        let emb_scale = 0.1;
        for _ in 0..vocab * dim {
            flat.push(rng.gen_range(-emb_scale..emb_scale));
        }
        let w_scale = 1.0 / (dim as f64).sqrt();
        for _ in 0..layers {
            for _ in 0..dim * dim {
                flat.push(rng.gen_range(-w_scale..w_scale));
            }
            flat.extend(std::iter::repeat(0.0).take(dim));
        }
        EncoderParams { vocab, dim, layers, version: ENCODER_VERSION, flat }
    }

    pub fn param_count(vocab: usize, dim: usize, layers: usize) -> usize {
        vocab * dim + layers * (dim * dim + dim)
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn from_flat(vocab: usize, dim: usize, layers: usize, flat: Vec<f64>) -> Self {
        assert_eq!(flat.len(), Self::param_count(vocab, dim, layers));
        EncoderParams { vocab, dim, layers, version: ENCODER_VERSION, flat }
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.vocab * self.dim + layer * (self.dim * self.dim + self.dim)
    }

    /// Map a text segment to its embedding row (FNV-1a over the segment).
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.vocab as u64) as usize
    }

    pub fn token_ids(&self, text: &str) -> Vec<usize> {
        text::segment(text)
            .iter()
            .map(|s| match s {
                Segment::Word(w) => self.bucket(w),
                Segment::Cjk(c) => self.bucket(&c.to_string()),
                Segment::Emoji(c) => self.bucket(&c.to_string()),
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), EmbedError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for v in [self.version, self.vocab as u32, self.dim as u32, self.layers as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.flat.len() as u64).to_le_bytes())?;
        for &x in &self.flat {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let bytes = std::fs::read(path)?;
        Self::read(&mut &bytes[..])
    }

    pub fn read(r: &mut impl Read) -> Result<Self, EmbedError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(EmbedError::BadCheckpoint("wrong magic".into()));
        }
        let next = |r: &mut dyn Read| -> Result<u32, EmbedError> {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            Ok(u32::from_le_bytes(buf))
        };
        let version = next(r)?;
        let vocab = next(r)? as usize;
        let dim = next(r)? as usize;
        let layers = next(r)? as usize;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let n = u64::from_le_bytes(u64buf) as usize;
        if n != Self::param_count(vocab, dim, layers) {
            return Err(EmbedError::BadCheckpoint(format!(
                "parameter count {n} does not match architecture"
            )));
        }
        let mut flat = Vec::with_capacity(n);
        let mut f32buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut f32buf)?;
            flat.push(f32::from_le_bytes(f32buf) as f64);
        }
        Ok(EncoderParams { vocab, dim, layers, version, flat })
    }

    pub fn content_hash(&self) -> String {
        use sha2::Digest;
        let mut buf = Vec::new();
        self.write(&mut buf).expect("in-memory write");
        hex::encode(sha2::Sha256::digest(&buf))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// A unit-normalized style embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector(Vec<f64>);

impl StyleVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Deterministically embed `text`; identical texts give identical vectors.
pub fn encode(params: &EncoderParams, text: &str) -> Result<StyleVector, EmbedError> {
    let ids = params.token_ids(text);
    if ids.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let d = params.dim;
    let mut h = vec![0.0; d];
    for &id in &ids {
        let row = &params.flat[id * d..(id + 1) * d];
        for j in 0..d {
            h[j] += row[j];
        }
    }
    let inv = 1.0 / ids.len() as f64;
    h.iter_mut().for_each(|x| *x *= inv);

    for layer in 0..params.layers {
        let off = params.layer_offset(layer);
        let w = &params.flat[off..off + d * d];
        let b = &params.flat[off + d * d..off + d * d + d];
        let mut next = vec![0.0; d];
        for k in 0..d {
            let hk = h[k];
            if hk == 0.0 {
                continue;
            }
            let wrow = &w[k * d..(k + 1) * d];
            for j in 0..d {
                next[j] += hk * wrow[j];
            }
        }
        for j in 0..d {
            next[j] = (next[j] + b[j]).tanh();
        }
        h = next;
    }

    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbedError::EmptyText);
    }
    h.iter_mut().for_each(|x| *x /= norm);
    Ok(StyleVector(h))
}

/// Dot product of unit vectors, clamped to `[-1, 1]`.
pub fn cosine_sim(u: &StyleVector, v: &StyleVector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimensionMismatch(u.dim(), v.dim()));
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// `n` anchor-positive pairs from single users plus `m` cross-user hard
/// negatives per anchor.
#[derive(Debug, Clone)]
pub struct StyleBatch {
    pub anchors: Vec<String>,
    pub positives: Vec<String>,
    /// `hard_negatives[i]` are the negatives for anchor `i`.
    pub hard_negatives: Vec<Vec<String>>,
}

impl StyleBatch {
    pub fn n(&self) -> usize {
        self.anchors.len()
    }

    pub fn m(&self) -> usize {
        self.hard_negatives.first().map_or(0, Vec::len)
    }
}

/// Similarities for one batch: `pos[i*n+k] = sim(a_i, p_k)` and
/// `neg[i*m+k] = sim(a_i, n_k)`.
#[derive(Debug, Clone)]
pub struct SimTable {
    pub n: usize,
    pub m: usize,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

/// In-batch negative loss: mean over anchors of
/// `-log( exp(sim(a_i, p_i)) / (Σ_k exp(sim(a_i, p_k)) + Σ_k exp(sim(a_i, n_k))) )`,
/// evaluated with max-subtraction.
pub fn inbatch_loss(sims: &SimTable) -> Result<f64, EmbedError> {
    if sims.n == 0 {
        return Err(EmbedError::EmptyBatch);
    }
    assert_eq!(sims.pos.len(), sims.n * sims.n);
    assert_eq!(sims.neg.len(), sims.n * sims.m);
    let mut total = 0.0;
    for i in 0..sims.n {
        let row: Vec<f64> = sims.pos[i * sims.n..(i + 1) * sims.n]
            .iter()
            .chain(&sims.neg[i * sims.m..(i + 1) * sims.m])
            .cloned()
            .collect();
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
        total += lse - sims.pos[i * sims.n + i];
    }
    Ok(total / sims.n as f64)
}

/// Compute the similarity table for a batch under `params`.
pub fn batch_sims(params: &EncoderParams, batch: &StyleBatch) -> Result<SimTable, EmbedError> {
    let n = batch.n();
    let m = batch.m();
    let anchors: Vec<StyleVector> =
        batch.anchors.iter().map(|t| encode(params, t)).collect::<Result<_, _>>()?;
    let positives: Vec<StyleVector> =
        batch.positives.iter().map(|t| encode(params, t)).collect::<Result<_, _>>()?;
    let mut pos = vec![0.0; n * n];
    let mut neg = vec![0.0; n * m];
    for i in 0..n {
        for k in 0..n {
            pos[i * n + k] = cosine_sim(&anchors[i], &positives[k])?;
        }
        for (k, ntext) in batch.hard_negatives[i].iter().enumerate() {
            let nv = encode(params, ntext)?;
            neg[i * m + k] = cosine_sim(&anchors[i], &nv)?;
        }
    }
    Ok(SimTable { n, m, pos, neg })
}

/// Build the batch loss on a tape; returns the scalar loss node and the flat
/// parameter leaf.
fn batch_loss_on_tape(
    tape: &mut Tape,
    params: &EncoderParams,
    batch: &StyleBatch,
) -> Result<(Var, Var), EmbedError> {
    let n = batch.n();
    if n == 0 {
        return Err(EmbedError::EmptyBatch);
    }
    let d = params.dim;
    let flat = tape.leaf(1, params.flat.len(), params.flat.clone());
    let emb_flat = tape.slice_cols(flat, 0, params.vocab * d);
    let emb = tape.reshape(emb_flat, params.vocab, d);
    let mut layer_vars = Vec::with_capacity(params.layers);
    for layer in 0..params.layers {
        let off = params.layer_offset(layer);
        let w_flat = tape.slice_cols(flat, off, d * d);
        let w = tape.reshape(w_flat, d, d);
        let b = tape.slice_cols(flat, off + d * d, d);
        layer_vars.push((w, b));
    }

    let encode_var = |tape: &mut Tape, text: &str| -> Result<Var, EmbedError> {
        let ids = params.token_ids(text);
        if ids.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let rows = tape.gather_rows(emb, &ids);
        let mut h = tape.mean_rows(rows);
        for &(w, b) in &layer_vars {
            let lin = tape.matmul(h, w);
            let lin = tape.add_row(lin, b);
            h = tape.tanh(lin);
        }
        Ok(tape.l2_normalize(h))
    };

    let anchor_vars: Vec<Var> = batch
        .anchors
        .iter()
        .map(|t| encode_var(tape, t))
        .collect::<Result<_, _>>()?;
    let positive_vars: Vec<Var> = batch
        .positives
        .iter()
        .map(|t| encode_var(tape, t))
        .collect::<Result<_, _>>()?;
    let negative_vars: Vec<Vec<Var>> = batch
        .hard_negatives
        .iter()
        .map(|txts| txts.iter().map(|t| encode_var(tape, t)).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()?;

    let mut per_anchor = Vec::with_capacity(n);
    for i in 0..n {
        let mut sims = Vec::with_capacity(n + batch.m());
        let mut own = None;
        for k in 0..n {
            let s = tape.dot(anchor_vars[i], positive_vars[k]);
            if k == i {
                own = Some(s);
            }
            sims.push(s);
        }
        for &nv in &negative_vars[i] {
            sims.push(tape.dot(anchor_vars[i], nv));
        }
        let row = tape.concat_cols(&sims);
        let lse = tape.logsumexp_all(row);
        per_anchor.push(tape.sub(lse, own.expect("diagonal similarity")));
    }
    let stacked = tape.concat_cols(&per_anchor);
    let loss = tape.mean_all(stacked);
    Ok((loss, flat))
}

/// Loss and its analytic gradient w.r.t. every encoder parameter.
pub fn inbatch_loss_grad(
    params: &EncoderParams,
    batch: &StyleBatch,
) -> Result<(f64, Vec<f64>), EmbedError> {
    let mut tape = Tape::new();
    let (loss, flat) = batch_loss_on_tape(&mut tape, params, batch)?;
    tape.backward(loss);
    Ok((tape.value_scalar(loss), tape.grad(flat).to_vec()))
}

/// Deterministically sample a training batch: `n` anchor-positive pairs from
/// distinct users, `m` cross-user hard negatives per anchor. Articles must
/// have at least `min_words` words (and at least one text segment).
pub fn build_style_batch(
    corpus: &Corpus,
    n: usize,
    m: usize,
    min_words: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StyleBatch, EmbedError> {
    if n == 0 {
        return Err(EmbedError::EmptyBatch);
    }
    let eligible = eligible_users(corpus, min_words);
    build_batch_from_eligible(&eligible, n, m, rng)
}

fn build_batch_from_eligible(
    eligible: &[(String, Vec<String>)],
    n: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StyleBatch, EmbedError> {
    if eligible.len() < n {
        return Err(EmbedError::InsufficientData(format!(
            "need {n} users with >= 2 eligible articles, found {}",
            eligible.len()
        )));
    }
    if m > 0 && eligible.len() < 2 {
        return Err(EmbedError::InsufficientData(
            "hard negatives need a second user".into(),
        ));
    }

    let mut order: Vec<usize> = (0..eligible.len()).collect();
    shuffle(&mut order, rng);
    let chosen = &order[..n];

    let mut anchors = Vec::with_capacity(n);
    let mut positives = Vec::with_capacity(n);
    let mut hard_negatives = Vec::with_capacity(n);
    for &u in chosen {
        let arts = &eligible[u].1;
        let ai = rng.gen_range(0..arts.len());
        let mut pi = rng.gen_range(0..arts.len() - 1);
        if pi >= ai {
            pi += 1;
        }
        anchors.push(arts[ai].clone());
        positives.push(arts[pi].clone());

        let mut negs = Vec::with_capacity(m);
        for _ in 0..m {
            let mut v = rng.gen_range(0..eligible.len() - 1);
            if v >= u {
                v += 1;
            }
            let other = &eligible[v].1;
            negs.push(other[rng.gen_range(0..other.len())].clone());
        }
        hard_negatives.push(negs);
    }
    Ok(StyleBatch { anchors, positives, hard_negatives })
}

/// Users with at least two batch-eligible article bodies, in user-id order.
fn eligible_users(corpus: &Corpus, min_words: usize) -> Vec<(String, Vec<String>)> {
    corpus
        .users()
        .filter_map(|coll| {
            let arts: Vec<String> = coll
                .articles
                .iter()
                .filter(|a| a.word_count >= min_words && !text::segment(&a.body).is_empty())
                .map(|a| a.body.clone())
                .collect();
            (arts.len() >= 2).then(|| (coll.user_id.clone(), arts))
        })
        .collect()
}

/// Expose the eligibility view used by training (user-id order, bodies only).
pub fn eligible_user_articles(corpus: &Corpus, min_words: usize) -> Vec<(String, Vec<String>)> {
    eligible_users(corpus, min_words)
}

/// Fisher-Yates with the crate's seeded generator.
fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainStep {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub steps: Vec<TrainStep>,
    /// Mean same-user cosine on the held-out split after training.
    pub same_user_sim: f64,
    /// Mean cross-user cosine on the held-out split after training.
    pub cross_user_sim: f64,
}

impl TrainSummary {
    pub fn separation(&self) -> f64 {
        self.same_user_sim - self.cross_user_sim
    }
}

/// Train the style filter encoder with Adam (linear warm-up, then a constant
/// rate). Deterministic under `config.seed`.
pub fn train_filter_model(
    corpus: &Corpus,
    config: &FilterTrainConfig,
) -> Result<(EncoderParams, TrainSummary), EmbedError> {
    let eligible = eligible_users(corpus, config.min_words);
    if eligible.len() < 2 {
        return Err(EmbedError::InsufficientData(format!(
            "need >= 2 users with >= 2 eligible articles, found {}",
            eligible.len()
        )));
    }

    // Hold out trailing users (user-id order) for the separation check, but
    // never below the batch size on the training side.
    let mut holdout = (eligible.len() as f64 * config.holdout_fraction) as usize;
    holdout = holdout.min(eligible.len().saturating_sub(config.batch_size.max(2)));
    let (train_users, eval_users) = if holdout >= 2 {
        let split = eligible.len() - holdout;
        (&eligible[..split], &eligible[split..])
    } else {
        (&eligible[..], &eligible[..])
    };
    if train_users.len() < config.batch_size {
        return Err(EmbedError::InsufficientData(format!(
            "batch size {} but only {} eligible training users",
            config.batch_size,
            train_users.len()
        )));
    }

    let mut params = EncoderParams::init(config.vocab, config.dim, config.layers, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let train_articles: usize = train_users.iter().map(|(_, a)| a.len()).sum();
    let steps_per_epoch = (train_articles / config.batch_size).max(1);
    let total_steps = steps_per_epoch * config.epochs;
    let schedule = LrSchedule::constant(config.learning_rate, config.warmup_fraction);
    let mut adam = Adam::new(params.flat.len());

    let mut steps = Vec::with_capacity(total_steps);
    for step in 0..total_steps {
        let batch = build_batch_from_eligible(
            train_users,
            config.batch_size,
            config.hard_negatives,
            &mut rng,
        )?;
        let (loss, grad) = inbatch_loss_grad(&params, &batch)?;
        let lr = schedule.rate(step, total_steps);
        adam.step(&mut params.flat, &grad, lr);
        steps.push(TrainStep { step, loss, lr });
    }

    let (same_user_sim, cross_user_sim) = separation_stats(&params, eval_users)?;
    Ok((params, TrainSummary { steps, same_user_sim, cross_user_sim }))
}

/// Mean same-user and cross-user cosine over a user split.
pub fn separation_stats(
    params: &EncoderParams,
    users: &[(String, Vec<String>)],
) -> Result<(f64, f64), EmbedError> {
    let mut same = Vec::new();
    let mut firsts = Vec::new();
    for (_, arts) in users {
        let vecs: Vec<StyleVector> =
            arts.iter().map(|t| encode(params, t)).collect::<Result<_, _>>()?;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                same.push(cosine_sim(&vecs[i], &vecs[j])?);
            }
        }
        firsts.push(vecs.into_iter().next().expect("eligible user has articles"));
    }
    let mut cross = Vec::new();
    for i in 0..firsts.len() {
        for j in i + 1..firsts.len() {
            cross.push(cosine_sim(&firsts[i], &firsts[j])?);
        }
    }
    if same.is_empty() || cross.is_empty() {
        return Err(EmbedError::InsufficientData(
            "separation check needs same-user and cross-user pairs".into(),
        ));
    }
    Ok((mean(&same), mean(&cross)))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
