//! Decoder-only transformer forward pass, in two mirrors: a tape build for
//! training (gradients via the shared autodiff engine) and a plain
//! inference path used by scoring and generation. A unit test pins the two
//! to identical logits.

use crate::autodiff::{gelu, Tape, Var};

use super::{SlmConfig, SlmError, SlmParams};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Offsets of every weight block inside the flat parameter vector.
pub(crate) struct Layout {
    pub tok_emb: (usize, usize),
    pub pos_emb: (usize, usize),
    pub layers: Vec<LayerLayout>,
    pub lnf_g: (usize, usize),
    pub lnf_b: (usize, usize),
    pub unembed: (usize, usize),
}

pub(crate) struct LayerLayout {
    pub ln1_g: (usize, usize),
    pub ln1_b: (usize, usize),
    pub wq: (usize, usize),
    pub bq: (usize, usize),
    pub wk: (usize, usize),
    pub bk: (usize, usize),
    pub wv: (usize, usize),
    pub bv: (usize, usize),
    pub wo: (usize, usize),
    pub bo: (usize, usize),
    pub ln2_g: (usize, usize),
    pub ln2_b: (usize, usize),
    pub w1: (usize, usize),
    pub b1: (usize, usize),
    pub w2: (usize, usize),
    pub b2: (usize, usize),
}

impl Layout {
    pub fn new(config: &SlmConfig) -> Self {
        let d = config.dim;
        let ff = config.ff();
        let mut cursor = 0usize;
        let mut take = |len: usize| {
            let seg = (cursor, len);
            cursor += len;
            seg
        };
        let tok_emb = take(config.vocab * d);
        let pos_emb = take(config.max_seq_len * d);
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            layers.push(LayerLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(d * ff),
                b1: take(ff),
                w2: take(ff * d),
                b2: take(d),
            });
        }
        let lnf_g = take(d);
        let lnf_b = take(d);
        let unembed = take(d * config.vocab);
        debug_assert_eq!(cursor, config.param_count());
        Layout { tok_emb, pos_emb, layers, lnf_g, lnf_b, unembed }
    }

    /// Blocks that get Gaussian init (embeddings and projection matrices;
    /// the output head stays zero so a fresh model is uniform).
    pub fn gaussian_init_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = vec![span(self.tok_emb), span(self.pos_emb)];
        for l in &self.layers {
            for seg in [l.wq, l.wk, l.wv, l.wo, l.w1, l.w2] {
                out.push(span(seg));
            }
        }
        out
    }

    /// Layer-norm gains start at one.
    pub fn ones_init_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(span(l.ln1_g));
            out.push(span(l.ln2_g));
        }
        out.push(span(self.lnf_g));
        out
    }
}

fn span(seg: (usize, usize)) -> std::ops::Range<usize> {
    seg.0..seg.0 + seg.1
}

fn validate_ids(config: &SlmConfig, ids: &[usize]) -> Result<(), SlmError> {
    if ids.len() > config.max_seq_len {
        return Err(SlmError::Overflow { needed: ids.len(), max: config.max_seq_len });
    }
    for &id in ids {
        if id >= config.vocab {
            return Err(SlmError::VocabExceeded { id, vocab: config.vocab });
        }
    }
    Ok(())
}

// ---- tape path -------------------------------------------------------------

pub(crate) struct ModelVars {
    pub flat: Var,
    tok_emb: Var,
    pos_emb: Var,
    layers: Vec<LayerVars>,
    lnf_g: Var,
    lnf_b: Var,
    unembed: Var,
}

struct LayerVars {
    ln1_g: Var,
    ln1_b: Var,
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    ln2_g: Var,
    ln2_b: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// Put the parameters on the tape as one leaf and slice out each block.
pub(crate) fn bind(tape: &mut Tape, params: &SlmParams) -> ModelVars {
    let c = &params.config;
    let d = c.dim;
    let ff = c.ff();
    let layout = Layout::new(c);
    let flat = tape.leaf(1, params.flat.len(), params.flat.clone());

    let mat = |tape: &mut Tape, seg: (usize, usize), rows: usize, cols: usize| {
        let s = tape.slice_cols(flat, seg.0, seg.1);
        tape.reshape(s, rows, cols)
    };
    let row = |tape: &mut Tape, seg: (usize, usize)| tape.slice_cols(flat, seg.0, seg.1);

    let tok_emb = mat(tape, layout.tok_emb, c.vocab, d);
    let pos_emb = mat(tape, layout.pos_emb, c.max_seq_len, d);
    let layers = layout
        .layers
        .iter()
        .map(|l| LayerVars {
            ln1_g: row(tape, l.ln1_g),
            ln1_b: row(tape, l.ln1_b),
            wq: mat(tape, l.wq, d, d),
            bq: row(tape, l.bq),
            wk: mat(tape, l.wk, d, d),
            bk: row(tape, l.bk),
            wv: mat(tape, l.wv, d, d),
            bv: row(tape, l.bv),
            wo: mat(tape, l.wo, d, d),
            bo: row(tape, l.bo),
            ln2_g: row(tape, l.ln2_g),
            ln2_b: row(tape, l.ln2_b),
            w1: mat(tape, l.w1, d, ff),
            b1: row(tape, l.b1),
            w2: mat(tape, l.w2, ff, d),
            b2: row(tape, l.b2),
        })
        .collect();
    ModelVars {
        flat,
        tok_emb,
        pos_emb,
        layers,
        lnf_g: row(tape, layout.lnf_g),
        lnf_b: row(tape, layout.lnf_b),
        unembed: mat(tape, layout.unembed, d, c.vocab),
    }
}

/// Full-sequence logits `(T, V)` on the tape.
pub(crate) fn logits_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    config: &SlmConfig,
    ids: &[usize],
) -> Result<Var, SlmError> {
    validate_ids(config, ids)?;
    let t = ids.len();
    let hd = config.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let tok = tape.gather_rows(vars.tok_emb, ids);
    let positions: Vec<usize> = (0..t).collect();
    let pos = tape.gather_rows(vars.pos_emb, &positions);
    let mut x = tape.add(tok, pos);

    for layer in &vars.layers {
        let h = tape.layer_norm(x, layer.ln1_g, layer.ln1_b, LN_EPS);
        let q0 = tape.matmul(h, layer.wq);
        let q = tape.add_row(q0, layer.bq);
        let k0 = tape.matmul(h, layer.wk);
        let k = tape.add_row(k0, layer.bk);
        let v0 = tape.matmul(h, layer.wv);
        let v = tape.add_row(v0, layer.bv);

        let mut heads = Vec::with_capacity(config.heads);
        for i in 0..config.heads {
            let qh = tape.slice_cols(q, i * hd, hd);
            let kh = tape.slice_cols(k, i * hd, hd);
            let vh = tape.slice_cols(v, i * hd, hd);
            let kt = tape.transpose(kh);
            let scores0 = tape.matmul(qh, kt);
            let scores = tape.scale(scores0, scale);
            let attn = tape.causal_row_softmax(scores);
            heads.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&heads);
        let out0 = tape.matmul(merged, layer.wo);
        let out = tape.add_row(out0, layer.bo);
        x = tape.add(x, out);

        let h2 = tape.layer_norm(x, layer.ln2_g, layer.ln2_b, LN_EPS);
        let m0 = tape.matmul(h2, layer.w1);
        let m1 = tape.add_row(m0, layer.b1);
        let m2 = tape.gelu(m1);
        let m3 = tape.matmul(m2, layer.w2);
        let mlp = tape.add_row(m3, layer.b2);
        x = tape.add(x, mlp);
    }

    let hfin = tape.layer_norm(x, vars.lnf_g, vars.lnf_b, LN_EPS);
    Ok(tape.matmul(hfin, vars.unembed))
}

// ---- inference path --------------------------------------------------------

/// Final hidden states `(T, d)` after the last layer norm, without a tape.
pub(crate) fn forward_hidden(params: &SlmParams, ids: &[usize]) -> Result<Vec<f64>, SlmError> {
    let c = &params.config;
    validate_ids(c, ids)?;
    let d = c.dim;
    let ff = c.ff();
    let t = ids.len();
    let hd = c.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let layout = Layout::new(c);
    let p = &params.flat;
    let block = |seg: (usize, usize)| &p[seg.0..seg.0 + seg.1];

    let mut x = vec![0.0; t * d];
    {
        let tok = block(layout.tok_emb);
        let pos = block(layout.pos_emb);
        for (i, &id) in ids.iter().enumerate() {
            for j in 0..d {
                x[i * d + j] = tok[id * d + j] + pos[i * d + j];
            }
        }
    }

    let mut q = vec![0.0; t * d];
    let mut k = vec![0.0; t * d];
    let mut v = vec![0.0; t * d];
    let mut merged = vec![0.0; t * d];
    let mut hbuf = vec![0.0; t * d];
    let mut mlp_hidden = vec![0.0; t * ff];

    for layer in &layout.layers {
        layernorm_rows(&x, block(layer.ln1_g), block(layer.ln1_b), t, d, &mut hbuf);
        linear(&hbuf, block(layer.wq), block(layer.bq), t, d, d, &mut q);
        linear(&hbuf, block(layer.wk), block(layer.bk), t, d, d, &mut k);
        linear(&hbuf, block(layer.wv), block(layer.bv), t, d, d, &mut v);

        merged.iter_mut().for_each(|z| *z = 0.0);
        let mut weights = vec![0.0; t];
        for head in 0..c.heads {
            let off = head * hd;
            for i in 0..t {
                // causal attention row i over columns 0..=i
                let qi = &q[i * d + off..i * d + off + hd];
                let mut mx = f64::NEG_INFINITY;
                for jj in 0..=i {
                    let kj = &k[jj * d + off..jj * d + off + hd];
                    let s: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    weights[jj] = s;
                    mx = mx.max(s);
                }
                let mut denom = 0.0;
                for w in weights.iter_mut().take(i + 1) {
                    *w = (*w - mx).exp();
                    denom += *w;
                }
                let orow = &mut merged[i * d + off..i * d + off + hd];
                for jj in 0..=i {
                    let a = weights[jj] / denom;
                    let vj = &v[jj * d + off..jj * d + off + hd];
                    for z in 0..hd {
                        orow[z] += a * vj[z];
                    }
                }
            }
        }
        let mut attn_out = vec![0.0; t * d];
        linear(&merged, block(layer.wo), block(layer.bo), t, d, d, &mut attn_out);
        for (xi, oi) in x.iter_mut().zip(&attn_out) {
            *xi += oi;
        }

        layernorm_rows(&x, block(layer.ln2_g), block(layer.ln2_b), t, d, &mut hbuf);
        linear(&hbuf, block(layer.w1), block(layer.b1), t, d, ff, &mut mlp_hidden);
        mlp_hidden.iter_mut().for_each(|z| *z = gelu(*z));
        let mut mlp_out = vec![0.0; t * d];
        linear(&mlp_hidden, block(layer.w2), block(layer.b2), t, ff, d, &mut mlp_out);
        for (xi, mi) in x.iter_mut().zip(&mlp_out) {
            *xi += mi;
        }
    }

    let mut out = vec![0.0; t * d];
    layernorm_rows(&x, block(layout.lnf_g), block(layout.lnf_b), t, d, &mut out);
    Ok(out)
}

/// Logits for every position, `(T, V)` row-major.
pub fn forward_logits(params: &SlmParams, ids: &[usize]) -> Result<Vec<f64>, SlmError> {
    let hidden = forward_hidden(params, ids)?;
    let c = &params.config;
    let layout = Layout::new(c);
    let w = &params.flat[layout.unembed.0..layout.unembed.0 + layout.unembed.1];
    let t = ids.len();
    let mut logits = vec![0.0; t * c.vocab];
    matmul_acc(&hidden, w, t, c.dim, c.vocab, &mut logits);
    Ok(logits)
}

/// Logits for one hidden row (used by stepwise generation).
pub(crate) fn row_logits(params: &SlmParams, hidden_row: &[f64]) -> Vec<f64> {
    let c = &params.config;
    let layout = Layout::new(c);
    let w = &params.flat[layout.unembed.0..layout.unembed.0 + layout.unembed.1];
    let mut logits = vec![0.0; c.vocab];
    matmul_acc(hidden_row, w, 1, c.dim, c.vocab, &mut logits);
    logits
}

/// `out = a (t×k) · w (k×n) + out`, `out` pre-zeroed by callers.
fn matmul_acc(a: &[f64], w: &[f64], t: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..t {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let wrow = &w[kk * n..(kk + 1) * n];
            for (o, &wj) in orow.iter_mut().zip(wrow) {
                *o += aik * wj;
            }
        }
    }
}

/// `out = x (t×k) · w (k×n) + b`.
fn linear(x: &[f64], w: &[f64], b: &[f64], t: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..t {
        out[i * n..(i + 1) * n].copy_from_slice(b);
    }
    matmul_acc(x, w, t, k, n, out);
}

fn layernorm_rows(x: &[f64], g: &[f64], b: &[f64], t: usize, d: usize, out: &mut [f64]) {
    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            out[i * d + j] = (row[j] - mean) * inv * g[j] + b[j];
        }
    }
}

/// Row-wise log-softmax of already-computed logits.
pub(crate) fn log_softmax_rows(logits: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &logits[i * cols..(i + 1) * cols];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
        for j in 0..cols {
            out[i * cols + j] = row[j] - lse;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SlmParams {
        SlmParams::init(
            SlmConfig { vocab: 16, dim: 8, layers: 2, heads: 2, max_seq_len: 12 },
            77,
        )
    }

    #[test]
    fn tape_and_inference_forward_agree() {
        let p = tiny();
        let ids = [3usize, 1, 4, 1, 5, 9];
        let direct = forward_logits(&p, &ids).unwrap();

        let mut tape = Tape::new();
        let vars = bind(&mut tape, &p);
        let logits = logits_on_tape(&mut tape, &vars, &p.config, &ids).unwrap();
        let taped = tape.value(logits);
        assert_eq!(direct.len(), taped.len());
        for (a, b) in direct.iter().zip(taped) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn fresh_model_is_uniform() {
        let p = tiny();
        let logits = forward_logits(&p, &[1, 2, 3]).unwrap();
        // zero output head -> all logits exactly zero
        assert!(logits.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_overflow_and_bad_ids() {
        let p = tiny();
        let too_long: Vec<usize> = (0..13).map(|i| i % 16).collect();
        assert!(matches!(
            forward_logits(&p, &too_long),
            Err(SlmError::Overflow { needed: 13, max: 12 })
        ));
        assert!(matches!(
            forward_logits(&p, &[1, 99]),
            Err(SlmError::VocabExceeded { id: 99, vocab: 16 })
        ));
    }

    #[test]
    fn causality_prefix_logits_stable() {
        // logits at position i must not depend on later tokens
        let p = tiny();
        let full = forward_logits(&p, &[5, 6, 7, 8]).unwrap();
        let prefix = forward_logits(&p, &[5, 6]).unwrap();
        let v = p.config.vocab;
        for j in 0..2 * v {
            assert!((full[j] - prefix[j]).abs() < 1e-10);
        }
    }
}
