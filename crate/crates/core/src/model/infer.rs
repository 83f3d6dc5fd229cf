//! Streaming forward for inference: no tape, attention computed in query
//! tiles against all keys so the full n_q×n_k matrix is never materialized.
//! Every operation reuses the same kernels as the tape path, so the two
//! produce identical values (pinned by a test below).

use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::tape::{gelu_fwd, layer_norm_fwd};
use crate::tensor::{Real, Tensor};

const TILE: usize = 256;
const LN_EPS: f64 = 1e-5;

/// Attention-matrix capture for diagnostics; `target` indexes blocks
/// globally (encoder blocks first, then decoder blocks).
pub(crate) struct Capture {
    pub target: usize,
    next: usize,
    pub heads: Vec<Tensor<f64>>,
}

impl Capture {
    pub fn new(target: usize) -> Self {
        Capture { target, next: 0, heads: Vec::new() }
    }
}

fn linear<F: Real>(w: &ModelWeights<F>, x: &Tensor<F>, wname: &str, bname: &str) -> Result<Tensor<F>> {
    let y = x.matmul(w.get(wname))?;
    let b = w.get(bname);
    let mut y = y;
    let m = y.cols();
    for i in 0..y.rows() {
        for j in 0..m {
            y.data_mut()[i * m + j] = y.data()[i * m + j] + b.data()[j];
        }
    }
    y.assert_finite(wname)?;
    Ok(y)
}

fn layer_norm<F: Real>(w: &ModelWeights<F>, x: &Tensor<F>, prefix: &str) -> Result<Tensor<F>> {
    let g = w.get(&format!("{prefix}.g"));
    let b = w.get(&format!("{prefix}.b"));
    let (out, _, _) = layer_norm_fwd(x, g, b, F::from_f64(LN_EPS))?;
    out.assert_finite(prefix)?;
    Ok(out)
}

fn attention<F: Real>(
    w: &ModelWeights<F>,
    prefix: &str,
    q_in: &Tensor<F>,
    kv_in: &Tensor<F>,
    cap: &mut Option<&mut Capture>,
) -> Result<Tensor<F>> {
    let cfg = &w.config;
    let (heads, dh) = (cfg.heads, cfg.head_dim());
    let q = linear(w, q_in, &format!("{prefix}.attn.wq"), &format!("{prefix}.attn.bq"))?;
    let k = linear(w, kv_in, &format!("{prefix}.attn.wk"), &format!("{prefix}.attn.bk"))?;
    let v = linear(w, kv_in, &format!("{prefix}.attn.wv"), &format!("{prefix}.attn.bv"))?;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let (n_q, n_k) = (q.rows(), k.rows());
    let capture_here = cap.as_ref().is_some_and(|c| c.next == c.target);
    if capture_here {
        let c = cap.as_mut().unwrap();
        c.heads = (0..heads).map(|_| Tensor::zeros(&[n_q, n_k])).collect();
    }
    let mut cat = Tensor::zeros(&[n_q, cfg.hidden]);
    // Tile scratch is allocated once and reused across tiles and heads;
    // per-tile allocation of the n_q×n_k score block thrashes the allocator
    // at large n (every block is mmap-sized) and dominates the runtime.
    // The loops below mirror matmul / scale / softmax_rows element order
    // exactly, so results are bit-identical to the allocating path.
    let tile_cap = TILE.min(n_q.max(1));
    let mut sbuf = vec![F::zero(); tile_cap * n_k];
    let mut obuf = vec![F::zero(); tile_cap * dh];
    for hd in 0..heads {
        let (lo, hi) = (hd * dh, (hd + 1) * dh);
        let qh = q.cols_range(lo, hi)?;
        let kht = k.cols_range(lo, hi)?.transpose()?;
        let vh = v.cols_range(lo, hi)?;
        let mut t0 = 0;
        while t0 < n_q {
            let t1 = (t0 + TILE).min(n_q);
            let rows = t1 - t0;
            let s = &mut sbuf[..rows * n_k];
            for i in 0..rows {
                let arow = &qh.data()[(t0 + i) * dh..(t0 + i + 1) * dh];
                let crow = &mut s[i * n_k..(i + 1) * n_k];
                crow.fill(F::zero());
                for (p, &av) in arow.iter().enumerate() {
                    if av == F::zero() {
                        continue;
                    }
                    let brow = &kht.data()[p * n_k..(p + 1) * n_k];
                    for j in 0..n_k {
                        crow[j] = crow[j] + av * brow[j];
                    }
                }
            }
            for v in s.iter_mut() {
                *v = *v * scale;
            }
            for i in 0..rows {
                let row = &mut s[i * n_k..(i + 1) * n_k];
                let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
                let mut z = F::zero();
                for v in row.iter_mut() {
                    let e = (*v - mx).exp();
                    *v = e;
                    z = z + e;
                }
                for v in row.iter_mut() {
                    *v = *v / z;
                }
            }
            if capture_here {
                let c = cap.as_mut().unwrap();
                for (i, r) in (t0..t1).enumerate() {
                    for j in 0..n_k {
                        c.heads[hd].set2(r, j, s[i * n_k + j].into_f64());
                    }
                }
            }
            let o = &mut obuf[..rows * dh];
            for i in 0..rows {
                let arow = &s[i * n_k..(i + 1) * n_k];
                let crow = &mut o[i * dh..(i + 1) * dh];
                crow.fill(F::zero());
                for (p, &av) in arow.iter().enumerate() {
                    if av == F::zero() {
                        continue;
                    }
                    let brow = &vh.data()[p * dh..(p + 1) * dh];
                    for j in 0..dh {
                        crow[j] = crow[j] + av * brow[j];
                    }
                }
            }
            for (i, r) in (t0..t1).enumerate() {
                for j in 0..dh {
                    cat.set2(r, lo + j, o[i * dh + j]);
                }
            }
            t0 = t1;
        }
    }
    if let Some(c) = cap.as_mut() {
        c.next += 1;
    }
    linear(w, &cat, &format!("{prefix}.attn.wo"), &format!("{prefix}.attn.bo"))
}

fn ffn<F: Real>(w: &ModelWeights<F>, prefix: &str, x: &Tensor<F>) -> Result<Tensor<F>> {
    let h = linear(w, x, &format!("{prefix}.ffn.w1"), &format!("{prefix}.ffn.b1"))?;
    let h = h.map(gelu_fwd);
    linear(w, &h, &format!("{prefix}.ffn.w2"), &format!("{prefix}.ffn.b2"))
}

fn block<F: Real>(
    w: &ModelWeights<F>,
    prefix: &str,
    x: Tensor<F>,
    kv: Option<&Tensor<F>>,
    cap: &mut Option<&mut Capture>,
) -> Result<Tensor<F>> {
    let h = layer_norm(w, &x, &format!("{prefix}.ln1"))?;
    let a = attention(w, prefix, &h, kv.unwrap_or(&h), cap)?;
    let x = x.zip(&a, |p, q| p + q)?;
    let h2 = layer_norm(w, &x, &format!("{prefix}.ln2"))?;
    let f = ffn(w, prefix, &h2)?;
    x.zip(&f, |p, q| p + q)
}

pub(crate) fn encode_with_capture<F: Real>(
    w: &ModelWeights<F>,
    x_tokens: &Tensor<F>,
    cap: &mut Option<&mut Capture>,
) -> Result<Tensor<F>> {
    if x_tokens.cols() != w.config.token_width() {
        return Err(Error::shape(format!(
            "context tokens {:?}, want width {}",
            x_tokens.shape(),
            w.config.token_width()
        )));
    }
    let mut x = linear(w, x_tokens, "embed.w", "embed.b")?;
    for i in 0..w.config.enc_layers {
        x = block(w, &format!("enc.{i}"), x, None, cap)?;
    }
    layer_norm(w, &x, "enc_final_ln")
}

pub(crate) fn encode<F: Real>(w: &ModelWeights<F>, x_tokens: &Tensor<F>) -> Result<Tensor<F>> {
    encode_with_capture(w, x_tokens, &mut None)
}

/// Returns (raw log-density column n_y×1, score n_y×d_max), both in
/// whitened coordinates; the caller applies positivity and truncation.
pub(crate) fn decode_with_capture<F: Real>(
    w: &ModelWeights<F>,
    enc: &Tensor<F>,
    y_tokens: &Tensor<F>,
    cap: &mut Option<&mut Capture>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    if y_tokens.cols() != w.config.token_width() {
        return Err(Error::shape(format!(
            "query tokens {:?}, want width {}",
            y_tokens.shape(),
            w.config.token_width()
        )));
    }
    let mut q = linear(w, y_tokens, "embed.w", "embed.b")?;
    for i in 0..w.config.dec_layers {
        q = block(w, &format!("dec.{i}"), q, Some(enc), cap)?;
    }
    let qf = layer_norm(w, &q, "dec_final_ln")?;
    let raw = linear(w, &qf, "head.density.w", "head.density.b")?;
    let score = linear(w, &qf, "head.score.w", "head.score.b")?;
    Ok((raw, score))
}

pub(crate) fn decode<F: Real>(
    w: &ModelWeights<F>,
    enc: &Tensor<F>,
    y_tokens: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    decode_with_capture(w, enc, y_tokens, &mut None)
}
