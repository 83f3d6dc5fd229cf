//! Tape-path forward: records the full computation for reverse-mode
//! gradients. Inference uses the streaming path in `infer`; a test pins the
//! two paths to identical outputs.

use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};
use rand_chacha::ChaCha12Rng;

/// Coordinates zero-padded to d_max plus a binary mask of active dimensions:
/// row (x₁..x_d) ↦ (x₁..x_d, 0.., 1×d, 0..), total width 2·d_max.
pub fn embed_pad(points: &Tensor<f64>, d_max: usize) -> Result<Tensor<f64>> {
    if !points.is_2d() {
        return Err(Error::shape("embed_pad wants n×d".to_string()));
    }
    let (n, d) = (points.rows(), points.cols());
    if d > d_max {
        return Err(Error::shape(format!("d={d} exceeds d_max={d_max}")));
    }
    let w = 2 * d_max;
    let mut out = Tensor::zeros(&[n, w]);
    for i in 0..n {
        for j in 0..d {
            out.set2(i, j, points.at2(i, j));
            out.set2(i, d_max + j, 1.0);
        }
    }
    Ok(out)
}

/// Dropout context for a training step; `None` disables dropout entirely.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha12Rng,
}

/// Model parameters registered on a tape, in canonical order.
pub struct TapeModel<'w, F: Real> {
    pub weights: &'w ModelWeights<F>,
    ids: Vec<NodeId>,
}

impl<'w, F: Real> TapeModel<'w, F> {
    /// `trainable` decides whether gradients flow into the parameters
    /// (training) or only into differentiable inputs (autograd scores).
    pub fn insert(tape: &mut Tape<F>, weights: &'w ModelWeights<F>, trainable: bool) -> Self {
        let ids = weights
            .tensors()
            .iter()
            .map(|t| if trainable { tape.var(t.clone()) } else { tape.leaf(t.clone()) })
            .collect();
        TapeModel { weights, ids }
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    fn id(&self, name: &str) -> NodeId {
        self.ids[self.weights.idx(name)]
    }
}

fn apply_dropout<F: Real>(
    tape: &mut Tape<F>,
    x: NodeId,
    drop: &mut Option<DropoutCtx<'_>>,
) -> Result<NodeId> {
    match drop {
        Some(ctx) => tape.dropout(x, ctx.rate, ctx.rng),
        None => Ok(x),
    }
}

fn linear<F: Real>(
    tape: &mut Tape<F>,
    m: &TapeModel<'_, F>,
    x: NodeId,
    w: &str,
    b: &str,
) -> Result<NodeId> {
    let y = tape.matmul(x, m.id(w))?;
    tape.add_row(y, m.id(b))
}

fn layer_norm<F: Real>(
    tape: &mut Tape<F>,
    m: &TapeModel<'_, F>,
    x: NodeId,
    prefix: &str,
) -> Result<NodeId> {
    tape.layer_norm(x, m.id(&format!("{prefix}.g")), m.id(&format!("{prefix}.b")), F::from_f64(1e-5))
}

fn attention<F: Real>(
    tape: &mut Tape<F>,
    m: &TapeModel<'_, F>,
    prefix: &str,
    q_in: NodeId,
    kv_in: NodeId,
    drop: &mut Option<DropoutCtx<'_>>,
) -> Result<NodeId> {
    let cfg = &m.weights.config;
    let (heads, dh) = (cfg.heads, cfg.head_dim());
    let q = linear(tape, m, q_in, &format!("{prefix}.attn.wq"), &format!("{prefix}.attn.bq"))?;
    let k = linear(tape, m, kv_in, &format!("{prefix}.attn.wk"), &format!("{prefix}.attn.bk"))?;
    let v = linear(tape, m, kv_in, &format!("{prefix}.attn.wv"), &format!("{prefix}.attn.bv"))?;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let (lo, hi) = (hd * dh, (hd + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let s = tape.matmul(qh, kt)?;
        let s = tape.mul_scalar(s, scale)?;
        let a = tape.softmax_rows(s)?;
        outs.push(tape.matmul(a, vh)?);
    }
    let cat = tape.concat_cols(&outs)?;
    let o = linear(tape, m, cat, &format!("{prefix}.attn.wo"), &format!("{prefix}.attn.bo"))?;
    apply_dropout(tape, o, drop)
}

fn ffn<F: Real>(
    tape: &mut Tape<F>,
    m: &TapeModel<'_, F>,
    prefix: &str,
    x: NodeId,
    drop: &mut Option<DropoutCtx<'_>>,
) -> Result<NodeId> {
    let h = linear(tape, m, x, &format!("{prefix}.ffn.w1"), &format!("{prefix}.ffn.b1"))?;
    let h = tape.gelu(h)?;
    let h = linear(tape, m, h, &format!("{prefix}.ffn.w2"), &format!("{prefix}.ffn.b2"))?;
    apply_dropout(tape, h, drop)
}

/// Pre-norm block: x += Attn(LN(x)); x += FFN(LN(x)). Cross-attention blocks
/// read K/V from `kv` (the encoded context) instead of the own stream.
fn block<F: Real>(
    tape: &mut Tape<F>,
    m: &TapeModel<'_, F>,
    prefix: &str,
    x: NodeId,
    kv: Option<NodeId>,
    drop: &mut Option<DropoutCtx<'_>>,
) -> Result<NodeId> {
    let h = layer_norm(tape, m, x, &format!("{prefix}.ln1"))?;
    let a = attention(tape, m, prefix, h, kv.unwrap_or(h), drop)?;
    let x = tape.add(x, a)?;
    let h2 = layer_norm(tape, m, x, &format!("{prefix}.ln2"))?;
    let f = ffn(tape, m, prefix, h2, drop)?;
    tape.add(x, f)
}

/// Context tokens through embedding and the self-attention encoder stack;
/// output is final-normalized and serves as K/V for every decoder layer.
pub fn encode_on_tape<F: Real>(
    tape: &mut Tape<F>,
    m: &TapeModel<'_, F>,
    x_tokens: NodeId,
    drop: &mut Option<DropoutCtx<'_>>,
) -> Result<NodeId> {
    let mut x = linear(tape, m, x_tokens, "embed.w", "embed.b")?;
    for i in 0..m.weights.config.enc_layers {
        x = block(tape, m, &format!("enc.{i}"), x, None, drop)?;
    }
    layer_norm(tape, m, x, "enc_final_ln")
}

/// Query tokens cross-attend to the encoded context; queries never attend to
/// each other, so each output row depends on the context and its own query
/// only. Returns (raw log-density column, score sliced to d_active columns),
/// both in whitened coordinates.
pub fn decode_on_tape<F: Real>(
    tape: &mut Tape<F>,
    m: &TapeModel<'_, F>,
    enc: NodeId,
    y_tokens: NodeId,
    d_active: usize,
    drop: &mut Option<DropoutCtx<'_>>,
) -> Result<(NodeId, NodeId)> {
    let mut q = linear(tape, m, y_tokens, "embed.w", "embed.b")?;
    for i in 0..m.weights.config.dec_layers {
        q = block(tape, m, &format!("dec.{i}"), q, Some(enc), drop)?;
    }
    let qf = layer_norm(tape, m, q, "dec_final_ln")?;
    let dens_raw = linear(tape, m, qf, "head.density.w", "head.density.b")?;
    let score_full = linear(tape, m, qf, "head.score.w", "head.score.b")?;
    let score = tape.slice_cols(score_full, 0, d_active)?;
    Ok((dens_raw, score))
}
