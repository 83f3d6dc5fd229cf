//! Permutation- and affine-equivariant density/score estimator: whitening
//! wrapper around an encoder/cross-attention-decoder transformer core.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod infer;
pub mod weights;
pub mod whiten;

pub use attention::{export_attention, kde_attention_head, AttentionExport};
pub use config::{HeadMode, ModelConfig};
pub use forward::{decode_on_tape, embed_pad, encode_on_tape, DropoutCtx, TapeModel};
pub use weights::ModelWeights;
pub use whiten::{whiten, WhiteningTransform};

use crate::error::{Error, Result};
use crate::sample::SampleSet;
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

/// Joint estimate at the query points: strictly positive densities and
/// scores (∇ log density), both in the original coordinates.
#[derive(Debug, Clone)]
pub struct DensityScoreEstimate {
    pub densities: Vec<f64>,
    pub scores: Tensor<f64>,
}

/// Transformer core on already-whitened, already-padded tokens. Returns
/// positive densities and the full d_max-column score matrix, both in
/// whitened coordinates.
pub fn core_forward<F: Real>(
    w: &ModelWeights<F>,
    xw_padded: &Tensor<F>,
    yw_padded: &Tensor<F>,
) -> Result<(Vec<f64>, Tensor<f64>)> {
    let enc = infer::encode(w, xw_padded)?;
    let (raw, score) = infer::decode(w, &enc, yw_padded)?;
    let dens = raw.data().iter().map(|&v| v.into_f64().exp()).collect();
    Ok((dens, score.cast::<f64>()))
}

/// Full estimator: whiten by context statistics, pad, run the core, then
/// map back — densities pick up det(A), scores pick up Aᵀ, and the score
/// matrix is truncated to the active d columns.
pub fn forward<F: Real>(
    w: &ModelWeights<F>,
    x: &SampleSet,
    y: &SampleSet,
) -> Result<DensityScoreEstimate> {
    let d = x.d();
    let d_max = w.config.d_max;
    if d == 0 || d > d_max {
        return Err(Error::config(format!("d={d} outside 1..={d_max}")));
    }
    if y.n() == 0 {
        return Ok(DensityScoreEstimate { densities: Vec::new(), scores: Tensor::zeros(&[0, d]) });
    }
    let (xw, yw, tr) = whiten(x, y)?;
    let x_tok = embed_pad(&xw, d_max)?.cast::<F>();
    let y_tok = embed_pad(&yw, d_max)?.cast::<F>();
    x_tok.assert_finite("context tokens")?;
    y_tok.assert_finite("query tokens")?;
    let enc = infer::encode(w, &x_tok)?;

    let (raw, score_w) = match w.config.head_mode {
        HeadMode::Dual => {
            let (raw, score_full) = infer::decode(w, &enc, &y_tok)?;
            (raw.cast::<f64>(), score_full.cast::<f64>().cols_range(0, d)?)
        }
        HeadMode::DensityAutograd => autograd_scores(w, &enc, &y_tok, d)?,
    };

    let densities: Vec<f64> =
        raw.data().iter().map(|&v| (v + tr.log_det_a).exp()).collect();
    if densities.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("density rewrap".to_string()));
    }
    let scores = score_w.matmul_nt(&tr.a)?; // · Aᵀ
    Ok(DensityScoreEstimate { densities, scores })
}

/// Score by differentiating the log-density head with respect to the query
/// coordinates. Queries never attend to each other, so the gradient of the
/// summed log-density separates into per-query score rows; queries run in
/// chunks to bound tape memory.
fn autograd_scores<F: Real>(
    w: &ModelWeights<F>,
    enc: &Tensor<F>,
    y_tok: &Tensor<F>,
    d: usize,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let n_y = y_tok.rows();
    let n_x = enc.rows().max(1);
    let chunk = ((1 << 18) / n_x).clamp(1, 128);
    let mut raw_all = Tensor::zeros(&[n_y, 1]);
    let mut score_all = Tensor::zeros(&[n_y, d]);
    let mut lo = 0;
    while lo < n_y {
        let hi = (lo + chunk).min(n_y);
        let mut tape = Tape::new();
        let m = TapeModel::insert(&mut tape, w, false);
        let enc_leaf = tape.leaf(enc.clone());
        let yv = tape.var(y_tok.rows_range(lo, hi)?);
        let (raw, _) = decode_on_tape(&mut tape, &m, enc_leaf, yv, d, &mut None)?;
        let loss = tape.sum_all(raw)?;
        let mut grads = tape.backward(loss)?;
        let g = grads.take(yv)?;
        raw_all.set_rows_range(lo, &tape.value(raw).cast::<f64>())?;
        score_all.set_rows_range(lo, &g.cols_range(0, d)?.cast::<f64>())?;
        lo = hi;
    }
    Ok((raw_all, score_all))
}
