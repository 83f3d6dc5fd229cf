//! Attention diagnostics: the exact KDE↔attention correspondence for
//! unit-norm inputs, and extraction of learned attention maps alongside a
//! Gaussian-kernel comparison matrix.

use super::infer::{self, Capture};
use super::weights::ModelWeights;
use super::{embed_pad, whiten};
use crate::error::{Error, Result};
use crate::sample::SampleSet;
use crate::tensor::{Real, Tensor};

/// softmax_rows(XXᵀ/h²) for unit-norm rows. Because ‖xᵢ−xⱼ‖² = 2 − 2xᵢᵀxⱼ
/// on the sphere, this equals the row-normalized Gaussian kernel
/// exp(−‖xᵢ−xⱼ‖²/2h²): a softmax attention head reproduces KDE exactly.
pub fn kde_attention_head(x_unit: &Tensor<f64>, h: f64) -> Result<Tensor<f64>> {
    if !(h > 0.0) {
        return Err(Error::config(format!("bandwidth h={h} must be positive")));
    }
    if !x_unit.is_2d() {
        return Err(Error::shape("unit-row input must be n×d".to_string()));
    }
    for i in 0..x_unit.rows() {
        let norm = x_unit.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::numeric(format!("row {i} has norm {norm}, want unit")));
        }
    }
    x_unit.matmul_nt(x_unit)?.scale(1.0 / (h * h)).softmax_rows()
}

/// Attention maps at one block, with a KDE comparison.
#[derive(Debug, Clone)]
pub struct AttentionExport {
    /// Row-stochastic attention per head; n_x×n_x for encoder blocks,
    /// n_y×n_x for decoder blocks.
    pub per_head: Vec<Tensor<f64>>,
    /// Mean over heads.
    pub mean: Tensor<f64>,
    /// Row-normalized D with D_ij ∝ exp(−‖qᵢ−kⱼ‖²) on whitened coordinates.
    pub kde_matrix: Tensor<f64>,
    /// Pearson correlation between entries of `mean` and `kde_matrix`.
    pub kde_correlation: f64,
}

/// Extract the attention matrices of one block. Blocks are indexed globally:
/// encoder blocks first (queries = context), then decoder blocks
/// (queries = query set).
pub fn export_attention<F: Real>(
    w: &ModelWeights<F>,
    x: &SampleSet,
    y: &SampleSet,
    layer: usize,
) -> Result<AttentionExport> {
    let cfg = &w.config;
    let total = cfg.enc_layers + cfg.dec_layers;
    if layer >= total {
        return Err(Error::config(format!("layer {layer} out of range 0..{total}")));
    }
    let (xw, yw, _) = whiten(x, y)?;
    let x_tok = embed_pad(&xw, cfg.d_max)?.cast::<F>();
    let y_tok = embed_pad(&yw, cfg.d_max)?.cast::<F>();

    let mut cap = Capture::new(layer);
    let mut slot = Some(&mut cap);
    let enc = infer::encode_with_capture(w, &x_tok, &mut slot)?;
    if layer >= cfg.enc_layers {
        infer::decode_with_capture(w, &enc, &y_tok, &mut slot)?;
    }
    let per_head = cap.heads;
    if per_head.is_empty() {
        return Err(Error::numeric(format!("no attention captured at layer {layer}")));
    }

    let (nq, nk) = (per_head[0].rows(), per_head[0].cols());
    let mut mean = Tensor::zeros(&[nq, nk]);
    let hinv = 1.0 / per_head.len() as f64;
    for h in &per_head {
        mean = mean.zip(h, |a, b| a + b * hinv)?;
    }

    let queries = if layer < cfg.enc_layers { &xw } else { &yw };
    let kde_matrix = gaussian_comparison(queries, &xw)?;
    let kde_correlation = pearson(mean.data(), kde_matrix.data());
    Ok(AttentionExport { per_head, mean, kde_matrix, kde_correlation })
}

/// Row-normalized exp(−‖qᵢ−kⱼ‖²), computed as a row softmax of the negated
/// squared distances for stability.
fn gaussian_comparison(q: &Tensor<f64>, k: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (nq, nk, d) = (q.rows(), k.rows(), q.cols());
    let mut logits = Tensor::zeros(&[nq, nk]);
    for i in 0..nq {
        for j in 0..nk {
            let mut dist2 = 0.0;
            for c in 0..d {
                let z = q.at2(i, c) - k.at2(j, c);
                dist2 += z * z;
            }
            logits.set2(i, j, -dist2);
        }
    }
    logits.softmax_rows()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    let denom = (va * vb).sqrt();
    if denom > 0.0 {
        cov / denom
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::rngutil;
    use rand::Rng;

    #[test]
    fn two_axis_points_match_closed_form() {
        // x₁=(1,0), x₂=(0,1), h=1: logits 1 and 0 → off-diagonal e⁻¹/(1+e⁻¹)
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = kde_attention_head(&x, 1.0).unwrap();
        let off = (-1.0f64).exp() / (1.0 + (-1.0f64).exp());
        assert!((a.at2(0, 1) - off).abs() < 1e-12);
        assert!((a.at2(1, 0) - off).abs() < 1e-12);
        assert!((a.at2(0, 0) - (1.0 - off)).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_give_uniform_attention() {
        let x = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let a = kde_attention_head(&x, 0.5).unwrap();
        for &v in a.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_unit_rows_match_direct_gaussian_kernel() {
        let mut rng = rngutil::stream(17, 7, 3);
        for &(n, d, h) in &[(50usize, 3usize, 0.7f64), (31, 5, 1.3), (8, 2, 0.2)] {
            let mut x = Tensor::zeros(&[n, d]);
            for i in 0..n {
                let mut row = vec![0.0; d];
                let mut norm = 0.0;
                for v in row.iter_mut() {
                    *v = rng.gen::<f64>() - 0.5;
                    norm += *v * *v;
                }
                let norm = norm.sqrt();
                for (j, v) in row.iter().enumerate() {
                    x.set2(i, j, v / norm);
                }
            }
            let a = kde_attention_head(&x, h).unwrap();
            // direct kernel: exp(−‖xi−xj‖²/2h²), row-normalized
            for i in 0..n {
                let mut krow = vec![0.0; n];
                let mut sum = 0.0;
                for j in 0..n {
                    let mut d2 = 0.0;
                    for c in 0..d {
                        let z = x.at2(i, c) - x.at2(j, c);
                        d2 += z * z;
                    }
                    krow[j] = (-d2 / (2.0 * h * h)).exp();
                    sum += krow[j];
                }
                for j in 0..n {
                    assert!((a.at2(i, j) - krow[j] / sum).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_unit_rows_are_rejected() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        assert!(kde_attention_head(&x, 1.0).is_err());
        let ok = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        assert!(kde_attention_head(&ok, -1.0).is_err());
    }

    #[test]
    fn export_rows_are_stochastic_and_correlation_in_range() {
        let cfg = ModelConfig { hidden: 16, enc_layers: 2, dec_layers: 1, heads: 2, ..ModelConfig::desk() };
        let w = ModelWeights::<f64>::init(cfg, 31).unwrap();
        let x = SampleSet::new(crate::gradcheck::rand_tensor(&mut rngutil::stream(1, 7, 4), &[12, 2])).unwrap();
        let y = SampleSet::new(crate::gradcheck::rand_tensor(&mut rngutil::stream(1, 7, 5), &[5, 2])).unwrap();
        for layer in 0..3 {
            let e = export_attention(&w, &x, &y, layer).unwrap();
            let want_rows = if layer < 2 { 12 } else { 5 };
            assert_eq!(e.per_head.len(), 2);
            for h in &e.per_head {
                assert_eq!(h.shape(), &[want_rows, 12]);
                for i in 0..h.rows() {
                    let s: f64 = h.row(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
            for i in 0..e.mean.rows() {
                let s: f64 = e.mean.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
            assert!((-1.0..=1.0).contains(&e.kde_correlation));
            // comparison matrix rows are stochastic too
            for i in 0..e.kde_matrix.rows() {
                let s: f64 = e.kde_matrix.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        assert!(export_attention(&w, &x, &y, 3).is_err());
    }

    #[test]
    fn coincident_points_give_uniform_comparison_rows() {
        let q = Tensor::from_vec(&[2, 1], vec![0.7, 0.7]).unwrap();
        let d = gaussian_comparison(&q, &q).unwrap();
        for &v in d.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }
}
