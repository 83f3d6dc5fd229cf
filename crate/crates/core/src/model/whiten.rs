use crate::error::{Error, Result};
use crate::sample::SampleSet;
use crate::tensor::Tensor;

/// Context-derived affine normalization: m is the context mean, A the
/// symmetric inverse square root of the centered Gram XcᵀXc (no 1/n), so the
/// whitened context satisfies XwᵀXw = I. Statistics come from the context
/// only; queries reuse the same transform.
#[derive(Debug, Clone)]
pub struct WhiteningTransform {
    pub mean: Vec<f64>,
    /// Symmetric SPD d×d.
    pub a: Tensor<f64>,
    pub a_inv: Tensor<f64>,
    pub det_a: f64,
    pub log_det_a: f64,
}

impl WhiteningTransform {
    /// x ↦ (x − m)·A for every row.
    pub fn apply(&self, pts: &SampleSet) -> Result<Tensor<f64>> {
        let d = self.mean.len();
        if pts.d() != d {
            return Err(Error::shape("whitening transform dim mismatch".to_string()));
        }
        let mut centered = pts.points().clone();
        for i in 0..centered.rows() {
            for j in 0..d {
                let v = centered.at2(i, j) - self.mean[j];
                centered.set2(i, j, v);
            }
        }
        centered.matmul(&self.a)
    }
}

/// Whiten context and queries with the context's own statistics.
/// Requires n_x ≥ d+1 and a Gram with condition number below 1e12.
pub fn whiten(
    x: &SampleSet,
    y: &SampleSet,
) -> Result<(Tensor<f64>, Tensor<f64>, WhiteningTransform)> {
    let d = x.d();
    if y.d() != d {
        return Err(Error::shape(format!("context d={} vs query d={}", d, y.d())));
    }
    if x.n() < d + 1 {
        return Err(Error::numeric(format!(
            "whitening wants n_x >= d+1, got n={} d={}",
            x.n(),
            d
        )));
    }

    let mean = x.mean();
    let mut xc = x.points().clone();
    for i in 0..xc.rows() {
        for j in 0..d {
            let v = xc.at2(i, j) - mean[j];
            xc.set2(i, j, v);
        }
    }
    let gram = xc.matmul_tn(&xc)?; // XcᵀXc, no 1/n

    let gm = nalgebra::DMatrix::from_row_slice(d, d, gram.data());
    let eig = nalgebra::SymmetricEigen::new(gm);
    let mut lmin = f64::INFINITY;
    let mut lmax = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lmin = lmin.min(l);
        lmax = lmax.max(l);
    }
    if !(lmin > 0.0) || lmax / lmin > 1e12 {
        return Err(Error::numeric(format!(
            "ill-conditioned context Gram: smallest eigenvalue {lmin:.3e} (largest {lmax:.3e})"
        )));
    }

    // ridge keeps sqrt() clear of eigensolver roundoff (~1e-16·trace) on
    // near-degenerate Grams; it must stay far below λ_min/cond because it
    // biases XwᵀXw away from I by ridge/λ_min
    let trace: f64 = eig.eigenvalues.iter().sum();
    let ridge = 1e-12 * trace / d as f64;

    let mut a = Tensor::zeros(&[d, d]);
    let mut a_inv = Tensor::zeros(&[d, d]);
    let mut log_det_a = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            let mut si = 0.0;
            for p in 0..d {
                let l = eig.eigenvalues[p] + ridge;
                s += eig.eigenvectors[(i, p)] * eig.eigenvectors[(j, p)] / l.sqrt();
                si += eig.eigenvectors[(i, p)] * eig.eigenvectors[(j, p)] * l.sqrt();
            }
            a.set2(i, j, s);
            a_inv.set2(i, j, si);
        }
    }
    for p in 0..d {
        log_det_a -= 0.5 * (eig.eigenvalues[p] + ridge).ln();
    }

    let t = WhiteningTransform { mean, a, a_inv, det_a: log_det_a.exp(), log_det_a };
    let xw = t.apply(x)?;
    let yw = t.apply(y)?;
    Ok((xw, yw, t))
}
