use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An n×d matrix of i.i.d. points — the universal currency of every
/// estimator. Always stored in f64; consumers cast as needed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Tensor<f64>,
    /// Optional tag naming the generating distribution.
    pub tag: Option<String>,
}

impl SampleSet {
    pub fn new(points: Tensor<f64>) -> Result<Self> {
        if !points.is_2d() {
            return Err(Error::shape(format!(
                "sample set wants n×d, got {:?}",
                points.shape()
            )));
        }
        points.assert_finite("sample set")?;
        Ok(SampleSet { points, tag: None })
    }

    pub fn with_tag(points: Tensor<f64>, tag: impl Into<String>) -> Result<Self> {
        let mut s = Self::new(points)?;
        s.tag = Some(tag.into());
        Ok(s)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.points.rows()
    }

    pub fn d(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Tensor<f64> {
        &self.points
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.points.at2(i, j)
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let (n, d) = (self.n(), self.d());
        let mut m = vec![0.0; d];
        for i in 0..n {
            for (j, mj) in m.iter_mut().enumerate() {
                *mj += self.points.at2(i, j);
            }
        }
        for mj in &mut m {
            *mj /= n as f64;
        }
        m
    }

    /// Per-coordinate sample standard deviation (ddof = 1).
    pub fn std(&self) -> Result<Vec<f64>> {
        let (n, d) = (self.n(), self.d());
        if n < 2 {
            return Err(Error::numeric("std wants n >= 2".to_string()));
        }
        let m = self.mean();
        let mut s = vec![0.0; d];
        for i in 0..n {
            for (j, sj) in s.iter_mut().enumerate() {
                let c = self.points.at2(i, j) - m[j];
                *sj += c * c;
            }
        }
        for sj in &mut s {
            *sj = (*sj / (n as f64 - 1.0)).sqrt();
        }
        Ok(s)
    }

    /// Rows x ↦ xA + μ (row-vector convention).
    pub fn affine_map(&self, a: &Tensor<f64>, mu: &[f64]) -> Result<SampleSet> {
        if !a.is_2d() || a.rows() != self.d() || a.cols() != mu.len() {
            return Err(Error::shape("affine_map shapes".to_string()));
        }
        let mut p = self.points.matmul(a)?;
        let (n, d) = (p.rows(), p.cols());
        for i in 0..n {
            for j in 0..d {
                let v = p.at2(i, j) + mu[j];
                p.set2(i, j, v);
            }
        }
        SampleSet::new(p)
    }

    /// Rows reordered by `perm` (output row i = input row perm[i]).
    pub fn permute(&self, perm: &[usize]) -> Result<SampleSet> {
        if perm.len() != self.n() {
            return Err(Error::shape("permutation length".to_string()));
        }
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| self.row(i).to_vec()).collect();
        SampleSet::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_std() {
        let s = SampleSet::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(s.mean(), vec![1.0, 2.0]);
        let sd = s.std().unwrap();
        assert!((sd[0] - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn affine_and_permute() {
        let s = SampleSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = Tensor::from_vec(&[2, 2], vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        let t = s.affine_map(&a, &[1.0, 1.0]).unwrap();
        assert_eq!(t.row(0), &[3.0, 1.0]);
        assert_eq!(t.row(1), &[1.0, 4.0]);
        let p = s.permute(&[1, 0]).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_nonfinite() {
        assert!(SampleSet::from_rows(&[vec![f64::INFINITY]]).is_err());
    }
}
