use crate::error::{Error, Result};

/// Element type of all tensors: f64 (default for tests and baselines) or f32
/// (training speed). Randomness is always drawn in f64 and cast, so the two
/// dtypes see the same sample streams.
pub trait Real:
    num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    const DTYPE_TAG: u8; // checkpoint dtype byte: 4 = f32, 8 = f64
    fn from_f64(x: f64) -> Self;
    fn into_f64(self) -> f64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(b: &[u8]) -> Self;
}

impl Real for f64 {
    const DTYPE_TAG: u8 = 8;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn into_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(b: &[u8]) -> Self {
        f64::from_le_bytes(b.try_into().expect("8 bytes"))
    }
}

impl Real for f32 {
    const DTYPE_TAG: u8 = 4;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(b: &[u8]) -> Self {
        f32::from_le_bytes(b.try_into().expect("4 bytes"))
    }
}

/// Dense row-major tensor. Invariant: product(shape) == data.len().
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![F::zero(); len] }
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; len] }
    }

    pub fn scalar(v: F) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} wants {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// 2D tensor from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::shape("ragged rows".to_string()));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor { shape: vec![n, d], data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn is_2d(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[F] {
        let d = self.cols();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn at2(&self, i: usize, j: usize) -> F {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.shape[1] + j] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self, ctx: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(ctx.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn scale(&self, c: F) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    /// Copy of rows [lo, hi).
    pub fn rows_range(&self, lo: usize, hi: usize) -> Result<Self> {
        if !self.is_2d() || lo > hi || hi > self.rows() {
            return Err(Error::shape(format!("rows_range {lo}..{hi} of {:?}", self.shape)));
        }
        let m = self.cols();
        Ok(Tensor { shape: vec![hi - lo, m], data: self.data[lo * m..hi * m].to_vec() })
    }

    /// Copy of columns [lo, hi).
    pub fn cols_range(&self, lo: usize, hi: usize) -> Result<Self> {
        if !self.is_2d() || lo > hi || hi > self.cols() {
            return Err(Error::shape(format!("cols_range {lo}..{hi} of {:?}", self.shape)));
        }
        let (n, m, w) = (self.rows(), self.cols(), hi - lo);
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&self.data[i * m + lo..i * m + hi]);
        }
        Ok(Tensor { shape: vec![n, w], data })
    }

    /// Overwrite rows starting at `lo` with the rows of `src`.
    pub fn set_rows_range(&mut self, lo: usize, src: &Self) -> Result<()> {
        if !self.is_2d() || src.cols() != self.cols() || lo + src.rows() > self.rows() {
            return Err(Error::shape(format!(
                "set_rows_range at {lo}: {:?} into {:?}",
                src.shape, self.shape
            )));
        }
        let m = self.cols();
        self.data[lo * m..(lo + src.rows()) * m].copy_from_slice(&src.data);
        Ok(())
    }

    /// Overwrite columns starting at `lo` with the columns of `src`.
    pub fn set_cols_range(&mut self, lo: usize, src: &Self) -> Result<()> {
        if !self.is_2d() || src.rows() != self.rows() || lo + src.cols() > self.cols() {
            return Err(Error::shape(format!(
                "set_cols_range at {lo}: {:?} into {:?}",
                src.shape, self.shape
            )));
        }
        let (m, w) = (self.cols(), src.cols());
        for i in 0..self.rows() {
            self.data[i * m + lo..i * m + lo + w].copy_from_slice(src.row(i));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Result<Self> {
        if !self.is_2d() {
            return Err(Error::shape("transpose wants 2D".to_string()));
        }
        let (n, m) = (self.rows(), self.cols());
        let mut out = vec![F::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    /// C = A·B. Blocked i-k-j loop: the inner j loop is a contiguous
    /// axpy over rows of B and C, which the compiler vectorizes.
    pub fn matmul(&self, b: &Self) -> Result<Self> {
        let (a, bm) = (self, b);
        if !a.is_2d() || !bm.is_2d() || a.cols() != bm.rows() {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                a.shape, bm.shape
            )));
        }
        let (n, k, m) = (a.rows(), a.cols(), bm.cols());
        let mut c = vec![F::zero(); n * m];
        for i in 0..n {
            let arow = &a.data[i * k..(i + 1) * k];
            let crow = &mut c[i * m..(i + 1) * m];
            for (p, &av) in arow.iter().enumerate() {
                if av == F::zero() {
                    continue;
                }
                let brow = &bm.data[p * m..(p + 1) * m];
                for j in 0..m {
                    crow[j] = crow[j] + av * brow[j];
                }
            }
        }
        Ok(Tensor { shape: vec![n, m], data: c })
    }

    /// C = A·Bᵀ (rows-by-rows dot products; good locality, no transpose copy).
    pub fn matmul_nt(&self, b: &Self) -> Result<Self> {
        let a = self;
        if !a.is_2d() || !b.is_2d() || a.cols() != b.cols() {
            return Err(Error::shape(format!(
                "matmul_nt {:?} x {:?}ᵀ",
                a.shape, b.shape
            )));
        }
        let (n, k, m) = (a.rows(), a.cols(), b.rows());
        let mut c = vec![F::zero(); n * m];
        for i in 0..n {
            let arow = &a.data[i * k..(i + 1) * k];
            let crow = &mut c[i * m..(i + 1) * m];
            for j in 0..m {
                let brow = &b.data[j * k..(j + 1) * k];
                let mut acc = F::zero();
                for p in 0..k {
                    acc = acc + arow[p] * brow[p];
                }
                crow[j] = acc;
            }
        }
        Ok(Tensor { shape: vec![n, m], data: c })
    }

    /// C = Aᵀ·B (outer loop over the shared row index; contiguous updates).
    pub fn matmul_tn(&self, b: &Self) -> Result<Self> {
        let a = self;
        if !a.is_2d() || !b.is_2d() || a.rows() != b.rows() {
            return Err(Error::shape(format!(
                "matmul_tn {:?}ᵀ x {:?}",
                a.shape, b.shape
            )));
        }
        let (n, k, m) = (a.rows(), a.cols(), b.cols());
        let mut c = vec![F::zero(); k * m];
        for i in 0..n {
            let arow = &a.data[i * k..(i + 1) * k];
            let brow = &b.data[i * m..(i + 1) * m];
            for (p, &av) in arow.iter().enumerate() {
                if av == F::zero() {
                    continue;
                }
                let crow = &mut c[p * m..(p + 1) * m];
                for j in 0..m {
                    crow[j] = crow[j] + av * brow[j];
                }
            }
        }
        Ok(Tensor { shape: vec![k, m], data: c })
    }

    /// Row-wise softmax with per-row max subtraction; rows sum to 1.
    pub fn softmax_rows(&self) -> Result<Self> {
        if !self.is_2d() {
            return Err(Error::shape("softmax_rows wants 2D".to_string()));
        }
        let (n, m) = (self.rows(), self.cols());
        let mut out = vec![F::zero(); n * m];
        for i in 0..n {
            let row = &self.data[i * m..(i + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for j in 0..m {
                let e = (row[j] - mx).exp();
                orow[j] = e;
                z = z + e;
            }
            for v in orow.iter_mut() {
                *v = *v / z;
            }
        }
        Ok(Tensor { shape: vec![n, m], data: out })
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.into_f64())).collect(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.cast()
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max)
    }
}
