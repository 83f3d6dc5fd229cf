use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use rand::Rng;

/// Handle into a [`Tape`]'s node arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<F: Real> {
    Leaf,
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    /// X (n×m) + bias (1×m), broadcast over rows.
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize),
    MulScalar(usize, F),
    Gelu(usize),
    Exp(usize),
    /// Row-wise layer norm; caches per-row mean and reciprocal std.
    LayerNorm { x: usize, gamma: usize, beta: usize, mean: Vec<F>, rstd: Vec<F> },
    SoftmaxRows(usize),
    /// Inverted dropout; mask entries are 0 or 1/(1-rate).
    Dropout { x: usize, mask: Tensor<F> },
    SumAll(usize),
    MeanAll(usize),
    SliceCols { x: usize, lo: usize, hi: usize },
    ConcatCols(Vec<usize>),
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Wengert-list reverse-mode tape. One tape per forward call; every primitive
/// finite-checks its output. Values are immutable once recorded.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input: no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input (parameter or input requiring a gradient).
    pub fn var(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, value: Tensor<F>, op: Op<F>, ctx: &str) -> Result<NodeId> {
        value.assert_finite(ctx)?;
        let needs = self.op_needs_grad(&op);
        Ok(self.push(value, op, needs))
    }

    fn op_needs_grad(&self, op: &Op<F>) -> bool {
        let n = |i: &usize| self.nodes[*i].needs_grad;
        match op {
            Op::Leaf => false,
            Op::Matmul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                n(a) || n(b)
            }
            Op::Transpose(x)
            | Op::AddScalar(x)
            | Op::MulScalar(x, _)
            | Op::Gelu(x)
            | Op::Exp(x)
            | Op::SoftmaxRows(x)
            | Op::SumAll(x)
            | Op::MeanAll(x) => n(x),
            Op::LayerNorm { x, gamma, beta, .. } => n(x) || n(gamma) || n(beta),
            Op::Dropout { x, .. } => n(x),
            Op::SliceCols { x, .. } => n(x),
            Op::ConcatCols(xs) => xs.iter().any(n),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push_checked(v, Op::Matmul(a.0, b.0), "matmul")
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).transpose()?;
        self.push_checked(v, Op::Transpose(x.0), "transpose")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x + y)?;
        self.push_checked(v, Op::Add(a.0, b.0), "add")
    }

    /// X (n×m) plus a 1×m bias row.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if !xv.is_2d() || !bv.is_2d() || bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(format!(
                "add_row {:?} + {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let (n, m) = (xv.rows(), xv.cols());
        let mut out = xv.clone();
        for i in 0..n {
            let row = &mut out.data_mut()[i * m..(i + 1) * m];
            for j in 0..m {
                row[j] = row[j] + bv.data()[j];
            }
        }
        self.push_checked(out, Op::AddRow(x.0, bias.0), "add_row")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x - y)?;
        self.push_checked(v, Op::Sub(a.0, b.0), "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x * y)?;
        self.push_checked(v, Op::Mul(a.0, b.0), "mul")
    }

    pub fn add_scalar(&mut self, x: NodeId, c: F) -> Result<NodeId> {
        let v = self.value(x).map(|v| v + c);
        self.push_checked(v, Op::AddScalar(x.0), "add_scalar")
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: F) -> Result<NodeId> {
        let v = self.value(x).scale(c);
        self.push_checked(v, Op::MulScalar(x.0, c), "mul_scalar")
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(gelu_fwd);
        self.push_checked(v, Op::Gelu(x.0), "gelu")
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(|v| v.exp());
        self.push_checked(v, Op::Exp(x.0), "exp")
    }

    /// Row-wise layer normalization with learned 1×m scale and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: F) -> Result<NodeId> {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let (out, means, rstds) = layer_norm_fwd(xv, gv, bv, eps)?;
        self.push_checked(
            out,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, mean: means, rstd: rstds },
            "layer_norm",
        )
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).softmax_rows()?;
        self.push_checked(v, Op::SoftmaxRows(x.0), "softmax_rows")
    }

    /// Inverted dropout; identity when rate == 0. The mask is drawn from the
    /// supplied stream in f64, so the same key gives the same mask for f32
    /// and f64 runs.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut impl Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate}")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = F::from_f64(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mut mask = Tensor::zeros(xv.shape());
        for v in mask.data_mut() {
            let u: f64 = rng.gen::<f64>();
            *v = if u < rate { F::zero() } else { keep };
        }
        let out = xv.zip(&mask, |a, m| a * m)?;
        self.push_checked(out, Op::Dropout { x: x.0, mask }, "dropout")
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push_checked(v, Op::SumAll(x.0), "sum_all")
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let v = Tensor::scalar(xv.sum() / F::from_f64(xv.len() as f64));
        self.push_checked(v, Op::MeanAll(x.0), "mean_all")
    }

    /// Columns [lo, hi) of a 2D tensor.
    pub fn slice_cols(&mut self, x: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if !xv.is_2d() || lo >= hi || hi > xv.cols() {
            return Err(Error::shape(format!(
                "slice_cols [{lo},{hi}) of {:?}",
                xv.shape()
            )));
        }
        let (n, m, w) = (xv.rows(), xv.cols(), hi - lo);
        let mut out = Tensor::zeros(&[n, w]);
        for i in 0..n {
            out.data_mut()[i * w..(i + 1) * w].copy_from_slice(&xv.data()[i * m + lo..i * m + hi]);
        }
        self.push_checked(out, Op::SliceCols { x: x.0, lo, hi }, "slice_cols")
    }

    /// Concatenate 2D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::shape("concat_cols of nothing".to_string()));
        }
        let n = self.value(xs[0]).rows();
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut out = Tensor::zeros(&[n, total]);
        let mut off = 0;
        for &x in xs {
            let xv = self.value(x);
            if !xv.is_2d() || xv.rows() != n {
                return Err(Error::shape("concat_cols row mismatch".to_string()));
            }
            let w = xv.cols();
            for i in 0..n {
                out.data_mut()[i * total + off..i * total + off + w]
                    .copy_from_slice(xv.row(i));
            }
            off += w;
        }
        self.push_checked(out, Op::ConcatCols(xs.iter().map(|x| x.0).collect()), "concat_cols")
    }

    /// Reverse-mode sweep from a scalar loss. Returns one gradient slot per
    /// node; only nodes on a differentiable path hold `Some`.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(F::one()));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].needs_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Tensor<F>>], idx: usize, delta: Tensor<F>) {
        match &mut grads[idx] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a = *a + *b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let needs = |j: usize| self.nodes[j].needs_grad;
        let val = |j: usize| &self.nodes[j].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                if needs(*a) {
                    Self::accumulate(grads, *a, g.matmul_nt(val(*b))?);
                }
                if needs(*b) {
                    Self::accumulate(grads, *b, val(*a).matmul_tn(g)?);
                }
            }
            Op::Transpose(x) => {
                if needs(*x) {
                    Self::accumulate(grads, *x, g.transpose()?);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    Self::accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    Self::accumulate(grads, *b, g.clone());
                }
            }
            Op::AddRow(x, bias) => {
                if needs(*x) {
                    Self::accumulate(grads, *x, g.clone());
                }
                if needs(*bias) {
                    let (n, m) = (g.rows(), g.cols());
                    let mut db = Tensor::zeros(&[1, m]);
                    for r in 0..n {
                        for j in 0..m {
                            db.data_mut()[j] = db.data()[j] + g.at2(r, j);
                        }
                    }
                    Self::accumulate(grads, *bias, db);
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    Self::accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    Self::accumulate(grads, *b, g.scale(-F::one()));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    Self::accumulate(grads, *a, g.zip(val(*b), |x, y| x * y)?);
                }
                if needs(*b) {
                    Self::accumulate(grads, *b, g.zip(val(*a), |x, y| x * y)?);
                }
            }
            Op::AddScalar(x) => {
                if needs(*x) {
                    Self::accumulate(grads, *x, g.clone());
                }
            }
            Op::MulScalar(x, c) => {
                if needs(*x) {
                    Self::accumulate(grads, *x, g.scale(*c));
                }
            }
            Op::Gelu(x) => {
                if needs(*x) {
                    Self::accumulate(grads, *x, g.zip(val(*x), |gy, xv| gy * gelu_bwd(xv))?);
                }
            }
            Op::Exp(x) => {
                if needs(*x) {
                    Self::accumulate(grads, *x, g.zip(&self.nodes[i].value, |gy, y| gy * y)?);
                }
            }
            Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                let xv = val(*x);
                let gv = val(*gamma);
                let (n, m) = (xv.rows(), xv.cols());
                let fm = F::from_f64(m as f64);
                if needs(*gamma) || needs(*beta) {
                    let mut dg = Tensor::zeros(&[1, m]);
                    let mut db = Tensor::zeros(&[1, m]);
                    for r in 0..n {
                        for j in 0..m {
                            let xh = (xv.at2(r, j) - mean[r]) * rstd[r];
                            dg.data_mut()[j] = dg.data()[j] + g.at2(r, j) * xh;
                            db.data_mut()[j] = db.data()[j] + g.at2(r, j);
                        }
                    }
                    if needs(*gamma) {
                        Self::accumulate(grads, *gamma, dg);
                    }
                    if needs(*beta) {
                        Self::accumulate(grads, *beta, db);
                    }
                }
                if needs(*x) {
                    let mut dx = Tensor::zeros(&[n, m]);
                    for r in 0..n {
                        // dyh = g ⊙ γ; dx = rstd·(dyh − mean(dyh) − x̂·mean(dyh⊙x̂))
                        let mut s1 = F::zero();
                        let mut s2 = F::zero();
                        for j in 0..m {
                            let dyh = g.at2(r, j) * gv.data()[j];
                            let xh = (xv.at2(r, j) - mean[r]) * rstd[r];
                            s1 = s1 + dyh;
                            s2 = s2 + dyh * xh;
                        }
                        s1 = s1 / fm;
                        s2 = s2 / fm;
                        for j in 0..m {
                            let dyh = g.at2(r, j) * gv.data()[j];
                            let xh = (xv.at2(r, j) - mean[r]) * rstd[r];
                            dx.set2(r, j, rstd[r] * (dyh - s1 - xh * s2));
                        }
                    }
                    Self::accumulate(grads, *x, dx);
                }
            }
            Op::SoftmaxRows(x) => {
                if needs(*x) {
                    let y = &self.nodes[i].value;
                    let (n, m) = (y.rows(), y.cols());
                    let mut dx = Tensor::zeros(&[n, m]);
                    for r in 0..n {
                        let mut dot = F::zero();
                        for j in 0..m {
                            dot = dot + g.at2(r, j) * y.at2(r, j);
                        }
                        for j in 0..m {
                            dx.set2(r, j, y.at2(r, j) * (g.at2(r, j) - dot));
                        }
                    }
                    Self::accumulate(grads, *x, dx);
                }
            }
            Op::Dropout { x, mask } => {
                if needs(*x) {
                    Self::accumulate(grads, *x, g.zip(mask, |gy, mv| gy * mv)?);
                }
            }
            Op::SumAll(x) => {
                if needs(*x) {
                    let c = g.data()[0];
                    Self::accumulate(grads, *x, Tensor::full(val(*x).shape(), c));
                }
            }
            Op::MeanAll(x) => {
                if needs(*x) {
                    let len = F::from_f64(val(*x).len() as f64);
                    let c = g.data()[0] / len;
                    Self::accumulate(grads, *x, Tensor::full(val(*x).shape(), c));
                }
            }
            Op::SliceCols { x, lo, hi } => {
                if needs(*x) {
                    let xv = val(*x);
                    let (n, m, w) = (xv.rows(), xv.cols(), hi - lo);
                    let mut dx = Tensor::zeros(&[n, m]);
                    for r in 0..n {
                        dx.data_mut()[r * m + lo..r * m + hi]
                            .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    Self::accumulate(grads, *x, dx);
                }
            }
            Op::ConcatCols(xs) => {
                let total = self.nodes[i].value.cols();
                let n = self.nodes[i].value.rows();
                let mut off = 0;
                for &xi in xs {
                    let w = val(xi).cols();
                    if needs(xi) {
                        let mut dx = Tensor::zeros(&[n, w]);
                        for r in 0..n {
                            dx.data_mut()[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        Self::accumulate(grads, xi, dx);
                    }
                    off += w;
                }
            }
        }
        Ok(())
    }
}

/// Result of a backward sweep; gradient lookup by node handle.
pub struct Gradients<F: Real> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a differentiable node; errors if the node was not on a
    /// differentiable path (e.g. a parameter unused by the loss).
    pub fn take(&mut self, id: NodeId) -> Result<Tensor<F>> {
        self.grads[id.0]
            .take()
            .ok_or_else(|| Error::numeric(format!("node {} not reached by backward", id.0)))
    }
}

/// Row-normalize then scale/shift; also returns per-row mean and 1/std for
/// the backward pass. Shared with the streaming forward so both paths
/// compute bit-identical values.
pub(crate) fn layer_norm_fwd<F: Real>(
    xv: &Tensor<F>,
    gv: &Tensor<F>,
    bv: &Tensor<F>,
    eps: F,
) -> Result<(Tensor<F>, Vec<F>, Vec<F>)> {
    if !xv.is_2d() || gv.shape() != [1, xv.cols()] || bv.shape() != [1, xv.cols()] {
        return Err(Error::shape("layer_norm shapes".to_string()));
    }
    let (n, m) = (xv.rows(), xv.cols());
    let fm = F::from_f64(m as f64);
    let mut out = Tensor::zeros(&[n, m]);
    let mut means = vec![F::zero(); n];
    let mut rstds = vec![F::zero(); n];
    for i in 0..n {
        let row = xv.row(i);
        let mu = row.iter().copied().sum::<F>() / fm;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() / fm;
        let rstd = (var + eps).sqrt().recip();
        means[i] = mu;
        rstds[i] = rstd;
        for j in 0..m {
            let xh = (row[j] - mu) * rstd;
            out.data_mut()[i * m + j] = xh * gv.data()[j] + bv.data()[j];
        }
    }
    Ok((out, means, rstds))
}

/// GELU, tanh form: 0.5x(1 + tanh(√(2/π)(x + 0.044715x³))).
/// The backward pass below is the exact derivative of this expression.
pub(crate) fn gelu_fwd<F: Real>(x: F) -> F {
    let c = F::from_f64(0.7978845608028654); // sqrt(2/pi)
    let k = F::from_f64(0.044715);
    let u = c * (x + k * x * x * x);
    let half = F::from_f64(0.5);
    half * x * (F::one() + u.tanh())
}

fn gelu_bwd<F: Real>(x: F) -> F {
    let c = F::from_f64(0.7978845608028654);
    let k = F::from_f64(0.044715);
    let three = F::from_f64(3.0);
    let half = F::from_f64(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + three * k * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::SeedableRng;

    #[test]
    fn square_at_three() {
        // f(x) = x² at x=3 → df/dx = 6
        let mut t = Tape::<f64>::new();
        let x = t.var(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let mut g = t.backward(y).unwrap();
        assert_eq!(g.take(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn softmax_sum_has_zero_grad() {
        // f(x) = sum(softmax(x)) is constant 1 ⇒ gradient 0
        let mut t = Tape::<f64>::new();
        let x = t.var(Tensor::from_vec(&[1, 4], vec![0.3, -1.2, 2.0, 0.0]).unwrap());
        let s = t.softmax_rows(x).unwrap();
        let y = t.sum_all(s).unwrap();
        let mut g = t.backward(y).unwrap();
        for &v in g.take(x).unwrap().data() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn nonfinite_forward_trips() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::scalar(1e308));
        assert!(t.mul(x, x).is_err());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::<f64>::new();
        let x = t.var(Tensor::zeros(&[2, 2]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn unused_param_not_reached() {
        let mut t = Tape::<f64>::new();
        let x = t.var(Tensor::scalar(1.0));
        let w = t.var(Tensor::scalar(2.0));
        let y = t.mul(x, x).unwrap();
        let mut g = t.backward(y).unwrap();
        assert!(g.take(w).is_err());
    }

    #[test]
    fn two_layer_net_directional_derivative() {
        // random 2-layer net: reverse-mode vs central differences, rel err < 1e-6
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..5 {
            let (n, din, dh) = (4, 3, 5);
            let x0 = gradcheck::rand_tensor(&mut rng, &[n, din]);
            let w1 = gradcheck::rand_tensor(&mut rng, &[din, dh]);
            let b1 = gradcheck::rand_tensor(&mut rng, &[1, dh]);
            let w2 = gradcheck::rand_tensor(&mut rng, &[dh, 1]);
            let run = |params: &[Tensor<f64>]| {
                let mut t = Tape::<f64>::new();
                let x = t.leaf(x0.clone());
                let w1 = t.var(params[0].clone());
                let b1 = t.var(params[1].clone());
                let w2 = t.var(params[2].clone());
                let h = t.matmul(x, w1)?;
                let h = t.add_row(h, b1)?;
                let h = t.gelu(h)?;
                let o = t.matmul(h, w2)?;
                let loss = t.mean_all(o)?;
                Ok((t, vec![w1, b1, w2], loss))
            };
            let rel = gradcheck::max_rel_err(&[w1, b1, w2], run, 1e-5, &mut rng).unwrap();
            assert!(rel < 1e-6, "rel err {rel}");
        }
    }

    #[test]
    fn every_primitive_gradchecks() {
        for seed in 0..20u64 {
            let rel = gradcheck::check_all_primitives(seed).unwrap();
            assert!(rel < 1e-4, "seed {seed}: rel err {rel}");
        }
    }

    #[test]
    fn dropout_mask_matches_key() {
        // same stream key ⇒ same mask ⇒ identical outputs
        let x0 = Tensor::from_vec(&[4, 4], (0..16).map(|i| i as f64).collect()).unwrap();
        let run = |seed: u64| {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let mut t = Tape::<f64>::new();
            let x = t.var(x0.clone());
            let y = t.dropout(x, 0.5, &mut rng).unwrap();
            t.value(y).clone()
        };
        assert_eq!(run(3).data(), run(3).data());
        assert_ne!(run(3).data(), run(4).data());
    }
}
