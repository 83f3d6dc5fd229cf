//! Score matching without target scores: minimize E[‖s_θ(x)‖² + 2∇·s_θ(x)]
//! with the divergence replaced by a central finite-difference probe
//! estimate. One small MLP per density.

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rngutil::{self, purpose};
use crate::sample::SampleSet;
use crate::tape::{gelu_fwd, NodeId, Tape};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct SmConfig {
    /// Hidden layer widths of the score MLP.
    pub hidden: Vec<usize>,
    /// Finite-difference step for the divergence probes.
    pub eps_fd: f64,
    /// Fresh probe vectors per sample per step.
    pub probes: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SmConfig {
    fn default() -> Self {
        SmConfig { hidden: vec![32, 32], eps_fd: 1e-3, probes: 1, steps: 400, lr: 3e-3, seed: 0 }
    }
}

impl SmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_fd > 0.0) {
            return Err(Error::config(format!("eps_fd {} must be positive", self.eps_fd)));
        }
        if self.probes == 0 || self.steps == 0 || !(self.lr > 0.0) {
            return Err(Error::config("probes, steps, lr must be positive".to_string()));
        }
        Ok(())
    }
}

/// Trained score field s_θ: R^d → R^d (GELU MLP, linear output).
#[derive(Debug, Clone)]
pub struct ScoreMlp {
    dims: Vec<usize>,
    params: Vec<Tensor<f64>>, // w0, b0, w1, b1, ...
}

impl ScoreMlp {
    fn init(d: usize, hidden: &[usize], seed: u64) -> Self {
        let mut dims = vec![d];
        dims.extend_from_slice(hidden);
        dims.push(d);
        let mut rng = rngutil::stream(seed, purpose::INIT, 1);
        let mut params = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut wt = Tensor::zeros(&[fan_in, fan_out]);
            for v in wt.data_mut() {
                *v = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
            }
            params.push(wt);
            params.push(Tensor::zeros(&[1, fan_out]));
        }
        ScoreMlp { dims, params }
    }

    pub fn score(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        if !x.is_2d() || x.cols() != self.dims[0] {
            return Err(Error::shape(format!(
                "score field wants n×{}, got {:?}",
                self.dims[0],
                x.shape()
            )));
        }
        let layers = self.params.len() / 2;
        let mut h = x.clone();
        for l in 0..layers {
            let w = &self.params[2 * l];
            let b = &self.params[2 * l + 1];
            let mut z = h.matmul(w)?;
            let m = z.cols();
            for i in 0..z.rows() {
                for j in 0..m {
                    z.data_mut()[i * m + j] += b.data()[j];
                }
            }
            h = if l + 1 < layers { z.map(gelu_fwd) } else { z };
        }
        Ok(h)
    }

    pub fn score_set(&self, x: &SampleSet) -> Result<Tensor<f64>> {
        self.score(x.points())
    }

    fn on_tape(&self, tape: &mut Tape<f64>, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let layers = self.params.len() / 2;
        let mut h = x;
        for l in 0..layers {
            let z = tape.matmul(h, ids[2 * l])?;
            let z = tape.add_row(z, ids[2 * l + 1])?;
            h = if l + 1 < layers { tape.gelu(z)? } else { z };
        }
        Ok(h)
    }
}

/// Probe-averaged central-difference divergence of a vector field at each
/// row of x: (1/P) Σ_p z_pᵀ(s(x+εz_p) − s(x−εz_p))/2ε per row.
/// Exact for any ε on fields with vanishing third derivatives.
pub fn fd_divergence(
    field: &dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    x: &Tensor<f64>,
    eps: f64,
    probes: &[Tensor<f64>],
) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::config(format!("eps {eps} must be positive")));
    }
    if probes.is_empty() {
        return Err(Error::config("need at least one probe".to_string()));
    }
    let (n, d) = (x.rows(), x.cols());
    let mut out = vec![0.0; n];
    for z in probes {
        if z.shape() != x.shape() {
            return Err(Error::shape(format!("probe {:?} vs x {:?}", z.shape(), x.shape())));
        }
        let xp = x.zip(z, |a, b| a + eps * b)?;
        let xm = x.zip(z, |a, b| a - eps * b)?;
        let sp = field(&xp)?;
        let sm = field(&xm)?;
        for i in 0..n {
            let mut acc = 0.0;
            for c in 0..d {
                acc += z.at2(i, c) * (sp.at2(i, c) - sm.at2(i, c));
            }
            out[i] += acc / (2.0 * eps);
        }
    }
    let p = probes.len() as f64;
    for v in out.iter_mut() {
        *v /= p;
        if !v.is_finite() {
            return Err(Error::NonFinite("divergence estimate".to_string()));
        }
    }
    Ok(out)
}

/// Probe set {√d·e_i} broadcast to n rows: averaging over it recovers the
/// trace of the Jacobian exactly (E[z zᵀ] = I by construction).
pub fn basis_probes(n: usize, d: usize) -> Vec<Tensor<f64>> {
    (0..d)
        .map(|c| {
            let mut z = Tensor::zeros(&[n, d]);
            let v = (d as f64).sqrt();
            for i in 0..n {
                z.set2(i, c, v);
            }
            z
        })
        .collect()
}

#[derive(Debug)]
pub struct SmTrainResult {
    pub model: ScoreMlp,
    pub losses: Vec<f64>,
}

/// Fit the score MLP to a sample by score matching. Full-batch steps; probe
/// vectors are redrawn each step from a step-keyed stream.
pub fn sm_train(x: &SampleSet, cfg: &SmConfig) -> Result<SmTrainResult> {
    cfg.validate()?;
    if x.n() < 2 {
        return Err(Error::config("score matching needs n >= 2".to_string()));
    }
    let (n, d) = (x.n(), x.d());
    let model = ScoreMlp::init(d, &cfg.hidden, cfg.seed);
    let mut params = model.params.clone();
    let shapes: Vec<Vec<usize>> = params.iter().map(|t| t.shape().to_vec()).collect();
    let mut opt = Adam::new(cfg.lr, &shapes)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    let eps = cfg.eps_fd;
    let inv_n = 1.0 / n as f64;

    for step in 0..cfg.steps as u64 {
        let mut rng = rngutil::stream(cfg.seed, purpose::BATCH, step);
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|t| tape.var(t.clone())).collect();
        let holder = ScoreMlp { dims: model.dims.clone(), params: params.clone() };
        let xl = tape.leaf(x.points().clone());

        // ‖s(x)‖² term
        let s = holder.on_tape(&mut tape, &ids, xl)?;
        let sq = tape.mul(s, s)?;
        let norm_sum = tape.sum_all(sq)?;
        let mut loss = tape.mul_scalar(norm_sum, inv_n)?;

        // 2·divergence term, probe-averaged
        for _ in 0..cfg.probes {
            let mut z = Tensor::zeros(&[n, d]);
            for v in z.data_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let xp = tape.leaf(x.points().zip(&z, |a, b| a + eps * b)?);
            let xm = tape.leaf(x.points().zip(&z, |a, b| a - eps * b)?);
            let zl = tape.leaf(z);
            let sp = holder.on_tape(&mut tape, &ids, xp)?;
            let sm = holder.on_tape(&mut tape, &ids, xm)?;
            let diff = tape.sub(sp, sm)?;
            let dot = tape.mul(diff, zl)?;
            let dsum = tape.sum_all(dot)?;
            // 2 · (1/(2ε)) · (1/n) / probes
            let w = 2.0 / (2.0 * eps) * inv_n / cfg.probes as f64;
            let term = tape.mul_scalar(dsum, w)?;
            loss = tape.add(loss, term)?;
        }

        let val = tape.value(loss).data()[0];
        if !val.is_finite() {
            return Err(Error::NonFinite(format!("score-matching loss at step {step}")));
        }
        losses.push(val);
        let mut grads = tape.backward(loss)?;
        let gvec: Vec<Tensor<f64>> =
            ids.iter().map(|&id| grads.take(id)).collect::<Result<Vec<_>>>()?;
        opt.step(&mut params, &gvec)?;
    }
    Ok(SmTrainResult { model: ScoreMlp { dims: model.dims, params }, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_field_divergence_is_exact_trace() {
        // s(x) = xW (row convention) has divergence tr(W) everywhere
        let w = Tensor::from_vec(&[3, 3], vec![1.0, 0.2, -0.5, 0.0, -2.0, 0.3, 0.7, 0.1, 4.0])
            .unwrap();
        let field = |x: &Tensor<f64>| x.matmul(&w);
        let x = crate::gradcheck::rand_tensor(&mut rngutil::stream(1, 7, 8), &[20, 3]);
        for eps in [1e-3, 0.1, 1.0] {
            let div = fd_divergence(&field, &x, eps, &basis_probes(20, 3)).unwrap();
            for v in div {
                assert!((v - 3.0).abs() < 1e-10, "divergence {v} at eps {eps}");
            }
        }
    }

    #[test]
    fn constant_field_divergence_is_zero() {
        let field = |x: &Tensor<f64>| -> Result<Tensor<f64>> { Ok(Tensor::full(x.shape(), 2.5)) };
        let x = crate::gradcheck::rand_tensor(&mut rngutil::stream(2, 7, 8), &[10, 2]);
        let div = fd_divergence(&field, &x, 0.05, &basis_probes(10, 2)).unwrap();
        for v in div {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_field_divergence_is_exact_for_any_eps() {
        // s_c(x) = x_c² per coordinate: ∇·s = Σ 2x_c; central differences
        // cancel the even error terms, so any ε is exact on quadratics.
        let field = |x: &Tensor<f64>| -> Result<Tensor<f64>> { Ok(x.map(|v| v * v)) };
        let x = crate::gradcheck::rand_tensor(&mut rngutil::stream(3, 7, 8), &[15, 4]);
        let div = fd_divergence(&field, &x, 0.37, &basis_probes(15, 4)).unwrap();
        for (i, v) in div.iter().enumerate() {
            let want: f64 = x.row(i).iter().map(|&c| 2.0 * c).sum();
            assert!((v - want).abs() < 1e-10);
        }
    }

    #[test]
    fn standard_normal_score_is_learned() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rngutil::stream(11, purpose::DATA, 0);
        let mut pts = Tensor::zeros(&[512, 1]);
        for v in pts.data_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = SampleSet::new(pts).unwrap();
        let out = sm_train(&x, &SmConfig::default()).unwrap();

        let mut held = Tensor::zeros(&[256, 1]);
        for v in held.data_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let s = out.model.score(&held).unwrap();
        let mse = held
            .data()
            .iter()
            .zip(s.data())
            .map(|(&x, &p)| (p - (-x)) * (p - (-x)))
            .sum::<f64>()
            / 256.0;
        assert!(mse < 0.1, "held-out score MSE {mse}");
    }

    #[test]
    fn config_validation() {
        let mut c = SmConfig::default();
        c.eps_fd = 0.0;
        assert!(c.validate().is_err());
        let mut c = SmConfig::default();
        c.probes = 0;
        assert!(c.validate().is_err());
    }
}
