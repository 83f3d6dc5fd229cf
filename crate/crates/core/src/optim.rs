use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Bias-corrected Adam. Moment tensors shape-match their parameters; the
/// step counter advances exactly once per `step` call.
#[derive(Debug, Clone)]
pub struct Adam<F: Real> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64, param_shapes: &[Vec<usize>]) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::config(format!("adam lr {lr} must be positive")));
        }
        Ok(Adam {
            lr: F::from_f64(lr),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// In-place update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam has {} slots, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        let one = F::one();
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "param {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (one - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (one - self.beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] = pd[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment state for checkpointing, in parameter order: (m, v, t).
    pub fn state(&self) -> (&[Tensor<F>], &[Tensor<F>], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore(&mut self, m: Vec<Tensor<F>>, v: Vec<Tensor<F>>, t: u64) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::shape("adam restore slot count".to_string()));
        }
        for (a, b) in m.iter().zip(&self.m) {
            if a.shape() != b.shape() {
                return Err(Error::shape("adam restore moment shape".to_string()));
            }
        }
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }
}
