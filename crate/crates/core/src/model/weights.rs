use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rngutil::{self, purpose};
use crate::tensor::{Real, Tensor};
use rand::Rng;
use std::collections::HashMap;

/// All parameter tensors in a fixed canonical order (the order of
/// [`ModelWeights::names`]); checkpoints and optimizer state rely on it.
#[derive(Debug, Clone)]
pub struct ModelWeights<F: Real> {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

fn canonical_names(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = cfg.hidden;
    let f = cfg.ffn();
    let mut out = vec![
        ("embed.w".to_string(), vec![cfg.token_width(), h]),
        ("embed.b".to_string(), vec![1, h]),
    ];
    let layer = |prefix: String| {
        let mut v = Vec::new();
        for ln in ["ln1", "ln2"] {
            v.push((format!("{prefix}.{ln}.g"), vec![1, h]));
            v.push((format!("{prefix}.{ln}.b"), vec![1, h]));
        }
        for m in ["wq", "wk", "wv", "wo"] {
            v.push((format!("{prefix}.attn.{m}"), vec![h, h]));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            v.push((format!("{prefix}.attn.{b}"), vec![1, h]));
        }
        v.push((format!("{prefix}.ffn.w1"), vec![h, f]));
        v.push((format!("{prefix}.ffn.b1"), vec![1, f]));
        v.push((format!("{prefix}.ffn.w2"), vec![f, h]));
        v.push((format!("{prefix}.ffn.b2"), vec![1, h]));
        v
    };
    for i in 0..cfg.enc_layers {
        out.extend(layer(format!("enc.{i}")));
    }
    for i in 0..cfg.dec_layers {
        out.extend(layer(format!("dec.{i}")));
    }
    for ln in ["enc_final_ln", "dec_final_ln"] {
        out.push((format!("{ln}.g"), vec![1, h]));
        out.push((format!("{ln}.b"), vec![1, h]));
    }
    out.push(("head.density.w".to_string(), vec![h, 1]));
    out.push(("head.density.b".to_string(), vec![1, 1]));
    out.push(("head.score.w".to_string(), vec![h, cfg.d_max]));
    out.push(("head.score.b".to_string(), vec![1, cfg.d_max]));
    out
}

impl<F: Real> ModelWeights<F> {
    /// Xavier-uniform weight matrices, zero biases, unit LayerNorm scales.
    /// Draws happen in f64 so f32 and f64 models share initializations.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rngutil::stream(seed, purpose::INIT, 0);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in canonical_names(&config) {
            let t: Tensor<f64> = if name.ends_with(".g") {
                Tensor::full(&shape, 1.0)
            } else if name.ends_with(".b") && shape[0] == 1 {
                Tensor::zeros(&shape)
            } else {
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data =
                    (0..shape[0] * shape[1]).map(|_| rng.gen_range(-bound..=bound)).collect();
                Tensor::from_vec(&shape, data)?
            };
            names.push(name);
            tensors.push(t.cast::<F>());
        }
        let index = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        Ok(ModelWeights { config, names, tensors, index })
    }

    pub fn from_named_tensors(
        config: ModelConfig,
        mut named: HashMap<String, Tensor<F>>,
    ) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in canonical_names(&config) {
            let t = named
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?}, config wants {:?}",
                    t.shape(),
                    shape
                )));
            }
            t.assert_finite(&name)?;
            names.push(name);
            tensors.push(t);
        }
        if !named.is_empty() {
            let extra: Vec<_> = named.keys().cloned().collect();
            return Err(Error::Checkpoint(format!("unexpected tensors {extra:?}")));
        }
        let index = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        Ok(ModelWeights { config, names, tensors, index })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn idx(&self, name: &str) -> usize {
        *self.index.get(name).unwrap_or_else(|| panic!("unknown weight {name}"))
    }

    pub fn get(&self, name: &str) -> &Tensor<F> {
        &self.tensors[self.idx(name)]
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn cast<G: Real>(&self) -> ModelWeights<G> {
        ModelWeights {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}
