use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// How the model produces scores at inference time. Training always uses the
/// dual heads; the autograd mode differentiates the log-density head at the
/// query points instead of reading the score head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadMode {
    Dual,
    DensityAutograd,
}

/// Architecture description. The default lands at 797,574 parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    /// FFN width = ffn_mult × hidden.
    pub ffn_mult: usize,
    pub dropout: f64,
    pub d_max: usize,
    pub head_mode: HeadMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 128,
            enc_layers: 4,
            dec_layers: 2,
            heads: 8,
            ffn_mult: 2,
            dropout: 0.1,
            d_max: 5,
            head_mode: HeadMode::Dual,
        }
    }
}

impl ModelConfig {
    /// Small profile for single-core training runs.
    pub fn desk() -> Self {
        ModelConfig {
            hidden: 48,
            enc_layers: 2,
            dec_layers: 1,
            heads: 4,
            ffn_mult: 2,
            dropout: 0.1,
            d_max: 5,
            head_mode: HeadMode::Dual,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 || self.ffn_mult == 0 || self.d_max == 0 {
            return Err(Error::config("layer counts, ffn_mult, d_max must be >= 1".to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn ffn(&self) -> usize {
        self.ffn_mult * self.hidden
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Token width fed to the embedding: d_max coordinates + d_max mask bits.
    pub fn token_width(&self) -> usize {
        2 * self.d_max
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let f = self.ffn();
        let embed = self.token_width() * h + h;
        let attn = 4 * (h * h + h);
        let lns = 2 * 2 * h;
        let ffn = (h * f + f) + (f * h + h);
        let per_layer = attn + lns + ffn;
        let final_lns = 2 * 2 * h;
        let heads = (h + 1) + (h * self.d_max + self.d_max);
        embed + (self.enc_layers + self.dec_layers) * per_layer + final_lns + heads
    }

    /// FNV-1a over the canonical JSON; keys checkpoints to configs.
    pub fn fingerprint(&self) -> u64 {
        let s = serde_json::to_string(self).expect("plain config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in s.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}
