//! Versioned binary checkpoint: config + named parameter tensors + training
//! metadata + optional optimizer state, with a trailing content hash.
//! Round-trips are bit-exact.

use super::config::ModelConfig;
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::tensor::{Real, Tensor};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"DNSCKPT1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
    pub loss: f64,
}

/// Optimizer state carried across a save/load cycle so resumed training is
/// bit-identical to uninterrupted training.
#[derive(Debug, Clone)]
pub struct AdamState<F: Real> {
    pub t: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn capture(opt: &Adam<F>) -> Self {
        let (m, v, t) = opt.state();
        AdamState { t, m: m.to_vec(), v: v.to_vec() }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    fn tensor<F: Real>(&mut self, t: &Tensor<F>) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.buf.extend_from_slice(&v.to_le_bytes_vec());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn tensor<F: Real>(&mut self) -> Result<Tensor<F>> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut len = 1usize;
        for _ in 0..ndim {
            let d = self.u64()? as usize;
            len = len.saturating_mul(d);
            shape.push(d);
        }
        let sz = F::DTYPE_TAG as usize;
        let raw = self.take(len * sz)?;
        let data = raw.chunks_exact(sz).map(F::from_le_slice).collect();
        Tensor::from_vec(&shape, data)
    }
}

/// FNV-1a, also used by callers to fingerprint resolved run settings.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn save<F: Real>(
    path: &Path,
    weights: &ModelWeights<F>,
    meta: &CheckpointMeta,
    adam: Option<&AdamState<F>>,
) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    w.bytes(MAGIC);
    w.u8(F::DTYPE_TAG);
    w.u64(weights.config.fingerprint());
    let cfg_json = serde_json::to_vec(&weights.config)
        .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
    w.u32(cfg_json.len() as u32);
    w.bytes(&cfg_json);
    w.u64(meta.seed);
    w.u64(meta.step);
    w.f64(meta.loss);
    w.u32(weights.names().len() as u32);
    for (name, t) in weights.names().iter().zip(weights.tensors()) {
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
        w.tensor(t);
    }
    match adam {
        Some(st) => {
            if st.m.len() != weights.names().len() || st.v.len() != weights.names().len() {
                return Err(Error::Checkpoint("optimizer state arity mismatch".to_string()));
            }
            w.u8(1);
            w.u64(st.t);
            for t in st.m.iter().chain(st.v.iter()) {
                w.tensor(t);
            }
        }
        None => w.u8(0),
    }
    let h = fnv1a(&w.buf);
    w.u64(h);
    fs::write(path, &w.buf)?;
    Ok(())
}

/// Dtype tag stored in a checkpoint (4 = 32-bit floats, 8 = 64-bit) without
/// loading it; lets callers dispatch to the right load::<F>.
pub fn peek_dtype(path: &Path) -> Result<u8> {
    let buf = fs::read(path)?;
    if buf.len() < 9 || &buf[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    Ok(buf[8])
}

pub fn load<F: Real>(
    path: &Path,
) -> Result<(ModelWeights<F>, CheckpointMeta, Option<AdamState<F>>)> {
    let buf = fs::read(path)?;
    if buf.len() < MAGIC.len() + 1 + 8 {
        return Err(Error::Checkpoint("file too short".to_string()));
    }
    let (body, tail) = buf.split_at(buf.len() - 8);
    let want = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a(body) != want {
        return Err(Error::Checkpoint("content hash mismatch (corrupt file)".to_string()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".to_string()));
    }
    let tag = r.u8()?;
    if tag != F::DTYPE_TAG {
        return Err(Error::Checkpoint(format!(
            "dtype mismatch: file stores {}-byte floats, caller wants {}-byte",
            tag,
            F::DTYPE_TAG
        )));
    }
    let fingerprint = r.u64()?;
    let cfg_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| Error::Checkpoint(format!("config deserialization: {e}")))?;
    if config.fingerprint() != fingerprint {
        return Err(Error::Checkpoint("config fingerprint mismatch".to_string()));
    }
    let meta = CheckpointMeta { seed: r.u64()?, step: r.u64()?, loss: r.f64()? };
    let count = r.u32()? as usize;
    let mut named = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?;
        named.insert(name, r.tensor::<F>()?);
    }
    let weights = ModelWeights::from_named_tensors(config, named)?;
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                m.push(r.tensor::<F>()?);
            }
            for _ in 0..count {
                v.push(r.tensor::<F>()?);
            }
            Some(AdamState { t, m, v })
        }
        other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".to_string()));
    }
    Ok((weights, meta, adam))
}
