//! Score/density oracle construction shared by the evaluation, estimator,
//! and Landau subcommands. A checkpoint may hold f32 or f64 weights; the
//! enum below dispatches on the stored dtype.

use denscore::kde::{self, scorematch};
use denscore::model::{self, checkpoint, DensityScoreEstimate, HeadMode, ModelWeights};
use denscore::sample::SampleSet;
use denscore::tensor::Tensor;
use denscore::{Error, Result};
use std::path::{Path, PathBuf};

pub enum AnyWeights {
    F32(ModelWeights<f32>),
    F64(ModelWeights<f64>),
}

impl AnyWeights {
    pub fn load(path: &Path) -> Result<Self> {
        let named = |e: Error| match e {
            Error::Io(io) => Error::Checkpoint(format!("{}: {io}", path.display())),
            other => other,
        };
        match checkpoint::peek_dtype(path).map_err(named)? {
            4 => Ok(AnyWeights::F32(checkpoint::load::<f32>(path).map_err(named)?.0)),
            8 => Ok(AnyWeights::F64(checkpoint::load::<f64>(path).map_err(named)?.0)),
            t => Err(Error::Checkpoint(format!("unsupported dtype tag {t}"))),
        }
    }

    pub fn forward(&self, x: &SampleSet, y: &SampleSet) -> Result<DensityScoreEstimate> {
        match self {
            AnyWeights::F32(w) => model::forward(w, x, y),
            AnyWeights::F64(w) => model::forward(w, x, y),
        }
    }

    pub fn set_head_mode(&mut self, mode: HeadMode) {
        match self {
            AnyWeights::F32(w) => w.config.head_mode = mode,
            AnyWeights::F64(w) => w.config.head_mode = mode,
        }
    }

    pub fn fingerprint(&self) -> u64 {
        match self {
            AnyWeights::F32(w) => w.config.fingerprint(),
            AnyWeights::F64(w) => w.config.fingerprint(),
        }
    }

    pub fn export_attention(
        &self,
        x: &SampleSet,
        y: &SampleSet,
        layer: usize,
    ) -> Result<model::AttentionExport> {
        match self {
            AnyWeights::F32(w) => model::export_attention(w, x, y, layer),
            AnyWeights::F64(w) => model::export_attention(w, x, y, layer),
        }
    }
}

/// Loads the checkpoint an oracle requires, or explains which flag is
/// missing (a config error, distinct from a missing file on disk).
pub fn require_checkpoint(path: &Option<PathBuf>, oracle: &str) -> Result<AnyWeights> {
    let p = path
        .as_ref()
        .ok_or_else(|| Error::config(format!("oracle '{oracle}' needs --checkpoint")))?;
    AnyWeights::load(p)
}

#[derive(Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Silverman,
    SilvermanUnit,
    Fixed(f64),
}

impl Bandwidth {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "silverman" => Ok(Bandwidth::Silverman),
            "silverman-unit" => Ok(Bandwidth::SilvermanUnit),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|h| *h > 0.0)
                .map(Bandwidth::Fixed)
                .ok_or_else(|| {
                    Error::config(format!(
                        "bad bandwidth '{other}' (silverman | silverman-unit | positive number)"
                    ))
                }),
        }
    }

    pub fn value(&self, x: &SampleSet) -> Result<f64> {
        match self {
            Bandwidth::Silverman => kde::silverman_bandwidth(x),
            Bandwidth::SilvermanUnit => kde::silverman_unit_factor(x.n(), x.d()),
            Bandwidth::Fixed(h) => Ok(*h),
        }
    }
}

/// Everything an oracle invocation may need.
pub struct OracleCtx {
    pub bandwidth: Bandwidth,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

pub const SCORE_ORACLES: &str =
    "transformer | kde | sd-kde-emp | sd-kde-learned | sd-kde-autograd | sm";

fn sm_model(x: &SampleSet, seed: u64) -> Result<scorematch::ScoreMlp> {
    let cfg = scorematch::SmConfig { seed, ..Default::default() };
    Ok(scorematch::sm_train(x, &cfg)?.model)
}

/// Sharpened sample for the SD-KDE family: step bandwidth = the debiased
/// rate, inner score per variant.
fn sharpened(name: &str, x: &SampleSet, ctx: &OracleCtx) -> Result<(SampleSet, f64)> {
    let hs = kde::sd_bandwidth(x)?;
    let xs = match name {
        "sd-kde-emp" => {
            let h = ctx.bandwidth.value(x)?;
            kde::sharpen(x, hs, &|s: &SampleSet| kde::kde_score(s, s, h))?
        }
        "sd-kde-learned" => {
            let mlp = sm_model(x, ctx.seed)?;
            kde::sharpen(x, hs, &|s: &SampleSet| mlp.score_set(s))?
        }
        "sd-kde-autograd" => {
            let mut w = require_checkpoint(&ctx.checkpoint, name)?;
            w.set_head_mode(HeadMode::DensityAutograd);
            kde::sharpen(x, hs, &|s: &SampleSet| Ok(w.forward(x, s)?.scores))?
        }
        _ => return Err(Error::config(format!("'{name}' is not an sd-kde oracle"))),
    };
    Ok((xs, hs))
}

/// ŝ(y) under the named oracle, fitted on `x`.
pub fn oracle_scores(name: &str, x: &SampleSet, y: &SampleSet, ctx: &OracleCtx) -> Result<Tensor<f64>> {
    match name {
        "kde" => kde::kde_score(x, y, ctx.bandwidth.value(x)?),
        "sm" => sm_model(x, ctx.seed)?.score_set(y),
        "transformer" => Ok(require_checkpoint(&ctx.checkpoint, name)?.forward(x, y)?.scores),
        "sd-kde-emp" | "sd-kde-learned" | "sd-kde-autograd" => {
            let (xs, hs) = sharpened(name, x, ctx)?;
            kde::kde_score(&xs, y, hs)
        }
        other => Err(Error::config(format!("unknown oracle '{other}' (expected {SCORE_ORACLES})"))),
    }
}

/// f̂(y) under the named oracle, fitted on `x`.
pub fn oracle_densities(name: &str, x: &SampleSet, y: &SampleSet, ctx: &OracleCtx) -> Result<Vec<f64>> {
    match name {
        "kde" => kde::kde_density(x, y, ctx.bandwidth.value(x)?),
        "transformer" => Ok(require_checkpoint(&ctx.checkpoint, name)?.forward(x, y)?.densities),
        "sd-kde-emp" | "sd-kde-learned" | "sd-kde-autograd" => {
            let (xs, hs) = sharpened(name, x, ctx)?;
            kde::kde_density(&xs, y, hs)
        }
        "sm" => Err(Error::config("oracle 'sm' estimates scores only, not densities".to_string())),
        other => Err(Error::config(format!("unknown oracle '{other}' (expected {SCORE_ORACLES})"))),
    }
}
