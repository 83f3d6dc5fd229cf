//! Joint density/score training on on-the-fly Gaussian-mixture batches.
//! Every batch is freshly sampled, losses are computed in the original
//! coordinates (the whitening wrapper stays inside the differentiated
//! graph via its constant A and log det A), and all randomness is keyed by
//! (seed, purpose, step) so runs and resumed runs are bit-reproducible.

use crate::error::{Error, Result};
use crate::gmm::{make_training_batch, BatchConfig, BatchItem};
use crate::model::checkpoint::{self, AdamState, CheckpointMeta};
use crate::model::{
    decode_on_tape, embed_pad, encode_on_tape, whiten, DensityScoreEstimate, DropoutCtx,
    ModelConfig, ModelWeights, TapeModel,
};
use crate::optim::Adam;
use crate::rngutil::{self, purpose};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};
use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Convex weight: α·density + (1−α)·score.
    pub alpha: f64,
    /// Mixtures per step.
    pub batch: usize,
    /// Context points per mixture.
    pub n_x: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch_cfg: BatchConfig,
    pub seed: u64,
    /// Checkpoint every k steps (0 = only at the end).
    pub checkpoint_every: usize,
    /// Regress log-density (default) instead of raw density.
    pub log_space_density: bool,
    /// Cycle these dimensions across steps; empty = fixed batch_cfg.d.
    pub mixed_d: Vec<usize>,
    /// Global-norm gradient clip.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            batch: 32,
            n_x: 2048,
            steps: 1000,
            lr: 1e-4,
            batch_cfg: BatchConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            log_space_density: true,
            mixed_d: Vec::new(),
            grad_clip: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if self.batch == 0 || self.n_x < 2 {
            return Err(Error::config("batch and n_x must be positive".to_string()));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::config("lr and grad_clip must be positive".to_string()));
        }
        self.batch_cfg.validate()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepLoss {
    pub step: u64,
    pub density: f64,
    pub score: f64,
    pub total: f64,
    pub wall_secs: f64,
}

#[derive(Debug)]
pub struct TrainResult<F: Real> {
    pub weights: ModelWeights<F>,
    pub losses: Vec<StepLoss>,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub density: f64,
    pub score: f64,
    pub total: f64,
}

/// Convex joint loss on a finished estimate: α·L_T + (1−α)·L_S with
/// L_T = mean squared density error (log space optional) and
/// L_S = ‖S − ∇log f‖²_F / n.
pub fn loss(
    pred: &DensityScoreEstimate,
    target_densities: &[f64],
    target_scores: &Tensor<f64>,
    alpha: f64,
    log_space: bool,
) -> Result<LossParts> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha {alpha} outside [0,1]")));
    }
    let n = pred.densities.len();
    if n != target_densities.len() || pred.scores.shape() != target_scores.shape() {
        return Err(Error::shape(format!(
            "loss target mismatch: {n} densities vs {}, scores {:?} vs {:?}",
            target_densities.len(),
            pred.scores.shape(),
            target_scores.shape()
        )));
    }
    if n == 0 {
        return Err(Error::config("loss on zero queries".to_string()));
    }
    if target_densities.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::numeric("target densities must be positive".to_string()));
    }
    let density = pred
        .densities
        .iter()
        .zip(target_densities)
        .map(|(&p, &f)| {
            let e = if log_space { p.ln() - f.ln() } else { p - f };
            e * e
        })
        .sum::<f64>()
        / n as f64;
    let score = pred
        .scores
        .data()
        .iter()
        .zip(target_scores.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / n as f64;
    let total = alpha * density + (1.0 - alpha) * score;
    if !total.is_finite() {
        return Err(Error::NonFinite("loss".to_string()));
    }
    Ok(LossParts { density, score, total })
}

/// One mixture's forward + loss + backward on a fresh tape. Gradients come
/// back in canonical parameter order; parameters that only feed the
/// zero-weighted branch still arrive (as zeros) because the convex combine
/// keeps them connected.
fn sample_gradients<F: Real>(
    weights: &ModelWeights<F>,
    item: &BatchItem,
    alpha: f64,
    log_space: bool,
    dropout: &mut Option<DropoutCtx<'_>>,
) -> Result<(LossParts, Vec<Tensor<F>>)> {
    let d = item.x.d();
    let d_max = weights.config.d_max;
    let (xw, yw, tr) = whiten(&item.x, &item.y)?;
    let x_tok = embed_pad(&xw, d_max)?.cast::<F>();
    let y_tok = embed_pad(&yw, d_max)?.cast::<F>();
    let n_y = item.y.n();

    let mut tape = Tape::new();
    let m = TapeModel::insert(&mut tape, weights, true);
    let xt = tape.leaf(x_tok);
    let yt = tape.leaf(y_tok);
    let enc = encode_on_tape(&mut tape, &m, xt, dropout)?;
    let (raw, score_w) = decode_on_tape(&mut tape, &m, enc, yt, d, dropout)?;

    // Density branch in original coordinates: raw + log det A is the
    // predicted log-density there.
    let pred_log = tape.add_scalar(raw, F::from_f64(tr.log_det_a))?;
    let dens_sq = if log_space {
        let target = Tensor::from_vec(&[n_y, 1], item.log_densities.clone())?.cast::<F>();
        let t = tape.leaf(target);
        let diff = tape.sub(pred_log, t)?;
        tape.mul(diff, diff)?
    } else {
        let pred = tape.exp(pred_log)?;
        let target = Tensor::from_vec(&[n_y, 1], item.densities.clone())?.cast::<F>();
        let t = tape.leaf(target);
        let diff = tape.sub(pred, t)?;
        tape.mul(diff, diff)?
    };
    let l_t = tape.mean_all(dens_sq)?;

    // Score branch: multiply by the constant Aᵀ to land in original
    // coordinates, then Frobenius error over n_y rows.
    let a_t = tape.leaf(tr.a.transpose()?.cast::<F>());
    let pred_s = tape.matmul(score_w, a_t)?;
    let t_s = tape.leaf(item.scores.cast::<F>());
    let diff_s = tape.sub(pred_s, t_s)?;
    let sq_s = tape.mul(diff_s, diff_s)?;
    let sum_s = tape.sum_all(sq_s)?;
    let l_s = tape.mul_scalar(sum_s, F::from_f64(1.0 / n_y as f64))?;

    let wt = tape.mul_scalar(l_t, F::from_f64(alpha))?;
    let ws = tape.mul_scalar(l_s, F::from_f64(1.0 - alpha))?;
    let total = tape.add(wt, ws)?;

    let parts = LossParts {
        density: tape.value(l_t).data()[0].into_f64(),
        score: tape.value(l_s).data()[0].into_f64(),
        total: tape.value(total).data()[0].into_f64(),
    };
    let mut grads = tape.backward(total)?;
    let gvec = m.ids().iter().map(|&id| grads.take(id)).collect::<Result<Vec<_>>>()?;
    Ok((parts, gvec))
}

/// Average gradients for one full step (fresh batch, step-keyed RNG).
fn step_gradients<F: Real>(
    weights: &ModelWeights<F>,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(LossParts, Vec<Tensor<F>>)> {
    let mut bc = cfg.batch_cfg.clone();
    bc.b = cfg.batch;
    bc.n_x = cfg.n_x;
    if !cfg.mixed_d.is_empty() {
        bc.d = cfg.mixed_d[(step as usize) % cfg.mixed_d.len()];
    }
    let mut batch_rng = rngutil::stream(cfg.seed, purpose::BATCH, step);
    let batch = make_training_batch(&bc, &mut batch_rng)?;

    let mut drop_rng = rngutil::stream(cfg.seed, purpose::DROPOUT, step);
    let rate = weights.config.dropout;

    let mut acc: Option<Vec<Tensor<F>>> = None;
    let mut sums = LossParts { density: 0.0, score: 0.0, total: 0.0 };
    for item in &batch.items {
        let mut drop = if rate > 0.0 {
            Some(DropoutCtx { rate, rng: &mut drop_rng })
        } else {
            None
        };
        let (parts, gvec) =
            sample_gradients(weights, item, cfg.alpha, cfg.log_space_density, &mut drop)?;
        sums.density += parts.density;
        sums.score += parts.score;
        sums.total += parts.total;
        acc = Some(match acc {
            None => gvec,
            Some(mut a) => {
                for (dst, g) in a.iter_mut().zip(&gvec) {
                    *dst = dst.zip(g, |x, y| x + y)?;
                }
                a
            }
        });
    }
    let b = cfg.batch as f64;
    let mut grads = acc.expect("batch is non-empty");
    let inv_b = F::from_f64(1.0 / b);
    for g in grads.iter_mut() {
        *g = g.scale(inv_b);
    }
    clip_global_norm(&mut grads, cfg.grad_clip);
    Ok((
        LossParts { density: sums.density / b, score: sums.score / b, total: sums.total / b },
        grads,
    ))
}

fn clip_global_norm<F: Real>(grads: &mut [Tensor<F>], clip: f64) {
    let mut sq = 0.0;
    for g in grads.iter() {
        for &v in g.data() {
            let v = v.into_f64();
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > clip {
        let s = F::from_f64(clip / norm);
        for g in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
}

struct Telemetry {
    file: Option<fs::File>,
}

impl Telemetry {
    fn open(out_dir: Option<&Path>) -> Result<Self> {
        let file = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join("telemetry.csv");
                let fresh = !path.exists() || fs::metadata(&path)?.len() == 0;
                let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
                if fresh {
                    writeln!(f, "step,density_loss,score_loss,total_loss,wall_secs")?;
                }
                Some(f)
            }
            None => None,
        };
        Ok(Telemetry { file })
    }

    fn record(&mut self, s: &StepLoss) -> Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(
                f,
                "{},{:.9e},{:.9e},{:.9e},{:.3}",
                s.step, s.density, s.score, s.total, s.wall_secs
            )?;
        }
        Ok(())
    }
}

fn run_loop<F: Real>(
    mut weights: ModelWeights<F>,
    mut opt: Adam<F>,
    start_step: u64,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainResult<F>> {
    let mut telemetry = Telemetry::open(out_dir)?;
    let mut losses = Vec::new();
    let mut checkpoints = Vec::new();
    let save = |w: &ModelWeights<F>,
                opt: &Adam<F>,
                step: u64,
                loss: f64,
                cps: &mut Vec<PathBuf>|
     -> Result<()> {
        if let Some(dir) = out_dir {
            let path = dir.join(format!("step_{step:07}.ckpt"));
            let meta = CheckpointMeta { seed: cfg.seed, step, loss };
            let st = AdamState::capture(opt);
            checkpoint::save(&path, w, &meta, Some(&st))?;
            cps.push(path);
        }
        Ok(())
    };

    for step in start_step..cfg.steps as u64 {
        let t0 = Instant::now();
        let (parts, grads) = step_gradients(&weights, cfg, step).map_err(|e| match e {
            Error::NonFinite(ctx) => Error::NonFinite(format!(
                "{ctx} at step {step} (batch stream = seed {} / step {step})",
                cfg.seed
            )),
            other => other,
        })?;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at step {step} (batch stream = seed {} / step {step})",
                cfg.seed
            )));
        }
        opt.step(weights.tensors_mut(), &grads)?;
        let rec = StepLoss {
            step,
            density: parts.density,
            score: parts.score,
            total: parts.total,
            wall_secs: t0.elapsed().as_secs_f64(),
        };
        telemetry.record(&rec)?;
        losses.push(rec);
        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every as u64 == 0 {
            save(&weights, &opt, done, parts.total, &mut checkpoints)?;
        }
    }
    let final_step = cfg.steps as u64;
    let last_loss = losses.last().map(|l| l.total).unwrap_or(f64::NAN);
    let already = cfg.checkpoint_every > 0 && final_step % cfg.checkpoint_every as u64 == 0;
    if !already && final_step > start_step {
        save(&weights, &opt, final_step, last_loss, &mut checkpoints)?;
    }
    Ok(TrainResult { weights, losses, checkpoints })
}

/// Fresh training run; checkpoints and telemetry land in `out_dir` when given.
pub fn train<F: Real>(
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainResult<F>> {
    model_cfg.validate()?;
    cfg.validate()?;
    let weights = ModelWeights::<F>::init(model_cfg, cfg.seed)?;
    let opt = Adam::new(cfg.lr, &weights.shapes())?;
    run_loop(weights, opt, 0, cfg, out_dir)
}

/// Continue a checkpointed run up to `cfg.steps`; the step-keyed RNG makes
/// the continuation identical to the uninterrupted run.
pub fn resume<F: Real>(
    ckpt: &Path,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainResult<F>> {
    cfg.validate()?;
    let (weights, meta, adam_state) = checkpoint::load::<F>(ckpt)?;
    if meta.seed != cfg.seed {
        return Err(Error::config(format!(
            "checkpoint was trained with seed {}, config says {}",
            meta.seed, cfg.seed
        )));
    }
    let mut opt = Adam::new(cfg.lr, &weights.shapes())?;
    if let Some(st) = adam_state {
        opt.restore(st.m, st.v, st.t)?;
    }
    run_loop(weights, opt, meta.step, cfg, out_dir)
}
