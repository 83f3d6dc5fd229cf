//! Release gate: twelve end-to-end checks over the whole estimator stack,
//! run sequentially inside a single test so the expensive artifacts (a
//! 20k-step training run, the scaling sweep) are built once and wall-clock
//! measurements don't fight other tests for the core.
//!
//! `cargo test --test acceptance -- --nocapture` prints one status line per
//! check. The long training run is cached under cargo's target tmp dir and
//! reused across invocations; set DENSCORE_RETRAIN=1 to force a fresh run.

use denscore::gmm::{self, BatchConfig, BatchItem, GmmSpec};
use denscore::gradcheck;
use denscore::kde::{self, scorematch};
use denscore::landau::{self, LandauConfig};
use denscore::model::{
    self, checkpoint, decode_on_tape, embed_pad, encode_on_tape, kde_attention_head, whiten,
    ModelConfig, ModelWeights, TapeModel,
};
use denscore::rngutil::{self, purpose};
use denscore::sample::SampleSet;
use denscore::tape::Tape;
use denscore::tensor::Tensor;
use denscore::training::{self, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::env;
use std::fs;
use std::panic;
use std::path::PathBuf;
use std::time::Instant;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !($cond) {
            return Err(format!($($arg)+));
        }
    };
}

// ---------- shared helpers ----------

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean squared error over all entries (rows × coordinates).
fn entry_mse(est: &Tensor<f64>, truth: &Tensor<f64>) -> f64 {
    assert_eq!(est.shape(), truth.shape());
    let n = est.data().len();
    est.data().iter().zip(truth.data()).map(|(&a, &b)| (a - b) * (a - b)).sum::<f64>()
        / n as f64
}

fn max_abs_gap(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One mixture example with exact targets, k components, via the training
/// batch generator.
fn random_item(seed: u64, d: usize, k_range: (usize, usize), n_x: usize, n_y: usize) -> BatchItem {
    let bc = BatchConfig { b: 1, d, n_x, n_y, k_range, ..BatchConfig::default() };
    let mut rng = rngutil::stream(seed, purpose::BATCH, 0);
    gmm::make_training_batch(&bc, &mut rng).unwrap().items.remove(0)
}

/// Diagonally dominant map 3I + 0.5·G: invertible with condition number
/// far below the whitening gate.
fn well_conditioned_affine(d: usize, rng: &mut impl Rng) -> (Tensor<f64>, Vec<f64>) {
    let mut a = Tensor::zeros(&[d, d]);
    for i in 0..d {
        for j in 0..d {
            let g: f64 = StandardNormal.sample(rng);
            let diag = if i == j { 3.0 } else { 0.0 };
            a.set2(i, j, diag + 0.5 * g);
        }
    }
    let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    (a, mu)
}

fn random_perm(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn normal_sample_1d(seed: u64, n: usize) -> SampleSet {
    let mut rng = rngutil::stream(seed, purpose::DATA, 0);
    let mut pts = Tensor::zeros(&[n, 1]);
    for v in pts.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    SampleSet::new(pts).unwrap()
}

// ---------- 1. attention head vs direct kernel ----------

fn attention_head_matches_gaussian_kernel() -> Check {
    let mut rng = rngutil::stream(41, purpose::EVAL, 0);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=128);
        let d = rng.gen_range(1..=5);
        let h: f64 = rng.gen_range(0.1..=3.0);
        let mut x = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let mut row = vec![0.0; d];
            let mut norm = 0.0;
            while norm < 1e-6 {
                for v in row.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            for (j, v) in row.iter().enumerate() {
                x.set2(i, j, v / norm);
            }
        }
        let got = kde_attention_head(&x, h).map_err(|e| e.to_string())?;
        // Independent construction: Gaussian kernel in pairwise distances,
        // normalized so each row sums to 1.
        for i in 0..n {
            let mut w = vec![0.0; n];
            let mut tot = 0.0;
            for j in 0..n {
                let mut dsq = 0.0;
                for c in 0..d {
                    let diff = x.at2(i, c) - x.at2(j, c);
                    dsq += diff * diff;
                }
                w[j] = (-dsq / (2.0 * h * h)).exp();
                tot += w[j];
            }
            for (j, wj) in w.iter().enumerate() {
                worst = worst.max((got.at2(i, j) - wj / tot).abs());
            }
        }
    }
    ensure!(worst <= 1e-12, "worst |attention − kernel| = {worst:.2e} > 1e-12");
    Ok(format!("100 random unit-row inputs, worst abs gap {worst:.1e}"))
}

// ---------- 2. exact mixture targets under permutation and affine maps ----------

fn mixture_targets_transform_exactly() -> Check {
    let mut rng = rngutil::stream(42, purpose::EVAL, 1);
    let (mut worst_perm, mut worst_dens, mut worst_score) = (0.0_f64, 0.0_f64, 0.0_f64);
    for t in 0..50u64 {
        let d = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=4);
        let item = random_item(100 + t, d, (k, k), 8, 16);
        let spec = &item.spec;
        let y = &item.y;
        let f = spec.density(y).map_err(|e| e.to_string())?;
        let s = spec.score(y).map_err(|e| e.to_string())?;

        // Permuting the evaluation rows permutes the outputs.
        let p = random_perm(y.n(), &mut rng);
        let yp = y.permute(&p).unwrap();
        let fp = spec.density(&yp).unwrap();
        let sp = spec.score(&yp).unwrap();
        for (i, &pi) in p.iter().enumerate() {
            worst_perm = worst_perm.max((fp[i] - f[pi]).abs() / f[pi].max(1e-300));
            for c in 0..d {
                worst_perm = worst_perm.max((sp.at2(i, c) - s.at2(pi, c)).abs());
            }
        }

        // Pushforward through x ↦ xA + μ: density picks up 1/|det A|, the
        // score transforms with (Aᵀ)⁻¹ — checked in multiplied form.
        let (a, mu) = well_conditioned_affine(d, &mut rng);
        let spec_t = spec.affine_pushforward(&a, &mu).map_err(|e| e.to_string())?;
        let yt = y.affine_map(&a, &mu).unwrap();
        let ft = spec_t.density(&yt).unwrap();
        let st = spec_t.score(&yt).unwrap();
        let det = nalgebra::DMatrix::from_row_slice(d, d, a.data())
            .determinant()
            .abs();
        let s_back = st.matmul_nt(&a).unwrap();
        for i in 0..y.n() {
            worst_dens = worst_dens.max((ft[i] * det - f[i]).abs() / f[i].max(1e-300));
            for c in 0..d {
                let gap = (s_back.at2(i, c) - s.at2(i, c)).abs();
                worst_score = worst_score.max(gap / (1.0 + s.at2(i, c).abs()));
            }
        }
    }
    ensure!(worst_perm <= 1e-10, "permutation gap {worst_perm:.2e} > 1e-10");
    ensure!(worst_dens <= 1e-10, "density pushforward gap {worst_dens:.2e} > 1e-10");
    ensure!(worst_score <= 1e-10, "score pushforward gap {worst_score:.2e} > 1e-10");
    Ok(format!(
        "50 random maps: perm {worst_perm:.1e}, density {worst_dens:.1e}, score {worst_score:.1e}"
    ))
}

// ---------- 3. model symmetries and whitening orthogonality ----------

fn small_model_config() -> ModelConfig {
    ModelConfig { hidden: 16, enc_layers: 2, dec_layers: 1, heads: 2, ..ModelConfig::desk() }
}

/// Runs the symmetry battery on one set of weights; returns (worst
/// permutation gap, worst translation/scaling relative gap).
fn symmetry_battery(w: &ModelWeights<f64>, item: &BatchItem) -> Result<(f64, f64), String> {
    let d = item.x.d();
    let base = model::forward(w, &item.x, &item.y).map_err(|e| e.to_string())?;
    let mut rng = rngutil::stream(9, purpose::EVAL, 2);
    let mut worst_perm = 0.0_f64;

    // Context permutation: outputs unchanged.
    let pc = random_perm(item.x.n(), &mut rng);
    let e1 = model::forward(w, &item.x.permute(&pc).unwrap(), &item.y).unwrap();
    for i in 0..item.y.n() {
        worst_perm = worst_perm.max((e1.densities[i] - base.densities[i]).abs());
    }
    worst_perm = worst_perm.max(max_abs_gap(&e1.scores, &base.scores));

    // Query permutation: outputs permuted the same way.
    let pq = random_perm(item.y.n(), &mut rng);
    let e2 = model::forward(w, &item.x, &item.y.permute(&pq).unwrap()).unwrap();
    for (i, &pi) in pq.iter().enumerate() {
        worst_perm = worst_perm.max((e2.densities[i] - base.densities[pi]).abs());
        for c in 0..d {
            worst_perm = worst_perm.max((e2.scores.at2(i, c) - base.scores.at2(pi, c)).abs());
        }
    }

    // Translation and isotropic scaling: density scales by c^{-d}, score
    // by 1/c (translation is the c=1 case).
    let mut worst_aff = 0.0_f64;
    for &(c, sh) in &[(1.0, [0.7, -1.3]), (1.7, [0.0, 0.0]), (0.6, [-0.4, 1.1])] {
        let mut a = Tensor::zeros(&[d, d]);
        for i in 0..d {
            a.set2(i, i, c);
        }
        let shift: Vec<f64> = sh[..d].to_vec();
        let xt = item.x.affine_map(&a, &shift).unwrap();
        let yt = item.y.affine_map(&a, &shift).unwrap();
        let e = model::forward(w, &xt, &yt).unwrap();
        let cd = c.powi(d as i32);
        for i in 0..item.y.n() {
            let gap = (e.densities[i] * cd - base.densities[i]).abs();
            worst_aff = worst_aff.max(gap / base.densities[i].max(1e-300));
        }
        for i in 0..item.y.n() {
            for cc in 0..d {
                let gap = (e.scores.at2(i, cc) * c - base.scores.at2(i, cc)).abs();
                worst_aff = worst_aff.max(gap / (1.0 + base.scores.at2(i, cc).abs()));
            }
        }
    }
    Ok((worst_perm, worst_aff))
}

fn model_symmetries_hold() -> Check {
    let item = random_item(7, 2, (1, 3), 64, 32);
    let untrained = ModelWeights::<f64>::init(small_model_config(), 3).map_err(|e| e.to_string())?;

    // Short training run, then a save/load roundtrip: the loaded weights
    // must reproduce the in-memory forward pass bit for bit.
    let tc = TrainConfig {
        batch: 2,
        n_x: 64,
        steps: 150,
        lr: 1e-3,
        seed: 5,
        batch_cfg: BatchConfig { b: 2, d: 2, n_x: 64, n_y: 32, k_range: (1, 3), ..BatchConfig::default() },
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let r = training::train::<f64>(small_model_config(), &tc, Some(dir.path()))
        .map_err(|e| e.to_string())?;
    let ckpt = r.checkpoints.last().cloned().ok_or("training saved no checkpoint")?;
    let (loaded, meta, _) = checkpoint::load::<f64>(&ckpt).map_err(|e| e.to_string())?;
    ensure!(meta.step == 150, "checkpoint records step {} (want 150)", meta.step);
    let before = model::forward(&r.weights, &item.x, &item.y).unwrap();
    let after = model::forward(&loaded, &item.x, &item.y).unwrap();
    ensure!(
        before.densities == after.densities && before.scores.data() == after.scores.data(),
        "checkpoint roundtrip changed the forward pass"
    );

    let (mut worst_perm, mut worst_aff) = (0.0_f64, 0.0_f64);
    for w in [&untrained, &loaded] {
        let (p, a) = symmetry_battery(w, &item)?;
        worst_perm = worst_perm.max(p);
        worst_aff = worst_aff.max(a);
    }
    ensure!(worst_perm <= 1e-10, "permutation gap {worst_perm:.2e} > 1e-10");
    ensure!(worst_aff <= 1e-6, "translation/scaling gap {worst_aff:.2e} > 1e-6");

    // Whitened coordinates of affinely related samples differ by an
    // orthogonal map: Q = XwᵀXw′ satisfies QᵀQ = I.
    let mut rngw = rngutil::stream(10, purpose::EVAL, 3);
    let mut worst_q = 0.0_f64;
    for t in 0..50u64 {
        let d = rngw.gen_range(1..=4);
        let it = random_item(300 + t, d, (1, 2), 48, 4);
        let (a, mu) = well_conditioned_affine(d, &mut rngw);
        let x2 = it.x.affine_map(&a, &mu).unwrap();
        let y2 = it.y.affine_map(&a, &mu).unwrap();
        let (xw, _, _) = whiten(&it.x, &it.y).map_err(|e| e.to_string())?;
        let (xw2, _, _) = whiten(&x2, &y2).map_err(|e| e.to_string())?;
        let q = xw.matmul_tn(&xw2).unwrap();
        let qq = q.matmul_tn(&q).unwrap();
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                worst_q = worst_q.max((qq.at2(i, j) - want).abs());
            }
        }
    }
    ensure!(worst_q <= 1e-8, "‖QᵀQ − I‖∞ = {worst_q:.2e} > 1e-8 over 50 affine maps");
    Ok(format!(
        "perm {worst_perm:.1e}, translation/scaling {worst_aff:.1e}, whitening ‖QᵀQ−I‖ {worst_q:.1e}"
    ))
}

// ---------- 4. finite-difference gradient checks ----------

/// The exact training objective on one example: log-density branch plus
/// score branch mapped back through the constant whitening matrix.
fn joint_loss(
    w: &ModelWeights<f64>,
    item: &BatchItem,
    alpha: f64,
    want_grads: bool,
) -> (f64, Vec<Tensor<f64>>) {
    let d = item.x.d();
    let d_max = w.config.d_max;
    let (xw, yw, tr) = whiten(&item.x, &item.y).unwrap();
    let x_tok = embed_pad(&xw, d_max).unwrap();
    let y_tok = embed_pad(&yw, d_max).unwrap();
    let n_y = item.y.n();

    let mut tape = Tape::new();
    let m = TapeModel::insert(&mut tape, w, true);
    let xt = tape.leaf(x_tok);
    let yt = tape.leaf(y_tok);
    let enc = encode_on_tape(&mut tape, &m, xt, &mut None).unwrap();
    let (raw, score_w) = decode_on_tape(&mut tape, &m, enc, yt, d, &mut None).unwrap();

    let pred_log = tape.add_scalar(raw, tr.log_det_a).unwrap();
    let target = Tensor::from_vec(&[n_y, 1], item.log_densities.clone()).unwrap();
    let tgt = tape.leaf(target);
    let diff = tape.sub(pred_log, tgt).unwrap();
    let sq = tape.mul(diff, diff).unwrap();
    let l_dens = tape.mean_all(sq).unwrap();

    let a_t = tape.leaf(tr.a.transpose().unwrap());
    let pred_s = tape.matmul(score_w, a_t).unwrap();
    let t_s = tape.leaf(item.scores.clone());
    let diff_s = tape.sub(pred_s, t_s).unwrap();
    let sq_s = tape.mul(diff_s, diff_s).unwrap();
    let sum_s = tape.sum_all(sq_s).unwrap();
    let l_score = tape.mul_scalar(sum_s, 1.0 / n_y as f64).unwrap();

    let wt = tape.mul_scalar(l_dens, alpha).unwrap();
    let ws = tape.mul_scalar(l_score, 1.0 - alpha).unwrap();
    let total = tape.add(wt, ws).unwrap();
    let value = tape.value(total).data()[0];
    let grads = if want_grads {
        let mut g = tape.backward(total).unwrap();
        m.ids().iter().map(|&id| g.take(id).unwrap()).collect()
    } else {
        Vec::new()
    };
    (value, grads)
}

fn gradients_match_finite_differences() -> Check {
    let mut worst_prim = 0.0_f64;
    for seed in 0..20 {
        worst_prim = worst_prim.max(gradcheck::check_all_primitives(seed).map_err(|e| e.to_string())?);
    }
    ensure!(worst_prim <= 1e-4, "primitive gradcheck worst rel {worst_prim:.2e} > 1e-4");

    // Full objective: directional derivative along a random unit direction
    // vs central differences, tiny model, no dropout, f64.
    let cfg = ModelConfig { dropout: 0.0, d_max: 3, ..small_model_config() };
    let (alpha, eps) = (0.5, 1e-5);
    let mut worst_joint = 0.0_f64;
    for seed in 0..20u64 {
        let item = random_item(500 + seed, 2, (1, 2), 12, 6);
        let w = ModelWeights::<f64>::init(cfg.clone(), 77 + seed).map_err(|e| e.to_string())?;
        let (_, grads) = joint_loss(&w, &item, alpha, true);

        let mut rng = rngutil::stream(600 + seed, purpose::EVAL, seed);
        let mut dirs: Vec<Tensor<f64>> = w
            .tensors()
            .iter()
            .map(|t| {
                let mut v = t.clone();
                for e in v.data_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
                v
            })
            .collect();
        let norm = dirs
            .iter()
            .map(|v| v.data().iter().map(|e| e * e).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        for v in dirs.iter_mut() {
            *v = v.map(|e| e / norm);
        }

        let analytic: f64 = grads
            .iter()
            .zip(&dirs)
            .map(|(g, v)| g.data().iter().zip(v.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let shifted = |sign: f64| -> f64 {
            let mut wp = w.clone();
            for (t, v) in wp.tensors_mut().iter_mut().zip(&dirs) {
                *t = t.zip(v, |a, b| a + sign * eps * b).unwrap();
            }
            joint_loss(&wp, &item, alpha, false).0
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        let rel = (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1e-10);
        worst_joint = worst_joint.max(rel);
    }
    ensure!(worst_joint <= 1e-4, "joint-loss gradcheck worst rel {worst_joint:.2e} > 1e-4");
    Ok(format!(
        "primitives worst rel {worst_prim:.1e}, joint objective worst rel {worst_joint:.1e} (20 seeds each)"
    ))
}

// ---------- 5. KDE score is the gradient of log KDE density ----------

fn kde_score_is_log_density_gradient() -> Check {
    let item = random_item(900, 2, (2, 3), 256, 200);
    let (x, y) = (&item.x, &item.y);
    let h = kde::silverman_bandwidth(x).map_err(|e| e.to_string())?;
    let s = kde::kde_score(x, y, h).map_err(|e| e.to_string())?;
    let delta = 1e-4;
    let mut worst = 0.0_f64;
    for c in 0..y.d() {
        let mut plus = y.points().clone();
        let mut minus = y.points().clone();
        for i in 0..y.n() {
            plus.set2(i, c, plus.at2(i, c) + delta);
            minus.set2(i, c, minus.at2(i, c) - delta);
        }
        let fp = kde::kde_density(x, &SampleSet::new(plus).unwrap(), h).unwrap();
        let fm = kde::kde_density(x, &SampleSet::new(minus).unwrap(), h).unwrap();
        for i in 0..y.n() {
            let fd = (fp[i].ln() - fm[i].ln()) / (2.0 * delta);
            let rel = (fd - s.at2(i, c)).abs() / (1.0 + s.at2(i, c).abs());
            worst = worst.max(rel);
        }
    }
    ensure!(worst <= 1e-6, "worst rel gap {worst:.2e} > 1e-6 at 200 queries");
    Ok(format!("200 queries, bandwidth {h:.3}, worst rel gap {worst:.1e}"))
}

// ---------- 6. score-sharpened KDE beats plain KDE ----------

fn sharpened_kde_beats_plain() -> Check {
    let m = 401;
    let grid: Vec<Vec<f64>> = (0..m).map(|i| vec![-5.0 + 10.0 * i as f64 / (m - 1) as f64]).collect();
    let g = SampleSet::from_rows(&grid).unwrap();
    let truth: Vec<f64> = grid
        .iter()
        .map(|p| (-p[0] * p[0] / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt())
        .collect();
    let grid_mse = |f: &[f64]| -> f64 {
        f.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m as f64
    };
    let oracle = |xs: &SampleSet| -> denscore::Result<Tensor<f64>> {
        let mut s = Tensor::zeros(&[xs.n(), 1]);
        for i in 0..xs.n() {
            s.set2(i, 0, -xs.at(i, 0));
        }
        Ok(s)
    };
    let (mut oracle_wins, mut emp_wins) = (0, 0);
    for seed in 0..10u64 {
        let x = normal_sample_1d(100 + seed, 2048);
        let h = kde::silverman_bandwidth(&x).unwrap();
        let hs = kde::sd_bandwidth(&x).unwrap();
        let plain = grid_mse(&kde::kde_density(&x, &g, h).unwrap());
        let sd_o = grid_mse(&kde::sd_kde_density(&x, &g, hs, &oracle).unwrap());
        let emp = |xs: &SampleSet| kde::kde_score(xs, xs, h);
        let sd_e = grid_mse(&kde::sd_kde_density(&x, &g, hs, &emp).unwrap());
        if sd_o < plain {
            oracle_wins += 1;
        }
        if sd_e < plain {
            emp_wins += 1;
        }
    }
    ensure!(oracle_wins >= 9, "oracle-score sharpening won only {oracle_wins}/10 seeds");
    ensure!(emp_wins >= 8, "estimated-score sharpening won only {emp_wins}/10 seeds");
    Ok(format!("oracle sharpening won {oracle_wins}/10, estimated-score {emp_wins}/10"))
}

// ---------- 7. KDE score error on the 2-D Laplace target ----------

fn laplace_kde_error_in_reference_band() -> Check {
    let want = 0.2990;
    let n = 2048;
    let h = kde::silverman_unit_factor(n, 2).map_err(|e| e.to_string())?;
    let mut mses = Vec::new();
    for t in 0..10u64 {
        let mut rng = rngutil::stream(t, purpose::DATA, t);
        let x = gmm::sample_laplace(2, 1.0, n, &mut rng).unwrap();
        let (_, truth) = gmm::laplace_target(2, 1.0, &x).unwrap();
        let s = kde::kde_score(&x, &x, h).unwrap();
        mses.push(entry_mse(&s, &truth));
    }
    let mean = mses.iter().sum::<f64>() / mses.len() as f64;
    ensure!(
        (mean - want).abs() <= 0.05,
        "mean score MSE {mean:.4} outside {want} ± 0.05 over 10 seeds"
    );
    Ok(format!("mean score MSE {mean:.4} vs reference {want} (±0.05, 10 seeds)"))
}

// ---------- 8. plug-in estimators hit closed forms ----------

fn plugin_estimators_hit_closed_forms() -> Check {
    let n = 4096;
    let mut parts = Vec::new();

    for (i, &d) in [1usize, 10].iter().enumerate() {
        let spec = GmmSpec::standard_normal(d);
        let mut rng = rngutil::stream(20 + i as u64, purpose::DATA, 0);
        let x = spec.sample(n, &mut rng).unwrap();
        let f = spec.density(&x).unwrap();
        let (h, se) = denscore::estimators::entropy_with_se(&f).map_err(|e| e.to_string())?;
        let want = 0.5 * d as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln());
        ensure!(
            (h - want).abs() <= 3.0 * se,
            "entropy d={d}: {h:.4} vs {want:.4}, |gap| {:.4} > 3·SE {:.4}",
            (h - want).abs(),
            3.0 * se
        );
        parts.push(format!("H(d={d}) {h:.3}±{se:.3}"));
    }

    let sigma2 = 0.5;
    let spec = GmmSpec::gaussian(vec![0.0; 3], vec![sigma2; 3]).unwrap();
    let mut rng = rngutil::stream(22, purpose::DATA, 0);
    let x = spec.sample(n, &mut rng).unwrap();
    let s = spec.score(&x).unwrap();
    let (fi, fse) = denscore::estimators::fisher_information_with_se(&s).map_err(|e| e.to_string())?;
    let want_fi = 3.0 / sigma2;
    ensure!(
        (fi - want_fi).abs() <= 3.0 * fse,
        "Fisher: {fi:.4} vs {want_fi:.4}, |gap| {:.4} > 3·SE {:.4}",
        (fi - want_fi).abs(),
        3.0 * fse
    );
    parts.push(format!("I {fi:.3}±{fse:.3}"));

    // Mean-shifted pair: the squared score gap is the constant ‖m‖², so the
    // SE collapses and the band needs a floor.
    let m = [0.6, -0.3];
    let g = GmmSpec::gaussian(m.to_vec(), vec![1.0, 1.0]).unwrap();
    let f0 = GmmSpec::standard_normal(2);
    let mut rng = rngutil::stream(23, purpose::DATA, 0);
    let xg = g.sample(n, &mut rng).unwrap();
    let sg = g.score(&xg).unwrap();
    let sf = f0.score(&xg).unwrap();
    let (rfi, rse) =
        denscore::estimators::relative_fisher_with_se(&sg, &sf).map_err(|e| e.to_string())?;
    let want_rfi: f64 = m.iter().map(|v| v * v).sum();
    ensure!(
        (rfi - want_rfi).abs() <= 3.0 * rse + 1e-12 * (1.0 + want_rfi),
        "relative Fisher: {rfi:.6} vs {want_rfi:.6}, SE {rse:.2e}"
    );
    parts.push(format!("RFI {rfi:.4}±{rse:.1e}"));
    Ok(parts.join(", "))
}

// ---------- 9. particle collision solver ----------

fn collision_solver_conserves_and_relaxes() -> Check {
    let cfg = LandauConfig::default();
    let oracle = |x: &SampleSet| landau::moment_matched_gaussian_score(x);
    let traj = landau::simulate(&cfg, &oracle).map_err(|e| e.to_string())?;
    let rows = &traj.rows;

    let mut worst_p = 0.0_f64;
    for r in rows {
        for &mc in &r.momentum {
            worst_p = worst_p.max(mc.abs());
        }
    }
    ensure!(worst_p <= 1e-12, "momentum component reached {worst_p:.2e} > 1e-12");

    let e0 = rows[0].energy;
    let mut worst_e = 0.0_f64;
    for r in rows {
        worst_e = worst_e.max((r.energy - e0).abs() / e0);
    }
    ensure!(worst_e <= 0.01, "energy drifted {:.3}% > 1%", worst_e * 100.0);

    // Largest variance relaxes monotonically onto the equipartition value.
    let target = e0 / cfg.d as f64;
    let s0 = rows[0].sigma.at2(0, 0);
    for w in rows.windows(2) {
        let (prev, next) = (w[0].sigma.at2(0, 0), w[1].sigma.at2(0, 0));
        ensure!(
            next <= prev + 1e-12,
            "Σ₁₁ increased at step {}: {prev:.6} → {next:.6}",
            w[1].step
        );
    }
    let s_end = rows.last().unwrap().sigma.at2(0, 0);
    ensure!(
        (s_end - target).abs() <= 0.15 * (s0 - target).abs(),
        "Σ₁₁ only reached {s_end:.4} from {s0:.4} (target {target:.4})"
    );

    // Per-step energy error is quadratic in dt: halving the step from a
    // common state shrinks the one-step drift ~4×.
    let spec = GmmSpec::gaussian(vec![0.0; 3], vec![1.4, 1.0, 0.6]).unwrap();
    let mut rng = rngutil::stream(31, purpose::DATA, 0);
    let drawn = spec.sample(256, &mut rng).unwrap();
    let mu = drawn.mean();
    let mut centered = Tensor::zeros(&[256, 3]);
    for i in 0..256 {
        for c in 0..3 {
            centered.set2(i, c, drawn.at(i, c) - mu[c]);
        }
    }
    let x0 = SampleSet::new(centered).unwrap();
    let (_, _, e_init) = landau::moments(&x0);
    let drift = |dt: f64| -> Result<f64, String> {
        let x1 = landau::step(&x0, &oracle, cfg.gamma, dt).map_err(|e| e.to_string())?;
        let (_, _, e1) = landau::moments(&x1);
        Ok((e1 - e_init).abs())
    };
    let order = (drift(0.08)? / drift(0.04)?).log2();
    ensure!(
        (1.8..=2.2).contains(&order),
        "one-step energy error order {order:.3} outside [1.8, 2.2]"
    );
    Ok(format!(
        "momentum ≤{worst_p:.1e}, energy drift ≤{:.3}%, Σ₁₁ {s0:.3}→{s_end:.3} (target {target:.3}), dt-order {order:.2}",
        worst_e * 100.0
    ))
}

// ---------- 10. trained model beats Silverman KDE on held-out mixtures ----------

fn c10_train_config() -> TrainConfig {
    TrainConfig {
        alpha: 0.5,
        batch: 2,
        n_x: 256,
        steps: 20_000,
        lr: 3e-4,
        batch_cfg: BatchConfig {
            b: 2,
            d: 1,
            n_x: 256,
            n_y: 256,
            k_range: (1, 3),
            ..BatchConfig::default()
        },
        seed: 0,
        checkpoint_every: 4000,
        ..TrainConfig::default()
    }
}

/// Median score MSE over 5 held-out mixture draws for the model and for
/// Silverman KDE on the same 256-point contexts.
fn c10_eval(w: &ModelWeights<f64>) -> Result<(f64, f64), String> {
    let (mut tf, mut kd) = (Vec::new(), Vec::new());
    for t in 0..5u64 {
        let bc = BatchConfig { b: 1, d: 1, n_x: 256, n_y: 512, k_range: (1, 3), ..BatchConfig::default() };
        let mut rng = rngutil::stream(2000 + t, purpose::BATCH, t);
        let item = gmm::make_training_batch(&bc, &mut rng)
            .map_err(|e| e.to_string())?
            .items
            .remove(0);
        let est = model::forward(w, &item.x, &item.y).map_err(|e| e.to_string())?;
        tf.push(entry_mse(&est.scores, &item.scores));
        let h = kde::silverman_bandwidth(&item.x).map_err(|e| e.to_string())?;
        let s = kde::kde_score(&item.x, &item.y, h).map_err(|e| e.to_string())?;
        kd.push(entry_mse(&s, &item.scores));
    }
    Ok((median(&tf), median(&kd)))
}

fn trained_model_beats_kde() -> Check {
    let tc = c10_train_config();
    let model_cfg = ModelConfig::desk();
    let desc = format!(
        "train-gate-v1|model{:016x}|f64|alpha{}|b{}|nx{}|ny{}|d{}|k{}-{}|lr{}|steps{}|ck{}|seed{}",
        model_cfg.fingerprint(),
        tc.alpha,
        tc.batch,
        tc.n_x,
        tc.batch_cfg.n_y,
        tc.batch_cfg.d,
        tc.batch_cfg.k_range.0,
        tc.batch_cfg.k_range.1,
        tc.lr,
        tc.steps,
        tc.checkpoint_every,
        tc.seed
    );
    let fp = checkpoint::fnv1a(desc.as_bytes());
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("train_gate_{fp:016x}"));
    if env::var_os("DENSCORE_RETRAIN").is_some() && dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
    }
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;

    let final_ckpt = dir.join(format!("step_{:07}.ckpt", tc.steps));
    let mut note = String::from("reused cached run");
    if !final_ckpt.exists() {
        // Resume from the newest partial checkpoint if an earlier invocation
        // was interrupted; otherwise train from scratch.
        let mut partial: Option<(u64, PathBuf)> = None;
        for entry in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
            if let Some(step) = name
                .strip_prefix("step_")
                .and_then(|s| s.strip_suffix(".ckpt"))
                .and_then(|s| s.parse::<u64>().ok())
            {
                if partial.as_ref().map_or(true, |(best, _)| step > *best) {
                    partial = Some((step, path));
                }
            }
        }
        let t0 = Instant::now();
        let r = match &partial {
            Some((_, p)) => training::resume::<f64>(p, &tc, Some(&dir)),
            None => training::train::<f64>(model_cfg, &tc, Some(&dir)),
        }
        .map_err(|e| e.to_string())?;
        let secs = t0.elapsed().as_secs_f64();
        ensure!(secs <= 7200.0, "training took {secs:.0}s, over the 2 h budget");
        let last = r.losses.last().ok_or("training produced no loss telemetry")?;
        note = format!("trained in {:.0} min, final loss {:.4}", secs / 60.0, last.total);
    }
    ensure!(final_ckpt.exists(), "{} missing after training", final_ckpt.display());

    let mut series = Vec::new();
    let mut kde_bar = 0.0;
    for step in [12_000u64, 16_000, 20_000] {
        let p = dir.join(format!("step_{step:07}.ckpt"));
        ensure!(p.exists(), "{} missing", p.display());
        let (w, _, _) = checkpoint::load::<f64>(&p).map_err(|e| e.to_string())?;
        let (tf, kd) = c10_eval(&w)?;
        series.push(tf);
        kde_bar = kd;
    }
    let tf_final = *series.last().unwrap();
    let primary = tf_final < kde_bar;
    let degraded =
        tf_final <= 1.5 * kde_bar && series[0] > series[1] && series[1] > series[2];
    ensure!(
        primary || degraded,
        "median score MSE {tf_final:.4} vs KDE {kde_bar:.4}; checkpoint series {:.4}/{:.4}/{:.4}",
        series[0],
        series[1],
        series[2]
    );
    Ok(format!(
        "median score MSE {tf_final:.4} vs KDE {kde_bar:.4} ({}; ckpt series {:.4}/{:.4}/{:.4})",
        note, series[0], series[1], series[2]
    ))
}

// ---------- 11. runtime scaling ----------

fn runtime_scaling_separates_estimators() -> Check {
    let ns = [1024usize, 2048, 4096, 8192, 16384];
    let kde_pts = denscore::bench::bench_kde_score(&ns, 2, 7).map_err(|e| e.to_string())?;
    let kde_slope = denscore::bench::loglog_slope(&kde_pts).map_err(|e| e.to_string())?;
    let w = ModelWeights::<f64>::init(ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let tf_pts = denscore::bench::bench_forward(&w, &ns, 2, 7).map_err(|e| e.to_string())?;
    let tf_slope = denscore::bench::loglog_slope(&tf_pts).map_err(|e| e.to_string())?;
    ensure!(kde_slope >= 1.8, "KDE log-log slope {kde_slope:.3} < 1.8");
    ensure!(
        tf_slope < kde_slope,
        "transformer slope {tf_slope:.3} not below KDE slope {kde_slope:.3}"
    );
    Ok(format!(
        "KDE slope {kde_slope:.3}, transformer slope {tf_slope:.3} over n=2^10..2^14"
    ))
}

// ---------- 12. score-matching baseline ----------

fn score_matching_probe_and_overfit() -> Check {
    // Probe-averaged divergence is exact on affine fields: it must recover
    // the trace of the linear part at every evaluation row.
    let mut rng = rngutil::stream(55, purpose::EVAL, 4);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let d = rng.gen_range(1..=4);
        let n = rng.gen_range(3..=12);
        let mut m = Tensor::zeros(&[d, d]);
        for e in m.data_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let trace: f64 = (0..d).map(|c| m.at2(c, c)).sum();
        let field = |x: &Tensor<f64>| -> denscore::Result<Tensor<f64>> {
            let mut s = x.matmul_nt(&m)?;
            for i in 0..s.rows() {
                for c in 0..s.cols() {
                    s.set2(i, c, s.at2(i, c) + b[c]);
                }
            }
            Ok(s)
        };
        let mut x = Tensor::zeros(&[n, d]);
        for e in x.data_mut() {
            *e = rng.gen_range(-2.0..2.0);
        }
        let eps = rng.gen_range(0.05..0.5);
        let div = scorematch::fd_divergence(&field, &x, eps, &scorematch::basis_probes(n, d))
            .map_err(|e| e.to_string())?;
        for v in div {
            worst = worst.max((v - trace).abs() / (1.0 + trace.abs()));
        }
    }
    ensure!(worst <= 1e-10, "divergence trace gap {worst:.2e} > 1e-10 on affine fields");

    // Fit on a healthy sample, then overfit a tiny one with 10× the steps:
    // held-out error must be small first, then visibly degrade.
    let well_x = normal_sample_1d(11, 512);
    let tiny_x = normal_sample_1d(11, 16);
    let held = normal_sample_1d(12, 256);
    let well = scorematch::sm_train(&well_x, &scorematch::SmConfig::default())
        .map_err(|e| e.to_string())?;
    let over_cfg = scorematch::SmConfig { steps: 4000, ..Default::default() };
    let over = scorematch::sm_train(&tiny_x, &over_cfg).map_err(|e| e.to_string())?;
    let held_mse = |mlp: &scorematch::ScoreMlp| -> Result<f64, String> {
        let s = mlp.score_set(&held).map_err(|e| e.to_string())?;
        Ok(s
            .data()
            .iter()
            .zip(held.points().data())
            .map(|(&p, &x)| (p + x) * (p + x))
            .sum::<f64>()
            / held.n() as f64)
    };
    let mse_well = held_mse(&well.model)?;
    let mse_over = held_mse(&over.model)?;
    ensure!(mse_well < 0.1, "held-out score MSE {mse_well:.4} ≥ 0.1 after normal training");
    ensure!(
        mse_over > mse_well,
        "overfit run did not degrade: {mse_over:.4} vs {mse_well:.4}"
    );
    Ok(format!(
        "trace gap {worst:.1e}; held-out MSE {mse_well:.4} normal vs {mse_over:.1} overfit"
    ))
}

// ---------- harness ----------

#[test]
fn release_gate() {
    let checks: Vec<(&'static str, fn() -> Check)> = vec![
        ("attention head reproduces the row-normalized Gaussian kernel", attention_head_matches_gaussian_kernel),
        ("exact mixture targets transform correctly under permutation and affine maps", mixture_targets_transform_exactly),
        ("model symmetries hold and whitening residual is orthogonal", model_symmetries_hold),
        ("autodiff primitives and the joint objective match finite differences", gradients_match_finite_differences),
        ("KDE score equals the gradient of log KDE density", kde_score_is_log_density_gradient),
        ("score-sharpened KDE beats plain KDE on the 1-D Gaussian benchmark", sharpened_kde_beats_plain),
        ("KDE score error on the 2-D Laplace target lands in the reference band", laplace_kde_error_in_reference_band),
        ("entropy, Fisher, and relative-Fisher plug-ins hit closed forms", plugin_estimators_hit_closed_forms),
        ("particle collision solver conserves invariants and relaxes anisotropy", collision_solver_conserves_and_relaxes),
        ("trained model beats Silverman KDE on held-out 1-D mixtures", trained_model_beats_kde),
        ("KDE runtime scales near-quadratically and the model scales below it", runtime_scaling_separates_estimators),
        ("divergence probe is exact on affine fields; score MLP learns then overfits", score_matching_probe_and_overfit),
    ];

    let prev_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut failed: Vec<&'static str> = Vec::new();
    println!();
    for (i, (name, run)) in checks.into_iter().enumerate() {
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(run);
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(Ok(detail)) => println!("[PASS] {:>2}. {name} — {detail} ({secs:.1}s)", i + 1),
            Ok(Err(why)) => {
                failed.push(name);
                println!("[FAIL] {:>2}. {name} — {why} ({secs:.1}s)", i + 1);
            }
            Err(payload) => {
                failed.push(name);
                let why = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".to_string());
                println!("[FAIL] {:>2}. {name} — panicked: {why} ({secs:.1}s)", i + 1);
            }
        }
    }
    panic::set_hook(prev_hook);
    assert!(
        failed.is_empty(),
        "{} of 12 release checks failed: {}",
        failed.len(),
        failed.join("; ")
    );
}
