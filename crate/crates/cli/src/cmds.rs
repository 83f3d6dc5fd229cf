//! Subcommand bodies. Every command resolves settings through the same
//! default < file < flag chain, stamps artifacts with the resolved-value
//! fingerprint, and prints a short summary to stdout.

use crate::kv::Settings;
use crate::oracles::{self, Bandwidth, OracleCtx};
use crate::output;
use crate::{
    BenchArgs, Common, EstArgs, EvalArgs, ExportArgs, LandauArgs, RfiArgs, TrainArgs,
};
use denscore::gmm::{self, BatchConfig};
use denscore::landau::{self, LandauConfig};
use denscore::model::ModelConfig;
use denscore::rngutil::{self, purpose};
use denscore::sample::SampleSet;
use denscore::tensor::Tensor;
use denscore::training::{self, TrainConfig};
use denscore::{bench, estimators, kde};
use denscore::{Error, Result};
use std::path::PathBuf;

fn settings(common: &Common) -> Result<Settings> {
    let mut s = Settings::new(common.config.as_deref())?;
    s.flag("seed", common.seed);
    Ok(s)
}

fn artifact(common: &Common, name: &str) -> PathBuf {
    output::out_path(&common.out, name)
}

fn model_config(s: &Settings) -> Result<ModelConfig> {
    let profile: String = s.get("profile", "desk".to_string())?;
    let mut mc = match profile.as_str() {
        "desk" => ModelConfig::desk(),
        "default" => ModelConfig::default(),
        other => {
            return Err(Error::config(format!("unknown profile '{other}' (desk | default)")))
        }
    };
    mc.hidden = s.get("hidden", mc.hidden)?;
    mc.enc_layers = s.get("enc_layers", mc.enc_layers)?;
    mc.dec_layers = s.get("dec_layers", mc.dec_layers)?;
    mc.heads = s.get("heads", mc.heads)?;
    mc.ffn_mult = s.get("ffn_mult", mc.ffn_mult)?;
    mc.dropout = s.get("dropout", mc.dropout)?;
    mc.d_max = s.get("d_max", mc.d_max)?;
    Ok(mc)
}

fn oracle_ctx(s: &Settings, checkpoint: &Option<PathBuf>) -> Result<OracleCtx> {
    let bw: String = s.get("bandwidth", "silverman".to_string())?;
    Ok(OracleCtx {
        bandwidth: Bandwidth::parse(&bw)?,
        checkpoint: checkpoint.clone(),
        seed: s.get("seed", 0u64)?,
    })
}

pub fn run_train(a: &TrainArgs) -> Result<()> {
    let mut s = settings(&a.common)?;
    s.flag("profile", a.profile.as_ref());
    s.flag("dtype", a.dtype.as_ref());
    s.flag("steps", a.steps);
    s.flag("batch", a.batch);
    s.flag("n_x", a.n_x);
    s.flag("n_y", a.n_y);
    s.flag("lr", a.lr);
    s.flag("alpha", a.alpha);
    s.flag("d", a.d);
    s.flag("mixed_d", a.mixed_d.as_ref());
    s.flag("k_lo", a.k_lo);
    s.flag("k_hi", a.k_hi);
    s.flag("checkpoint_every", a.checkpoint_every);

    let mc = model_config(&s)?;
    let mut cfg = TrainConfig::default();
    cfg.alpha = s.get("alpha", cfg.alpha)?;
    cfg.batch = s.get("batch", 8usize)?;
    cfg.n_x = s.get("n_x", 256usize)?;
    cfg.steps = s.get("steps", 200usize)?;
    cfg.lr = s.get("lr", cfg.lr)?;
    cfg.seed = s.get("seed", 0u64)?;
    cfg.checkpoint_every = s.get("checkpoint_every", 0usize)?;
    cfg.grad_clip = s.get("grad_clip", cfg.grad_clip)?;
    cfg.mixed_d = s.get_list("mixed_d", &[])?;
    cfg.batch_cfg.d = s.get("d", 1usize)?;
    cfg.batch_cfg.n_y = s.get("n_y", 256usize)?;
    cfg.batch_cfg.k_range = (s.get("k_lo", 1usize)?, s.get("k_hi", 10usize)?);
    cfg.batch_cfg.mean_box = s.get("mean_box", cfg.batch_cfg.mean_box)?;
    let dtype: String = s.get("dtype", "f64".to_string())?;
    s.note("model_fingerprint", format!("{:016x}", mc.fingerprint()));
    let fp = s.fingerprint("train");

    let out = a.common.out.clone().unwrap_or_else(output::out_dir);
    let params = mc.param_count();
    let (losses, checkpoints) = match (dtype.as_str(), &a.resume) {
        ("f64", None) => {
            let r = training::train::<f64>(mc, &cfg, Some(&out))?;
            (r.losses, r.checkpoints)
        }
        ("f32", None) => {
            let r = training::train::<f32>(mc, &cfg, Some(&out))?;
            (r.losses, r.checkpoints)
        }
        ("f64", Some(ckpt)) => {
            let r = training::resume::<f64>(ckpt, &cfg, Some(&out))?;
            (r.losses, r.checkpoints)
        }
        ("f32", Some(ckpt)) => {
            let r = training::resume::<f32>(ckpt, &cfg, Some(&out))?;
            (r.losses, r.checkpoints)
        }
        (other, _) => return Err(Error::config(format!("dtype '{other}' is not f32 | f64"))),
    };

    let rows: Vec<String> = losses
        .iter()
        .map(|l| {
            format!("{},{:.9e},{:.9e},{:.9e},{:.3}", l.step, l.density, l.score, l.total, l.wall_secs)
        })
        .collect();
    let csv = artifact(&a.common, "train_losses.csv");
    output::write_csv(&csv, fp, "step,density_loss,score_loss,total_loss,wall_secs", &rows)?;
    if a.svg {
        let series = vec![
            ("total".to_string(), losses.iter().map(|l| (l.step as f64, l.total)).collect()),
            ("density".to_string(), losses.iter().map(|l| (l.step as f64, l.density)).collect()),
            ("score".to_string(), losses.iter().map(|l| (l.step as f64, l.score)).collect()),
        ];
        output::write_svg(
            &artifact(&a.common, "train_losses.svg"),
            "training loss",
            "step",
            "loss",
            &series,
            false,
            true,
        )?;
    }

    println!("params: {params}");
    if let Some(l) = losses.last() {
        println!("final step {}: total {:.6} (density {:.6}, score {:.6})", l.step, l.total, l.density, l.score);
    }
    if let Some(c) = checkpoints.last() {
        println!("checkpoint: {}", c.display());
    }
    println!("losses: {} (fingerprint {fp:016x})", csv.display());
    Ok(())
}

enum EvalKind {
    Score,
    Density,
}

/// One evaluation sample/query pair plus the exact targets at the queries.
struct EvalCase {
    x: SampleSet,
    y: SampleSet,
    densities: Vec<f64>,
    scores: Tensor<f64>,
}

fn eval_case(s: &Settings, dist: &str, n: usize, trial_seed: u64, trial: u64) -> Result<EvalCase> {
    match dist {
        "gmm" => {
            let k: usize = s.get("k", 3usize)?;
            let bc = BatchConfig {
                b: 1,
                d: s.get("d", 1usize)?,
                n_x: n,
                n_y: s.get("n_y", 512usize)?,
                k_range: (k, k),
                ..BatchConfig::default()
            };
            let mut rng = rngutil::stream(trial_seed, purpose::BATCH, trial);
            let batch = gmm::make_training_batch(&bc, &mut rng)?;
            let item = batch.items.into_iter().next().expect("b = 1");
            Ok(EvalCase { x: item.x, y: item.y, densities: item.densities, scores: item.scores })
        }
        // Heavy-tailed product Laplace; estimators are evaluated at the
        // sample itself so the error concentrates where the data lives.
        "laplace" => {
            let d: usize = s.get("d", 2usize)?;
            let scale: f64 = s.get("scale", 1.0f64)?;
            let mut rng = rngutil::stream(trial_seed, purpose::DATA, trial);
            let x = gmm::sample_laplace(d, scale, n, &mut rng)?;
            let y = SampleSet::new(x.points().clone())?;
            let (densities, scores) = gmm::laplace_target(d, scale, &y)?;
            Ok(EvalCase { x, y, densities, scores })
        }
        other => Err(Error::config(format!("unknown dist '{other}' (gmm | laplace)"))),
    }
}

pub fn run_eval(a: &EvalArgs, kind_is_score: bool) -> Result<()> {
    let kind = if kind_is_score { EvalKind::Score } else { EvalKind::Density };
    let mut s = settings(&a.common)?;
    s.flag("oracle", a.oracle.as_ref());
    s.flag("dist", a.dist.as_ref());
    s.flag("d", a.d);
    s.flag("ns", a.ns.as_ref());
    s.flag("n_y", a.n_y);
    s.flag("k", a.k);
    s.flag("scale", a.scale);
    s.flag("trials", a.trials);
    s.flag("bandwidth", a.bandwidth.as_ref());

    let oracle: String = s.get("oracle", "kde".to_string())?;
    let dist: String = s.get("dist", "gmm".to_string())?;
    let ns: Vec<usize> = s.get_list("ns", &[2048])?;
    let trials: usize = s.get("trials", 3usize)?;
    if ns.is_empty() || trials == 0 {
        return Err(Error::config("ns and trials must be non-empty".to_string()));
    }
    let seed: u64 = s.get("seed", 0u64)?;
    let ctx = oracle_ctx(&s, &a.checkpoint)?;
    let cmd = match kind {
        EvalKind::Score => "eval-score",
        EvalKind::Density => "eval-density",
    };
    let fp = s.fingerprint(cmd);

    let mut rows = Vec::new();
    let mut curve = Vec::new();
    for &n in &ns {
        let mut mses = Vec::with_capacity(trials);
        for t in 0..trials as u64 {
            let case = eval_case(&s, &dist, n, seed.wrapping_add(t), t)?;
            let mse = match kind {
                EvalKind::Score => {
                    let pred = oracles::oracle_scores(&oracle, &case.x, &case.y, &ctx)?;
                    if pred.shape() != case.scores.shape() {
                        return Err(Error::shape(format!(
                            "oracle returned {:?}, targets are {:?}",
                            pred.shape(),
                            case.scores.shape()
                        )));
                    }
                    let sq: f64 = pred
                        .data()
                        .iter()
                        .zip(case.scores.data())
                        .map(|(&p, &t)| (p - t) * (p - t))
                        .sum();
                    sq / pred.data().len() as f64
                }
                EvalKind::Density => {
                    let pred = oracles::oracle_densities(&oracle, &case.x, &case.y, &ctx)?;
                    let sq: f64 = pred
                        .iter()
                        .zip(&case.densities)
                        .map(|(&p, &t)| (p - t) * (p - t))
                        .sum();
                    sq / pred.len() as f64
                }
            };
            rows.push(format!("{n},{t},{mse:.9e}"));
            mses.push(mse);
        }
        let (mean, se) = mean_se(&mses);
        curve.push((n as f64, mean));
        println!("n = {n}: mse {mean:.6e} ± {se:.1e} over {trials} trials");
    }

    let csv = artifact(&a.common, &format!("{cmd}.csv"));
    output::write_csv(&csv, fp, "n,trial,mse", &rows)?;
    if a.svg {
        output::write_svg(
            &artifact(&a.common, &format!("{cmd}.svg")),
            &format!("{oracle} {cmd} ({dist})"),
            "n",
            "mse",
            &[(oracle.clone(), curve)],
            true,
            true,
        )?;
    }
    println!("results: {} (fingerprint {fp:016x})", csv.display());
    Ok(())
}

fn mean_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample plus exact density/score evaluators for the estimator commands.
struct Target {
    x: SampleSet,
    densities: Vec<f64>,
    scores: Tensor<f64>,
    label: String,
}

fn draw_target(s: &Settings, common_seed: u64) -> Result<Target> {
    let dist: String = s.get("dist", "gmm".to_string())?;
    let n: usize = s.get("n", 2048usize)?;
    match dist.as_str() {
        "gmm" => {
            let k: usize = s.get("k", 3usize)?;
            let bc = BatchConfig {
                b: 1,
                d: s.get("d", 1usize)?,
                n_x: n,
                n_y: 1,
                k_range: (k, k),
                ..BatchConfig::default()
            };
            let mut rng = rngutil::stream(common_seed, purpose::BATCH, 0);
            let batch = gmm::make_training_batch(&bc, &mut rng)?;
            let item = batch.items.into_iter().next().expect("b = 1");
            let densities = item.spec.density(&item.x)?;
            let scores = item.spec.score(&item.x)?;
            Ok(Target { x: item.x, densities, scores, label: format!("gmm k={k}") })
        }
        "laplace" => {
            let d: usize = s.get("d", 2usize)?;
            let scale: f64 = s.get("scale", 1.0f64)?;
            let mut rng = rngutil::stream(common_seed, purpose::DATA, 0);
            let x = gmm::sample_laplace(d, scale, n, &mut rng)?;
            let (densities, scores) = gmm::laplace_target(d, scale, &x)?;
            Ok(Target { x, densities, scores, label: format!("laplace b={scale}") })
        }
        other => Err(Error::config(format!("unknown dist '{other}' (gmm | laplace)"))),
    }
}

fn est_settings(a: &EstArgs) -> Result<Settings> {
    let mut s = settings(&a.common)?;
    s.flag("oracle", a.oracle.as_ref());
    s.flag("dist", a.dist.as_ref());
    s.flag("d", a.d);
    s.flag("n", a.n);
    s.flag("k", a.k);
    s.flag("scale", a.scale);
    s.flag("bandwidth", a.bandwidth.as_ref());
    Ok(s)
}

pub fn run_entropy(a: &EstArgs) -> Result<()> {
    let s = est_settings(a)?;
    let oracle: String = s.get("oracle", "kde".to_string())?;
    let seed: u64 = s.get("seed", 0u64)?;
    let ctx = oracle_ctx(&s, &a.checkpoint)?;
    let target = draw_target(&s, seed)?;
    let fp = s.fingerprint("entropy");

    let est_dens = oracles::oracle_densities(&oracle, &target.x, &target.x, &ctx)?;
    let (est, est_se) = estimators::entropy_with_se(&est_dens)?;
    let (exact, exact_se) = estimators::entropy_with_se(&target.densities)?;

    println!("plug-in entropy ({}, n = {})", target.label, target.x.n());
    println!("  {oracle}: {est:.6} ± {est_se:.6}");
    println!("  exact density plug-in: {exact:.6} ± {exact_se:.6}");
    let csv = artifact(&a.common, "entropy.csv");
    output::write_csv(
        &csv,
        fp,
        "oracle,estimate,se,exact_plugin,exact_se",
        &[format!("{oracle},{est:.9e},{est_se:.9e},{exact:.9e},{exact_se:.9e}")],
    )?;
    println!("results: {} (fingerprint {fp:016x})", csv.display());
    Ok(())
}

pub fn run_fisher(a: &EstArgs) -> Result<()> {
    let s = est_settings(a)?;
    let oracle: String = s.get("oracle", "kde".to_string())?;
    let seed: u64 = s.get("seed", 0u64)?;
    let ctx = oracle_ctx(&s, &a.checkpoint)?;
    let target = draw_target(&s, seed)?;
    let fp = s.fingerprint("fisher");

    let est_scores = oracles::oracle_scores(&oracle, &target.x, &target.x, &ctx)?;
    let (est, est_se) = estimators::fisher_information_with_se(&est_scores)?;
    let (exact, exact_se) = estimators::fisher_information_with_se(&target.scores)?;

    println!("plug-in fisher information ({}, n = {})", target.label, target.x.n());
    println!("  {oracle}: {est:.6} ± {est_se:.6}");
    println!("  exact score plug-in: {exact:.6} ± {exact_se:.6}");
    let csv = artifact(&a.common, "fisher.csv");
    output::write_csv(
        &csv,
        fp,
        "oracle,estimate,se,exact_plugin,exact_se",
        &[format!("{oracle},{est:.9e},{est_se:.9e},{exact:.9e},{exact_se:.9e}")],
    )?;
    println!("results: {} (fingerprint {fp:016x})", csv.display());
    Ok(())
}

pub fn run_rfi(a: &RfiArgs) -> Result<()> {
    let mut s = est_settings(&a.est)?;
    s.flag("reference", a.reference.as_ref());
    let oracle: String = s.get("oracle", "kde".to_string())?;
    let reference: String = s.get("reference", "standard-normal".to_string())?;
    let seed: u64 = s.get("seed", 0u64)?;
    let ctx = oracle_ctx(&s, &a.est.checkpoint)?;
    let target = draw_target(&s, seed)?;
    let fp = s.fingerprint("rfi");

    let x = &target.x;
    let ref_scores = match reference.as_str() {
        "standard-normal" => {
            let mut t = Tensor::zeros(&[x.n(), x.d()]);
            for i in 0..x.n() {
                for c in 0..x.d() {
                    t.set2(i, c, -x.at(i, c));
                }
            }
            t
        }
        "fit-gaussian" => landau::moment_matched_gaussian_score(x)?,
        "true" => target.scores.clone(),
        other => {
            return Err(Error::config(format!(
                "unknown reference '{other}' (standard-normal | fit-gaussian | true)"
            )))
        }
    };

    let est_scores = oracles::oracle_scores(&oracle, x, x, &ctx)?;
    let (est, est_se) = estimators::relative_fisher_with_se(&ref_scores, &est_scores)?;
    let (exact, exact_se) = estimators::relative_fisher_with_se(&ref_scores, &target.scores)?;

    println!("plug-in relative fisher information ({}, reference {reference}, n = {})", target.label, x.n());
    println!("  {oracle}: {est:.6} ± {est_se:.6}");
    println!("  exact score plug-in: {exact:.6} ± {exact_se:.6}");
    let csv = artifact(&a.est.common, "rfi.csv");
    output::write_csv(
        &csv,
        fp,
        "oracle,reference,estimate,se,exact_plugin,exact_se",
        &[format!("{oracle},{reference},{est:.9e},{est_se:.9e},{exact:.9e},{exact_se:.9e}")],
    )?;
    println!("results: {} (fingerprint {fp:016x})", csv.display());
    Ok(())
}

pub fn run_landau(a: &LandauArgs) -> Result<()> {
    let mut s = settings(&a.common)?;
    s.flag("gamma", a.gamma);
    s.flag("dt", a.dt);
    s.flag("steps", a.steps);
    s.flag("n", a.n);
    s.flag("d", a.d);
    s.flag("init_vars", a.init_vars.as_ref());
    s.flag("oracle", a.oracle.as_ref());
    s.flag("bandwidth", a.bandwidth.as_ref());

    let def = LandauConfig::default();
    let d: usize = s.get("d", def.d)?;
    let cfg = LandauConfig {
        gamma: s.get("gamma", def.gamma)?,
        dt: s.get("dt", def.dt)?,
        steps: s.get("steps", def.steps)?,
        n: s.get("n", def.n)?,
        d,
        init_vars: s.get_list("init_vars", &def.init_vars)?,
        seed: s.get("seed", def.seed)?,
    };
    let oracle: String = s.get("oracle", "gaussian-fit".to_string())?;
    let bw: String = s.get("bandwidth", "silverman".to_string())?;
    let bandwidth = Bandwidth::parse(&bw)?;
    if a.autograd {
        s.note("autograd", true);
    }
    let fp = s.fingerprint("landau");

    let traj = match oracle.as_str() {
        // Self-consistent Gaussian closure: score of the moment-matched fit.
        "gaussian-fit" => landau::simulate(&cfg, &landau::moment_matched_gaussian_score)?,
        "kde" => landau::simulate(&cfg, &|x: &SampleSet| {
            kde::kde_score(x, x, bandwidth.value(x)?)
        })?,
        "transformer" => {
            let mut w = oracles::require_checkpoint(&a.checkpoint, "transformer")?;
            if a.autograd {
                w.set_head_mode(denscore::model::HeadMode::DensityAutograd);
            }
            landau::simulate(&cfg, &|x: &SampleSet| Ok(w.forward(x, x)?.scores))?
        }
        other => {
            return Err(Error::config(format!(
                "unknown oracle '{other}' (gaussian-fit | kde | transformer)"
            )))
        }
    };

    let csv = artifact(&a.common, "landau_trajectory.csv");
    landau::write_trajectory_csv(&csv, &traj)?;
    output::prepend_fingerprint(&csv, fp)?;

    let first = traj.rows.first().expect("at least the initial row");
    let last = traj.rows.last().expect("at least the initial row");
    let momentum_max = traj
        .rows
        .iter()
        .map(|r| r.momentum.iter().map(|m| m.abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    println!("{} steps of dt = {} ({} particles, gamma = {})", cfg.steps, cfg.dt, cfg.n, cfg.gamma);
    println!("  energy: {:.6} -> {:.6} (drift {:+.3e})", first.energy, last.energy, last.energy - first.energy);
    println!("  max |momentum component|: {momentum_max:.3e}");
    let iso = |r: &landau::TrajectoryRow| {
        let target = r.energy / d as f64;
        (0..d).map(|c| (r.sigma.at2(c, c) - target).abs()).fold(0.0, f64::max)
    };
    println!("  anisotropy gap: {:.6} -> {:.6}", iso(first), iso(last));
    println!("  wall time: {:.2}s", last.wall_secs);

    if a.svg {
        let mut series: Vec<(String, Vec<(f64, f64)>)> = (0..d)
            .map(|c| {
                (
                    format!("sigma_{c}{c}"),
                    traj.rows.iter().map(|r| (r.t, r.sigma.at2(c, c))).collect(),
                )
            })
            .collect();
        series.push((
            "energy/d".to_string(),
            traj.rows.iter().map(|r| (r.t, r.energy / d as f64)).collect(),
        ));
        output::write_svg(
            &artifact(&a.common, "landau_trajectory.svg"),
            &format!("covariance relaxation ({oracle})"),
            "t",
            "sigma",
            &series,
            false,
            false,
        )?;
    }
    println!("trajectory: {} (fingerprint {fp:016x})", csv.display());
    Ok(())
}

pub fn run_bench(a: &BenchArgs) -> Result<()> {
    let mut s = settings(&a.common)?;
    s.flag("ns", a.ns.as_ref());
    s.flag("d", a.d);
    s.flag("what", a.what.as_ref());
    s.flag("profile", a.profile.as_ref());
    s.flag("dtype", a.dtype.as_ref());

    let ns: Vec<usize> = s.get_list("ns", &[512, 1024, 2048, 4096, 8192])?;
    let d: usize = s.get("d", 3usize)?;
    let what: String = s.get("what", "both".to_string())?;
    let seed: u64 = s.get("seed", 0u64)?;
    let run_kde = what == "both" || what == "kde";
    let run_tf = what == "both" || what == "transformer";
    if !run_kde && !run_tf {
        return Err(Error::config(format!("unknown target '{what}' (kde | transformer | both)")));
    }

    let mut rows = Vec::new();
    let mut series = Vec::new();
    if run_kde {
        let pts = bench::bench_kde_score(&ns, d, seed)?;
        let slope = bench::loglog_slope(&pts)?;
        println!("kde: fitted log-log slope {slope:.3}");
        series.push(("kde".to_string(), pts.iter().map(|p| (p.n as f64, p.secs)).collect()));
        rows.extend(pts.iter().map(|p| format!("kde,{},{:.9e}", p.n, p.secs)));
    }
    if run_tf {
        let dtype: String = s.get("dtype", "f64".to_string())?;
        let pts = match &a.checkpoint {
            Some(ckpt) => match oracles::AnyWeights::load(ckpt)? {
                oracles::AnyWeights::F32(w) => bench::bench_forward(&w, &ns, d, seed)?,
                oracles::AnyWeights::F64(w) => bench::bench_forward(&w, &ns, d, seed)?,
            },
            None => {
                let mc = model_config(&s)?;
                match dtype.as_str() {
                    "f64" => {
                        let w = denscore::model::ModelWeights::<f64>::init(mc, seed)?;
                        bench::bench_forward(&w, &ns, d, seed)?
                    }
                    "f32" => {
                        let w = denscore::model::ModelWeights::<f32>::init(mc, seed)?;
                        bench::bench_forward(&w, &ns, d, seed)?
                    }
                    other => {
                        return Err(Error::config(format!("dtype '{other}' is not f32 | f64")))
                    }
                }
            }
        };
        let slope = bench::loglog_slope(&pts)?;
        println!("transformer: fitted log-log slope {slope:.3}");
        series.push((
            "transformer".to_string(),
            pts.iter().map(|p| (p.n as f64, p.secs)).collect(),
        ));
        rows.extend(pts.iter().map(|p| format!("transformer,{},{:.9e}", p.n, p.secs)));
    }

    let fp = s.fingerprint("bench");
    let csv = artifact(&a.common, "bench.csv");
    output::write_csv(&csv, fp, "estimator,n,secs", &rows)?;
    if a.svg {
        output::write_svg(
            &artifact(&a.common, "bench.svg"),
            "wall-clock scaling",
            "n",
            "seconds",
            &series,
            true,
            true,
        )?;
    }
    println!("timings: {} (fingerprint {fp:016x})", csv.display());
    Ok(())
}

fn tensor_rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| (0..t.cols()).map(|j| t.at2(i, j)).collect()).collect()
}

pub fn run_export_attention(a: &ExportArgs) -> Result<()> {
    let mut s = settings(&a.common)?;
    s.flag("layer", a.layer);
    s.flag("n", a.n);
    s.flag("n_y", a.n_y);
    s.flag("d", a.d);
    s.flag("k", a.k);

    let layer: usize = s.get("layer", 0usize)?;
    let n: usize = s.get("n", 64usize)?;
    let n_y: usize = s.get("n_y", 32usize)?;
    let d: usize = s.get("d", 2usize)?;
    let k: usize = s.get("k", 3usize)?;
    let seed: u64 = s.get("seed", 0u64)?;

    let w = oracles::require_checkpoint(&a.checkpoint, "transformer")?;
    s.note("model_fingerprint", format!("{:016x}", w.fingerprint()));
    let fp = s.fingerprint("export-attention");

    let bc = BatchConfig { b: 1, d, n_x: n, n_y, k_range: (k, k), ..BatchConfig::default() };
    let mut rng = rngutil::stream(seed, purpose::BATCH, 0);
    let batch = gmm::make_training_batch(&bc, &mut rng)?;
    let item = batch.items.into_iter().next().expect("b = 1");
    let export = w.export_attention(&item.x, &item.y, layer)?;

    let json = serde_json::json!({
        "config_fingerprint": format!("{fp:016x}"),
        "layer": layer,
        "heads": export.per_head.iter().map(tensor_rows).collect::<Vec<_>>(),
        "mean": tensor_rows(&export.mean),
        "kde_matrix": tensor_rows(&export.kde_matrix),
        "kde_correlation": export.kde_correlation,
    });
    let path = artifact(&a.common, &format!("attention_layer{layer}.json"));
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(&path, serde_json::to_string_pretty(&json).expect("plain values"))?;

    println!(
        "layer {layer}: {} heads, mean-attention vs gaussian-kernel correlation {:.4}",
        export.per_head.len(),
        export.kde_correlation
    );
    println!("export: {} (fingerprint {fp:016x})", path.display());
    Ok(())
}
