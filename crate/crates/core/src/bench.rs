//! Wall-clock scaling sweeps: KDE score estimation vs transformer forward
//! over a grid of sample sizes, with a least-squares log-log slope fit.
//! Both sweeps evaluate the score at the sample points themselves, so the
//! query count grows with n and plain KDE is a genuine n² baseline.

use crate::error::{Error, Result};
use crate::gmm::GmmSpec;
use crate::kde;
use crate::model::{self, ModelWeights};
use crate::rngutil::{self, purpose};
use crate::sample::SampleSet;
use crate::tensor::Real;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct BenchPoint {
    pub n: usize,
    pub secs: f64,
}

/// Times f() and returns the fastest of several runs: the minimum estimates
/// the noise-free cost, where a mean would fold scheduler and allocator
/// jitter into the points and corrupt the fitted slope. Every point gets at
/// least two runs; fast ones repeat until ≥100 ms have accumulated (≤10).
fn time_adaptive(mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    f()?;
    let first = start.elapsed().as_secs_f64();
    let extra = if first >= 0.1 {
        1
    } else {
        ((0.1 / first.max(1e-9)).ceil() as usize).min(9)
    };
    let mut best = first;
    for _ in 0..extra {
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

fn draw(n: usize, d: usize, seed: u64) -> Result<SampleSet> {
    let spec = GmmSpec::standard_normal(d);
    let mut rng = rngutil::stream(seed, purpose::EVAL, n as u64);
    spec.sample(n, &mut rng)
}

/// Silverman-bandwidth KDE score at the n sample points, per grid size.
pub fn bench_kde_score(ns: &[usize], d: usize, seed: u64) -> Result<Vec<BenchPoint>> {
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        let x = draw(n, d, seed)?;
        let h = kde::silverman_bandwidth(&x)?;
        // warm caches before the first measured size
        if out.is_empty() {
            kde::kde_score(&x, &x, h)?;
        }
        let secs = time_adaptive(|| kde::kde_score(&x, &x, h).map(|_| ()))?;
        out.push(BenchPoint { n, secs });
    }
    Ok(out)
}

/// Transformer density+score forward with the sample as both context and
/// query set, per grid size.
pub fn bench_forward<F: Real>(
    w: &ModelWeights<F>,
    ns: &[usize],
    d: usize,
    seed: u64,
) -> Result<Vec<BenchPoint>> {
    if d > w.config.d_max {
        return Err(Error::config(format!("d={d} exceeds model d_max={}", w.config.d_max)));
    }
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        let x = draw(n, d, seed)?;
        if out.is_empty() {
            model::forward(w, &x, &x)?;
        }
        let secs = time_adaptive(|| model::forward(w, &x, &x).map(|_| ()))?;
        out.push(BenchPoint { n, secs });
    }
    Ok(out)
}

/// OLS slope of ln(secs) against ln(n).
pub fn loglog_slope(pts: &[BenchPoint]) -> Result<f64> {
    if pts.len() < 2 {
        return Err(Error::config("slope fit needs at least 2 points".to_string()));
    }
    if pts.iter().any(|p| !(p.secs > 0.0) || p.n == 0) {
        return Err(Error::numeric("slope fit needs positive times and sizes".to_string()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.secs.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..xs.len() {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    Ok(num / den)
}
