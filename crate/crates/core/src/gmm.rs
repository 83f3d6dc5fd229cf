use crate::error::{Error, Result};
use crate::sample::SampleSet;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

/// Covariance of one mixture component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Cov {
    /// Diagonal entries (variances).
    Diag(Vec<f64>),
    /// Full d×d SPD matrix, row-major.
    Full(Vec<Vec<f64>>),
}

/// Per-component factors precomputed at construction: Lᵀ of Σ = LLᵀ for
/// sampling (x = μ + z·Lᵀ), Σ⁻¹ for scores, log det Σ for densities.
#[derive(Debug, Clone)]
struct CompCache {
    lt: Tensor<f64>,
    inv: Tensor<f64>,
    logdet: f64,
}

/// Gaussian mixture with exact density and score. Weights live on the
/// simplex; every covariance is SPD (Cholesky succeeds at construction).
#[derive(Debug, Clone)]
pub struct GmmSpec {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Cov>,
    cache: Vec<CompCache>,
}

fn cov_factors(cov: &Cov, d: usize) -> Result<CompCache> {
    match cov {
        Cov::Diag(v) => {
            if v.len() != d {
                return Err(Error::shape("diag cov length".to_string()));
            }
            if v.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
                return Err(Error::numeric("diag cov wants positive entries".to_string()));
            }
            let mut lt = Tensor::zeros(&[d, d]);
            let mut inv = Tensor::zeros(&[d, d]);
            let mut logdet = 0.0;
            for i in 0..d {
                lt.set2(i, i, v[i].sqrt());
                inv.set2(i, i, 1.0 / v[i]);
                logdet += v[i].ln();
            }
            Ok(CompCache { lt, inv, logdet })
        }
        Cov::Full(rows) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::shape("full cov shape".to_string()));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let m = nalgebra::DMatrix::from_row_slice(d, d, &flat);
            let chol = m
                .clone()
                .cholesky()
                .ok_or_else(|| Error::numeric("covariance not SPD (Cholesky failed)".to_string()))?;
            let l = chol.l();
            let logdet = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
            let inv_m = chol.inverse();
            let mut lt = Tensor::zeros(&[d, d]);
            let mut inv = Tensor::zeros(&[d, d]);
            for i in 0..d {
                for j in 0..d {
                    lt.set2(i, j, l[(j, i)]);
                    inv.set2(i, j, inv_m[(i, j)]);
                }
            }
            Ok(CompCache { lt, inv, logdet })
        }
    }
}

impl GmmSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Cov>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(Error::config("mixture wants k matching weights/means/covs".to_string()));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::config("mixture means disagree on d".to_string()));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::config("mixture weights must be nonnegative".to_string()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("mixture weights sum to {s}, want 1")));
        }
        let cache = covs.iter().map(|c| cov_factors(c, d)).collect::<Result<Vec<_>>>()?;
        Ok(GmmSpec { weights, means, covs, cache })
    }

    /// Single Gaussian N(mean, diag(vars)).
    pub fn gaussian(mean: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![Cov::Diag(vars)])
    }

    pub fn standard_normal(d: usize) -> Self {
        Self::gaussian(vec![0.0; d], vec![1.0; d]).expect("valid by construction")
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covs(&self) -> &[Cov] {
        &self.covs
    }

    fn comp_log_pdf(&self, j: usize, y: &[f64]) -> f64 {
        let d = self.d();
        let mu = &self.means[j];
        let c = &self.cache[j];
        // q = (y−μ) Σ⁻¹ (y−μ)ᵀ
        let mut q = 0.0;
        for a in 0..d {
            let mut acc = 0.0;
            for b in 0..d {
                acc += (y[b] - mu[b]) * c.inv.at2(b, a);
            }
            q += acc * (y[a] - mu[a]);
        }
        -0.5 * (d as f64 * LN_2PI + c.logdet + q)
    }

    /// Exact mixture log-pdf at each query row, via log-sum-exp.
    pub fn log_density(&self, y: &SampleSet) -> Result<Vec<f64>> {
        if y.d() != self.d() {
            return Err(Error::shape(format!(
                "queries are {}-d, mixture is {}-d",
                y.d(),
                self.d()
            )));
        }
        let k = self.k();
        let mut out = Vec::with_capacity(y.n());
        let logw: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        for i in 0..y.n() {
            let row = y.row(i);
            let terms: Vec<f64> =
                (0..k).map(|j| logw[j] + self.comp_log_pdf(j, row)).collect();
            let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
            out.push(lse);
        }
        Ok(out)
    }

    /// Exact mixture pdf (strictly positive).
    pub fn density(&self, y: &SampleSet) -> Result<Vec<f64>> {
        Ok(self.log_density(y)?.into_iter().map(f64::exp).collect())
    }

    /// Exact score ∇log f: responsibility-weighted sum of −(y−μ_j)Σ_j⁻¹.
    pub fn score(&self, y: &SampleSet) -> Result<Tensor<f64>> {
        if y.d() != self.d() {
            return Err(Error::shape("score dim mismatch".to_string()));
        }
        let (k, d) = (self.k(), self.d());
        let logw: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let mut out = Tensor::zeros(&[y.n(), d]);
        for i in 0..y.n() {
            let row = y.row(i);
            let terms: Vec<f64> =
                (0..k).map(|j| logw[j] + self.comp_log_pdf(j, row)).collect();
            let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let num: Vec<f64> = terms.iter().map(|t| (t - mx).exp()).collect();
            let den: f64 = num.iter().sum();
            for (j, r) in num.iter().map(|v| v / den).enumerate() {
                let mu = &self.means[j];
                let inv = &self.cache[j].inv;
                for a in 0..d {
                    let mut g = 0.0;
                    for b in 0..d {
                        g += (row[b] - mu[b]) * inv.at2(b, a);
                    }
                    let cur = out.at2(i, a);
                    out.set2(i, a, cur - r * g);
                }
            }
        }
        Ok(out)
    }

    /// n i.i.d. draws: categorical component pick, then x = μ + z·Lᵀ.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::config("sample wants n >= 1".to_string()));
        }
        let d = self.d();
        let mut out = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let u: f64 = rng.gen();
            let mut j = 0;
            let mut cum = 0.0;
            for (jj, &w) in self.weights.iter().enumerate() {
                cum += w;
                if u < cum {
                    j = jj;
                    break;
                }
                j = jj;
            }
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let lt = &self.cache[j].lt;
            let mu = &self.means[j];
            for a in 0..d {
                let mut v = mu[a];
                for b in 0..d {
                    v += z[b] * lt.at2(b, a);
                }
                out.set2(i, a, v);
            }
        }
        SampleSet::new(out)
    }

    /// Law of xA + μ for x ~ self (row-vector convention): means map to
    /// μ_jA + μ, covariances to AᵀΣ_jA. Densities of the result relate by
    /// 1/|det A|, scores by right-multiplication with (A⁻¹)ᵀ.
    pub fn affine_pushforward(&self, a: &Tensor<f64>, mu: &[f64]) -> Result<GmmSpec> {
        let d = self.d();
        if !a.is_2d() || a.rows() != d || a.cols() != d || mu.len() != d {
            return Err(Error::shape("pushforward wants d×d A and d-shift".to_string()));
        }
        let mut means = Vec::with_capacity(self.k());
        for m in &self.means {
            let mut nm = mu.to_vec();
            for (jj, nmj) in nm.iter_mut().enumerate() {
                for (ii, &mi) in m.iter().enumerate() {
                    *nmj += mi * a.at2(ii, jj);
                }
            }
            means.push(nm);
        }
        let mut covs = Vec::with_capacity(self.k());
        for (cov, cache) in self.covs.iter().zip(&self.cache) {
            let sigma = match cov {
                Cov::Diag(v) => {
                    let mut s = Tensor::zeros(&[d, d]);
                    for i in 0..d {
                        s.set2(i, i, v[i]);
                    }
                    s
                }
                Cov::Full(_) => cache.lt.transpose()?.matmul(&cache.lt)?,
            };
            let new_cov = a.matmul_tn(&sigma.matmul(a)?)?;
            covs.push(Cov::Full(
                (0..d).map(|i| new_cov.row(i).to_vec()).collect(),
            ));
        }
        GmmSpec::new(self.weights.clone(), means, covs)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Pod<'a> {
            weights: &'a [f64],
            means: &'a [Vec<f64>],
            covs: &'a [Cov],
        }
        serde_json::to_string(&Pod { weights: &self.weights, means: &self.means, covs: &self.covs })
            .expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Pod {
            weights: Vec<f64>,
            means: Vec<Vec<f64>>,
            covs: Vec<Cov>,
        }
        let pod: Pod = serde_json::from_str(s)
            .map_err(|e| Error::config(format!("mixture json: {e}")))?;
        GmmSpec::new(pod.weights, pod.means, pod.covs)
    }
}

/// Covariance sampling scheme for generated mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovScheme {
    /// Independent per-coordinate variances, uniform in [lo, hi].
    DiagRange { lo: f64, hi: f64 },
    /// Σ = AAᵀ + εI with A a standard normal d×d draw.
    WishartEps { eps: f64 },
}

/// Batch-generation config. Defaults follow the training recipe: 1–10 modes,
/// means in [−3,3]^d, diagonal variances in [0.2,1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchConfig {
    pub b: usize,
    pub d: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub k_range: (usize, usize),
    pub mean_box: f64,
    pub cov: CovScheme,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            b: 32,
            d: 1,
            n_x: 2048,
            n_y: 2048,
            k_range: (1, 10),
            mean_box: 3.0,
            cov: CovScheme::DiagRange { lo: 0.2, hi: 1.0 },
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.d == 0 || self.n_x < 2 || self.n_y == 0 {
            return Err(Error::config("batch wants b≥1, d≥1, n_x≥2, n_y≥1".to_string()));
        }
        if self.k_range.0 < 1 || self.k_range.0 > self.k_range.1 {
            return Err(Error::config(format!("bad k range {:?}", self.k_range)));
        }
        match self.cov {
            CovScheme::DiagRange { lo, hi } => {
                if lo <= 0.0 || hi < lo {
                    return Err(Error::config("diag range wants 0 < lo <= hi".to_string()));
                }
            }
            CovScheme::WishartEps { eps } => {
                if eps <= 0.0 {
                    return Err(Error::config("wishart eps must be positive".to_string()));
                }
            }
        }
        Ok(())
    }
}

/// One training example: context set, query set, and exact targets computed
/// from the generating mixture (same code path as `GmmSpec::density/score`).
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub x: SampleSet,
    pub y: SampleSet,
    pub densities: Vec<f64>,
    pub log_densities: Vec<f64>,
    pub scores: Tensor<f64>,
    pub spec: GmmSpec,
}

#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub items: Vec<BatchItem>,
}

/// Draw a fresh batch: one component count k for the whole batch, then per
/// item fresh weights (uniform on the simplex via normalized Exp(1) draws),
/// means uniform in the mean box, covariances per scheme, and independent
/// X/Y draws from the same mixture with exact targets on Y.
pub fn make_training_batch(cfg: &BatchConfig, rng: &mut impl Rng) -> Result<TrainingBatch> {
    cfg.validate()?;
    let k = rng.gen_range(cfg.k_range.0..=cfg.k_range.1);
    let mut items = Vec::with_capacity(cfg.b);
    for _ in 0..cfg.b {
        let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|v| v / s).collect();
        // kill the float residue so the simplex invariant holds exactly
        let resid: f64 = 1.0 - weights.iter().sum::<f64>();
        weights[0] += resid;

        let means: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..cfg.d).map(|_| rng.gen_range(-cfg.mean_box..=cfg.mean_box)).collect())
            .collect();

        let covs: Vec<Cov> = (0..k)
            .map(|_| match cfg.cov {
                CovScheme::DiagRange { lo, hi } => {
                    Cov::Diag((0..cfg.d).map(|_| rng.gen_range(lo..=hi)).collect())
                }
                CovScheme::WishartEps { eps } => {
                    let a: Vec<f64> =
                        (0..cfg.d * cfg.d).map(|_| rng.sample(StandardNormal)).collect();
                    let mut sig = vec![vec![0.0; cfg.d]; cfg.d];
                    for (i, row) in sig.iter_mut().enumerate() {
                        for (j, v) in row.iter_mut().enumerate() {
                            for p in 0..cfg.d {
                                *v += a[i * cfg.d + p] * a[j * cfg.d + p];
                            }
                            if i == j {
                                *v += eps;
                            }
                        }
                    }
                    Cov::Full(sig)
                }
            })
            .collect();

        let spec = GmmSpec::new(weights, means, covs)?;
        let x = spec.sample(cfg.n_x, rng)?;
        let y = spec.sample(cfg.n_y, rng)?;
        let log_densities = spec.log_density(&y)?;
        let densities: Vec<f64> = log_densities.iter().map(|&v| v.exp()).collect();
        let scores = spec.score(&y)?;
        items.push(BatchItem { x, y, densities, log_densities, scores, spec });
    }
    Ok(TrainingBatch { items })
}

/// Product of independent Laplace(0, scale) marginals: densities and scores
/// at the query rows. The score is −sign(y_i)/scale per coordinate, 0 at
/// exact zeros.
pub fn laplace_target(d: usize, scale: f64, y: &SampleSet) -> Result<(Vec<f64>, Tensor<f64>)> {
    if scale <= 0.0 {
        return Err(Error::config("laplace scale must be positive".to_string()));
    }
    if y.d() != d {
        return Err(Error::shape("laplace target dim mismatch".to_string()));
    }
    let mut dens = Vec::with_capacity(y.n());
    let mut scores = Tensor::zeros(&[y.n(), d]);
    for i in 0..y.n() {
        let row = y.row(i);
        let mut logp = 0.0;
        for (j, &v) in row.iter().enumerate() {
            logp += -(2.0 * scale).ln() - v.abs() / scale;
            let s = if v == 0.0 { 0.0 } else { -v.signum() / scale };
            scores.set2(i, j, s);
        }
        dens.push(logp.exp());
    }
    Ok((dens, scores))
}

/// n draws from the product Laplace via inverse CDF.
pub fn sample_laplace(d: usize, scale: f64, n: usize, rng: &mut impl Rng) -> Result<SampleSet> {
    if scale <= 0.0 {
        return Err(Error::config("laplace scale must be positive".to_string()));
    }
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        for j in 0..d {
            let u: f64 = rng.gen::<f64>() - 0.5;
            let v = -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln_1p_guard();
            out.set2(i, j, v);
        }
    }
    SampleSet::new(out)
}

trait Ln1pGuard {
    fn ln_1p_guard(self) -> f64;
}
impl Ln1pGuard for f64 {
    // ln(x) with x = 1 − 2|u| ∈ (0, 1]; guard the measure-zero exact 0.
    fn ln_1p_guard(self) -> f64 {
        if self <= 0.0 {
            f64::MIN_POSITIVE.ln()
        } else {
            self.ln()
        }
    }
}
