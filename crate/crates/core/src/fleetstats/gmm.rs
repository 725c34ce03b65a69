//! Gaussian mixtures fitted by expectation-maximisation.

use std::sync::LazyLock;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::registry::{Named, Registry};

pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    pub k: usize,
    pub init: String,
    /// Independent starts for seeded initialisers; ignored by deterministic ones.
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 2,
            init: DEFAULT_INIT.into(),
            restarts: 5,
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

pub const DEFAULT_INIT: &str = "quantile";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim × dim` covariance per component.
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub init: String,
    /// Log-likelihood before every M-step, then at the final parameters.
    pub loglik_trace: Vec<f64>,
    /// Whether the first attempt collapsed and the fit was re-spread.
    pub respread: bool,
}

impl GmmFit {
    /// Per-component variance of a 1-D fit (first diagonal entry otherwise).
    pub fn variances(&self) -> Vec<f64> {
        self.covariances.iter().map(|c| c[0][0]).collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.loglik_trace
            .windows(2)
            .all(|w| w[1] >= w[0] - monotone_slack(w[0]))
    }
}

fn monotone_slack(ll: f64) -> f64 {
    1e-9 * ll.abs().max(1.0)
}

/// Starting parameters for one EM run.
#[derive(Debug, Clone)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub trait GmmInit: Named + Send + Sync {
    /// Starting components for restart number `attempt`.
    fn init(&self, data: &[DVector<f64>], k: usize, seed: u64, attempt: usize) -> Vec<Component>;
    fn deterministic(&self) -> bool;
}

/// Component `k` centred at per-coordinate quantile `(k + 0.5)/K`.
pub struct QuantileInit;

impl Named for QuantileInit {
    fn name(&self) -> &'static str {
        "quantile"
    }
    fn describe(&self) -> &'static str {
        "means at per-coordinate quantiles (k+0.5)/K, pooled covariance"
    }
}

impl GmmInit for QuantileInit {
    fn init(&self, data: &[DVector<f64>], k: usize, _seed: u64, _attempt: usize) -> Vec<Component> {
        let cov = moments(data).1;
        (0..k)
            .map(|j| Component {
                weight: 1.0 / k as f64,
                mean: coordinate_quantiles(data, (j as f64 + 0.5) / k as f64),
                cov: cov.clone(),
            })
            .collect()
    }
    fn deterministic(&self) -> bool {
        true
    }
}

/// Means drawn from `K` distinct samples of a seeded generator.
pub struct RandomInit;

impl Named for RandomInit {
    fn name(&self) -> &'static str {
        "random"
    }
    fn describe(&self) -> &'static str {
        "means at K seeded random samples, pooled covariance; restarts keep the best"
    }
}

impl GmmInit for RandomInit {
    fn init(&self, data: &[DVector<f64>], k: usize, seed: u64, attempt: usize) -> Vec<Component> {
        let cov = moments(data).1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64 * 0x9E37_79B9));
        sample(&mut rng, data.len(), k)
            .into_iter()
            .map(|i| Component {
                weight: 1.0 / k as f64,
                mean: data[i].clone(),
                cov: cov.clone(),
            })
            .collect()
    }
    fn deterministic(&self) -> bool {
        false
    }
}

static INITS: LazyLock<Registry<dyn GmmInit>> = LazyLock::new(|| {
    Registry::<dyn GmmInit>::new("gmm initialiser")
        .with(Box::new(QuantileInit))
        .with(Box::new(RandomInit))
});

pub fn gmm_inits() -> &'static Registry<dyn GmmInit> {
    &INITS
}

fn moments(data: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = data[0].len();
    let n = data.len() as f64;
    let mean = data.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n;
    let mut cov = DMatrix::zeros(d, d);
    for x in data {
        let r = x - &mean;
        cov += &r * r.transpose();
    }
    (mean, cov / n)
}

fn coordinate_quantiles(data: &[DVector<f64>], q: f64) -> DVector<f64> {
    let d = data[0].len();
    DVector::from_iterator(
        d,
        (0..d).map(|j| {
            let mut col: Vec<f64> = data.iter().map(|x| x[j]).collect();
            col.sort_by(f64::total_cmp);
            let pos = q * (col.len() - 1) as f64;
            let (lo, frac) = (pos.floor() as usize, pos.fract());
            let hi = (lo + 1).min(col.len() - 1);
            col[lo] + frac * (col[hi] - col[lo])
        }),
    )
}

/// Means spread evenly between the 5 % and 95 % coordinate quantiles.
fn respread(data: &[DVector<f64>], k: usize) -> Vec<Component> {
    let (lo, hi) = (
        coordinate_quantiles(data, 0.05),
        coordinate_quantiles(data, 0.95),
    );
    let cov = moments(data).1;
    (0..k)
        .map(|j| Component {
            weight: 1.0 / k as f64,
            mean: &lo + (&hi - &lo) * ((j as f64 + 0.5) / k as f64),
            cov: cov.clone(),
        })
        .collect()
}

struct Prepared {
    log_norm: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn prepare(c: &Component) -> Option<Prepared> {
    let d = c.mean.len();
    if (0..d).any(|i| !(c.cov[(i, i)] >= VARIANCE_FLOOR)) || !(c.weight > 0.0) {
        return None;
    }
    let chol = c.cov.clone().cholesky()?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return None;
    }
    let log_norm = c.weight.ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
    Some(Prepared { log_norm, chol })
}

enum Step {
    Ok { loglik: f64, resp: DMatrix<f64> },
    Collapse,
}

fn e_step(data: &[DVector<f64>], comps: &[Component]) -> Step {
    let Some(prep) = comps.iter().map(prepare).collect::<Option<Vec<_>>>() else {
        return Step::Collapse;
    };
    let (n, k) = (data.len(), comps.len());
    let mut resp = DMatrix::zeros(n, k);
    let mut loglik = 0.0;
    let mut row = vec![0.0; k];
    for (i, x) in data.iter().enumerate() {
        for (j, (c, p)) in comps.iter().zip(&prep).enumerate() {
            let r = x - &c.mean;
            let z = p
                .chol
                .l()
                .solve_lower_triangular(&r)
                .expect("factor is nonsingular");
            row[j] = p.log_norm - 0.5 * z.norm_squared();
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loglik += lse;
        for j in 0..k {
            resp[(i, j)] = (row[j] - lse).exp();
        }
    }
    if loglik.is_finite() {
        Step::Ok { loglik, resp }
    } else {
        Step::Collapse
    }
}

fn m_step(data: &[DVector<f64>], resp: &DMatrix<f64>) -> Vec<Component> {
    let (n, d) = (data.len(), data[0].len());
    (0..resp.ncols())
        .map(|j| {
            let nk: f64 = resp.column(j).sum();
            let mut mean = DVector::zeros(d);
            for (i, x) in data.iter().enumerate() {
                mean += x * resp[(i, j)];
            }
            mean /= nk;
            let mut cov = DMatrix::zeros(d, d);
            for (i, x) in data.iter().enumerate() {
                let r = x - &mean;
                cov += (&r * r.transpose()) * resp[(i, j)];
            }
            cov /= nk;
            Component {
                weight: nk / n as f64,
                mean,
                cov,
            }
        })
        .collect()
}

struct Run {
    comps: Vec<Component>,
    loglik: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn run_em(
    data: &[DVector<f64>],
    mut comps: Vec<Component>,
    cfg: &GmmConfig,
) -> Result<Run, StatsError> {
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let Step::Ok { loglik, resp } = e_step(data, &comps) else {
            return Err(StatsError::Collapse);
        };
        if let Some(&prev) = trace.last() {
            if loglik < prev - monotone_slack(prev) {
                return Err(StatsError::NonMonotone {
                    iteration: iterations,
                    prev,
                    next: loglik,
                });
            }
            if (loglik - prev).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
                converged = true;
            }
        }
        trace.push(loglik);
        if converged || iterations >= cfg.max_iter {
            return Ok(Run {
                comps,
                loglik,
                iterations,
                converged,
                trace,
            });
        }
        comps = m_step(data, &resp);
        iterations += 1;
    }
}

fn to_fit(run: Run, k: usize, init: &str, respread: bool) -> GmmFit {
    let mut comps = run.comps;
    comps.sort_by(|a, b| {
        a.mean
            .iter()
            .zip(b.mean.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let d = comps[0].mean.len();
    GmmFit {
        k,
        dim: d,
        weights: comps.iter().map(|c| c.weight).collect(),
        means: comps
            .iter()
            .map(|c| c.mean.iter().copied().collect())
            .collect(),
        covariances: comps
            .iter()
            .map(|c| {
                (0..d)
                    .map(|r| (0..d).map(|s| c.cov[(r, s)]).collect())
                    .collect()
            })
            .collect(),
        loglik: run.loglik,
        iterations: run.iterations,
        converged: run.converged,
        init: init.into(),
        loglik_trace: run.trace,
        respread,
    }
}

/// Fits a `cfg.k`-component mixture to `samples`, each a point of equal
/// dimension. Components are returned sorted by mean.
pub fn gmm_fit(samples: &[Vec<f64>], cfg: &GmmConfig) -> Result<GmmFit, StatsError> {
    let init = gmm_inits().resolve(&cfg.init)?;
    if cfg.k == 0 {
        return Err(StatsError::Domain(
            "number of components must be at least 1".into(),
        ));
    }
    if samples.len() < 10 * cfg.k {
        return Err(StatsError::Domain(format!(
            "{} samples is fewer than 10 per component for K = {}",
            samples.len(),
            cfg.k
        )));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(StatsError::Domain(
            "samples must share a non-zero dimension".into(),
        ));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::Domain(
            "samples contain non-finite values".into(),
        ));
    }
    let data: Vec<DVector<f64>> = samples
        .iter()
        .map(|s| DVector::from_column_slice(s))
        .collect();

    let attempts = if init.deterministic() {
        1
    } else {
        cfg.restarts.max(1)
    };
    let mut best: Option<Run> = None;
    let mut collapsed = false;
    for a in 0..attempts {
        match run_em(&data, init.init(&data, cfg.k, cfg.seed, a), cfg) {
            Ok(run) => {
                if best.as_ref().is_none_or(|b| run.loglik > b.loglik) {
                    best = Some(run);
                }
            }
            Err(StatsError::Collapse) => collapsed = true,
            Err(e) => return Err(e),
        }
    }
    if let Some(run) = best {
        return Ok(to_fit(run, cfg.k, init.name(), false));
    }
    debug_assert!(collapsed);
    log::debug!("mixture collapsed; retrying once from a re-spread start");
    let run = run_em(&data, respread(&data, cfg.k), cfg)?;
    Ok(to_fit(run, cfg.k, init.name(), true))
}

/// Convenience wrapper for scalar samples.
pub fn gmm_fit_1d(samples: &[f64], cfg: &GmmConfig) -> Result<GmmFit, StatsError> {
    let pts: Vec<Vec<f64>> = samples.iter().map(|&v| vec![v]).collect();
    gmm_fit(&pts, cfg)
}
