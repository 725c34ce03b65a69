//! Long-term statistics over analysed sessions: temperature–frequency
//! regression, peak-displacement mixtures and two-girder comparison.

mod gmm;

pub use gmm::{
    gmm_fit, gmm_fit_1d, gmm_inits, Component, GmmConfig, GmmFit, GmmInit, QuantileInit,
    RandomInit, DEFAULT_INIT, VARIANCE_FLOOR,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{FusionError, FusionResult};
use crate::nodesim::Session;
use crate::registry::RegistryError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("mixture component variance collapsed below {VARIANCE_FLOOR:e} after re-spreading")]
    Collapse,
    #[error("log-likelihood decreased at iteration {iteration}: {prev} -> {next}")]
    NonMonotone {
        iteration: usize,
        prev: f64,
        next: f64,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares of `y` on `x`. A constant `y` reports `r² = 0`.
pub fn linfit(x: &[f64], y: &[f64]) -> Result<RegressionFit, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Domain(format!(
            "{} x values but {} y values",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::Domain(
            "at least two points are required".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::Domain("non-finite input".into()));
    }
    let nf = n as f64;
    let xm = x.iter().sum::<f64>() / nf;
    let ym = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let syy: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    if x.iter().all(|&v| v == x[0]) || sxx <= f64::EPSILON * f64::EPSILON * nf * xm * xm {
        return Err(StatsError::Domain("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let r2 = if syy == 0.0 {
        0.0
    } else {
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
            .sum();
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r2,
        n,
    })
}

/// Largest absolute value of the series, mm.
pub fn max_displacement(u: &[f64]) -> Result<f64, StatsError> {
    if u.is_empty() {
        return Err(StatsError::Domain("empty displacement series".into()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::Domain("non-finite displacement sample".into()));
    }
    Ok(u.iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// One analysed session as stored in the info table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisRecord {
    pub node: String,
    pub session: String,
    pub t0_ms: i64,
    pub temperature_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_n_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ena_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling_rule: Option<String>,
    /// Short failure marker such as `no-peak`; absent on success.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Stable short marker for a failed analysis.
pub fn error_marker(e: &FusionError) -> &'static str {
    match e {
        FusionError::NoPeak { .. } => "no-peak",
        FusionError::Degenerate { .. } => "degenerate-scaling",
        FusionError::Basis(_) => "basis",
        _ => "analysis-error",
    }
}

impl AnalysisRecord {
    pub fn from_outcome(session: &Session, outcome: &Result<FusionResult, FusionError>) -> Self {
        let mut rec = AnalysisRecord {
            node: session.node_id.clone(),
            session: session.session_id.clone(),
            t0_ms: session.t0_ms,
            temperature_c: session.temperature_c,
            f_n_hz: None,
            alpha: None,
            ena_mm: None,
            peak_mm: None,
            scaling_rule: None,
            error: None,
            detail: None,
        };
        match outcome {
            Ok(r) => {
                rec.f_n_hz = Some(r.f_n_hz);
                rec.alpha = Some(r.alpha);
                rec.ena_mm = Some(r.ena_mm);
                rec.peak_mm = max_displacement(&r.u_fused).ok();
                rec.scaling_rule = Some(r.scaling_rule.clone());
            }
            Err(e) => {
                rec.error = Some(error_marker(e).into());
                rec.detail = Some(e.to_string());
            }
        }
        rec
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Half-open interval `[start_ms, end_ms)` of session start times; open ends
/// are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_ms: Option<i64>,
    pub end_ms: Option<i64>,
}

impl TimeWindow {
    pub fn contains(&self, t_ms: i64) -> bool {
        self.start_ms.is_none_or(|s| t_ms >= s) && self.end_ms.is_none_or(|e| t_ms < e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Relative ENA gap above which the girders are flagged.
    pub divergence_threshold: f64,
    pub hist_bin_hz: f64,
    pub hist_lo_hz: f64,
    pub hist_hi_hz: f64,
    pub gmm: GmmConfig,
    /// Sessions of the two nodes closer than this are paired for the joint fit.
    pub pair_tolerance_ms: i64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            divergence_threshold: 0.10,
            hist_bin_hz: 0.01,
            hist_lo_hz: 1.0,
            hist_hi_hz: 20.0,
            gmm: GmmConfig::default(),
            pair_tolerance_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub center_hz: f64,
    pub count: usize,
}

/// Occupied bins of a histogram whose bins are centred on multiples of `bin`
/// offset from `lo`. Values outside `[lo, hi)` are dropped.
pub fn frequency_histogram(values: &[f64], lo: f64, hi: f64, bin: f64) -> Vec<HistogramBin> {
    let nbins = ((hi - lo) / bin).round() as usize;
    let mut counts = vec![0usize; nbins + 1];
    for &v in values {
        if v.is_finite() && v >= lo && v < hi {
            let i = ((v - lo) / bin).round() as usize;
            counts[i.min(nbins)] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .map(|(i, count)| HistogramBin {
            center_hz: ((lo + i as f64 * bin) / bin).round() * bin,
            count,
        })
        .collect()
}

/// Centre of the most populated bin; ties go to the lower frequency.
pub fn histogram_mode(bins: &[HistogramBin]) -> Option<f64> {
    let mut best: Option<&HistogramBin> = None;
    for b in bins {
        if best.is_none_or(|m| b.count > m.count) {
            best = Some(b);
        }
    }
    best.map(|b| b.center_hz)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node: String,
    pub sessions: usize,
    pub analyzed: usize,
    pub failed: usize,
    pub f_n_mode_hz: Option<f64>,
    pub f_n_histogram: Vec<HistogramBin>,
    pub ena_mean_mm: Option<f64>,
    pub ena_std_mm: Option<f64>,
    pub peak_max_mm: Option<f64>,
    /// Natural frequency against temperature.
    pub regression: Option<RegressionFit>,
    pub gmm: Option<GmmFit>,
    pub warnings: Vec<String>,
}

fn summarise(node: &str, recs: &[&AnalysisRecord], cfg: &ReportConfig) -> NodeSummary {
    let ok: Vec<&AnalysisRecord> = recs.iter().copied().filter(|r| r.is_ok()).collect();
    let mut warnings = Vec::new();
    if recs.is_empty() {
        warnings.push(format!("node {node}: no sessions in window"));
    } else if ok.is_empty() {
        warnings.push(format!(
            "node {node}: no successfully analysed sessions in window"
        ));
    }
    let fns: Vec<f64> = ok.iter().filter_map(|r| r.f_n_hz).collect();
    let hist = frequency_histogram(&fns, cfg.hist_lo_hz, cfg.hist_hi_hz, cfg.hist_bin_hz);
    let enas: Vec<f64> = ok.iter().filter_map(|r| r.ena_mm).collect();
    let (ena_mean, ena_std) = if enas.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&enas);
        (Some(m), Some(s))
    };
    let peaks: Vec<f64> = ok.iter().filter_map(|r| r.peak_mm).collect();

    let (tx, fy): (Vec<f64>, Vec<f64>) = ok
        .iter()
        .filter_map(|r| r.f_n_hz.map(|f| (r.temperature_c, f)))
        .unzip();
    let regression = match linfit(&tx, &fy) {
        Ok(f) => Some(f),
        Err(e) if !ok.is_empty() => {
            warnings.push(format!("node {node}: no temperature regression ({e})"));
            None
        }
        Err(_) => None,
    };
    let gmm = match gmm_fit_1d(&peaks, &cfg.gmm) {
        Ok(f) => Some(f),
        Err(e) if !ok.is_empty() => {
            warnings.push(format!("node {node}: no peak mixture ({e})"));
            None
        }
        Err(_) => None,
    };
    NodeSummary {
        node: node.into(),
        sessions: recs.len(),
        analyzed: ok.len(),
        failed: recs.len() - ok.len(),
        f_n_mode_hz: histogram_mode(&hist),
        f_n_histogram: hist,
        ena_mean_mm: ena_mean,
        ena_std_mm: ena_std,
        peak_max_mm: peaks.iter().copied().reduce(f64::max),
        regression,
        gmm,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub window: TimeWindow,
    pub node_a: NodeSummary,
    pub node_b: NodeSummary,
    /// `|ENA_a − ENA_b| / mean(ENA_a, ENA_b)`.
    pub ena_divergence: Option<f64>,
    pub divergence_threshold: f64,
    pub divergent: bool,
    /// Peaks of time-paired sessions, `[a, b]` in mm.
    pub paired_peaks: Vec<[f64; 2]>,
    pub joint_gmm: Option<GmmFit>,
    pub warnings: Vec<String>,
}

/// Each `a` session matched to the nearest unused `b` session within `tol`.
fn pair_sessions(a: &[&AnalysisRecord], b: &[&AnalysisRecord], tol: i64) -> Vec<[f64; 2]> {
    let mut used = vec![false; b.len()];
    let mut out = Vec::new();
    for ra in a {
        let Some(pa) = ra.peak_mm else { continue };
        let best = b
            .iter()
            .enumerate()
            .filter(|(j, rb)| {
                !used[*j] && rb.peak_mm.is_some() && (rb.t0_ms - ra.t0_ms).abs() <= tol
            })
            .min_by_key(|(_, rb)| (rb.t0_ms - ra.t0_ms).abs());
        if let Some((j, rb)) = best {
            used[j] = true;
            out.push([pa, rb.peak_mm.expect("filtered")]);
        }
    }
    out
}

/// Compares two girders over the sessions that start inside `window`.
/// Missing data lowers the report to warnings rather than failing.
pub fn girder_report(
    records: &[AnalysisRecord],
    node_a: &str,
    node_b: &str,
    window: TimeWindow,
    cfg: &ReportConfig,
) -> ComparisonReport {
    let select = |node: &str| -> Vec<&AnalysisRecord> {
        let mut v: Vec<&AnalysisRecord> = records
            .iter()
            .filter(|r| r.node == node && window.contains(r.t0_ms))
            .collect();
        v.sort_by_key(|r| r.t0_ms);
        v
    };
    let (ra, rb) = (select(node_a), select(node_b));
    let sa = summarise(node_a, &ra, cfg);
    let sb = summarise(node_b, &rb, cfg);
    let mut warnings: Vec<String> = sa.warnings.iter().chain(&sb.warnings).cloned().collect();

    let ena_divergence = match (sa.ena_mean_mm, sb.ena_mean_mm) {
        (Some(a), Some(b)) if a + b != 0.0 => Some((a - b).abs() / ((a + b) / 2.0)),
        _ => {
            warnings.push("ENA comparison unavailable: a node has no analysed sessions".into());
            None
        }
    };
    let oka: Vec<&AnalysisRecord> = ra.iter().copied().filter(|r| r.is_ok()).collect();
    let okb: Vec<&AnalysisRecord> = rb.iter().copied().filter(|r| r.is_ok()).collect();
    let paired = pair_sessions(&oka, &okb, cfg.pair_tolerance_ms);
    let joint = if paired.is_empty() {
        None
    } else {
        let pts: Vec<Vec<f64>> = paired.iter().map(|p| p.to_vec()).collect();
        match gmm_fit(&pts, &cfg.gmm) {
            Ok(f) => Some(f),
            Err(e) => {
                warnings.push(format!("no joint peak mixture ({e})"));
                None
            }
        }
    };
    ComparisonReport {
        window,
        divergent: ena_divergence.is_some_and(|d| d > cfg.divergence_threshold),
        divergence_threshold: cfg.divergence_threshold,
        ena_divergence,
        node_a: sa,
        node_b: sb,
        paired_peaks: paired,
        joint_gmm: joint,
        warnings,
    }
}
