//! One-process reproduction: simulate, run the node against an in-process
//! ingestion server over TCP, fuse the stored session and compare the fused
//! displacement peaks with the simulated truth.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use bridgemon_core::fleetstats::AnalysisRecord;
use bridgemon_core::fusion::{fuse_session, BasisGeometry, FusionConfig, FusionResult, ModeBasis};
use bridgemon_core::nodesim::{
    run_node, LossyTransport, SensorConfig, Session, TcpTransport, TransmissionReport,
    UplinkOptions,
};
use bridgemon_core::simkit::{BeamModel, GroundTruth, Scenario};
use bridgemon_ingest::{
    FusionAnalyzer, IngestConfig, Ingestor, RecordStore, Server, SessionKey, SystemClock,
};
use serde::{Deserialize, Serialize};

use crate::exit::Stage;

/// Absolute and relative peak tolerances of the comparison table.
pub const PEAK_TOL_MM: f64 = 0.1;
pub const PEAK_TOL_REL: f64 = 0.05;

/// Seconds after the last axle leaves the span that still count towards a
/// vehicle's peak.
const WINDOW_TAIL_S: f64 = 1.0;

pub fn basis_for(beam: &BeamModel) -> Result<ModeBasis> {
    ModeBasis::from_geometry(&BasisGeometry::from_beam(beam)).context("building the mode basis")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub vehicle: usize,
    /// Session-relative window, s.
    pub window_s: [f64; 2],
    pub truth_mm: f64,
    pub fused_mm: f64,
    pub abs_err_mm: f64,
    pub rel_err: f64,
    pub within: bool,
}

/// Session-relative windows of the vehicles that fully cross inside the
/// session, paired with their index in `scenario.loads`.
pub fn vehicle_windows(
    scenario: &Scenario,
    session_start_s: f64,
    session_len_s: f64,
) -> Vec<(usize, [f64; 2])> {
    let len = scenario.beam.length_m;
    scenario
        .loads
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let wheelbase: f64 = l.axle_spacings_m.iter().sum();
            let a = l.arrival_time_s - session_start_s;
            let b = a + (len + wheelbase) / l.speed_m_s + WINDOW_TAIL_S;
            (a >= 0.0 && b <= session_len_s).then_some((i, [a, b]))
        })
        .collect()
}

fn window_peak(series: &[f64], fs: f64, offset_s: f64, w: [f64; 2]) -> f64 {
    let idx = |t: f64| (((t + offset_s) * fs).round().max(0.0) as usize).min(series.len());
    series[idx(w[0])..idx(w[1])]
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// Per-vehicle peak comparison of `fused` against the truth output series.
pub fn compare_peaks(
    scenario: &Scenario,
    truth: &GroundTruth,
    session: &Session,
    fused: &FusionResult,
    target_output: usize,
) -> Vec<PeakRow> {
    let start_s = (session.t0_ms - scenario.epoch_ms) as f64 / 1e3;
    let len_s = session.conditioned_len() as f64 / session.fs_hz;
    let truth_u = &truth.displacement_mm[target_output];
    vehicle_windows(scenario, start_s, len_s)
        .into_iter()
        .map(|(vehicle, w)| {
            let t = window_peak(truth_u, truth.fs_hz, start_s, w);
            let f = window_peak(&fused.u_fused, fused.fs_hz, 0.0, w);
            let abs = (f - t).abs();
            let rel = if t > 0.0 { abs / t } else { f64::INFINITY };
            PeakRow {
                vehicle,
                window_s: w,
                truth_mm: t,
                fused_mm: f,
                abs_err_mm: abs,
                rel_err: rel,
                within: abs <= PEAK_TOL_MM && rel <= PEAK_TOL_REL,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session: String,
    pub t0_ms: i64,
    pub upload: TransmissionReport,
    /// Stored samples equal the node's conditioned stream bit for bit.
    pub bit_exact: bool,
    pub analysis: AnalysisRecord,
    pub y_na_mm: f64,
    pub ena_rel_err: Option<f64>,
    pub peaks: Vec<PeakRow>,
    pub max_abs_err_mm: Option<f64>,
    pub all_within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub scenario: String,
    pub node: String,
    pub seed: u64,
    pub loss_rate: f64,
    pub sessions: Vec<SessionOutcome>,
}

impl EndToEndReport {
    /// Short outcome tag: `ok`, or the first analysis error marker.
    pub fn outcome(&self) -> &str {
        if self.sessions.is_empty() {
            return "no-session";
        }
        self.sessions
            .iter()
            .find_map(|s| s.analysis.error.as_deref())
            .unwrap_or("ok")
    }

    pub fn table(&self) -> String {
        let mut out = String::from("vehicle  truth_mm  fused_mm  err_mm  err_%  within\n");
        for s in &self.sessions {
            for p in &s.peaks {
                out.push_str(&format!(
                    "{:>7}  {:>8.3}  {:>8.3}  {:>6.3}  {:>5.1}  {}\n",
                    p.vehicle + 1,
                    p.truth_mm,
                    p.fused_mm,
                    p.abs_err_mm,
                    100.0 * p.rel_err,
                    if p.within { "yes" } else { "NO" }
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EndToEndOptions {
    pub seed: u64,
    pub loss_rate: f64,
    pub fusion: FusionConfig,
}

/// Full artefacts of one run, for callers that need the series.
pub struct EndToEndRun {
    pub report: EndToEndReport,
    pub truth: GroundTruth,
    pub fused: Vec<Option<FusionResult>>,
}

pub fn run_end_to_end(
    scenario: &Scenario,
    sensor: &SensorConfig,
    store_dir: &Path,
    opts: &EndToEndOptions,
) -> Result<EndToEndRun> {
    let basis = basis_for(&scenario.beam).context(Stage::Config)?;
    let store = RecordStore::open(store_dir)
        .context("opening store")
        .context(Stage::Config)?;
    let analyzer = Arc::new(FusionAnalyzer {
        basis: basis.clone(),
        cfg: opts.fusion.clone(),
    });
    let ingestor = Arc::new(
        Ingestor::open(
            store,
            analyzer,
            Arc::new(SystemClock),
            IngestConfig::default(),
        )
        .context("starting ingestor")
        .context(Stage::Config)?,
    );
    let server = Server::start("127.0.0.1:0", Arc::clone(&ingestor))
        .context("starting in-process server")
        .context(Stage::Transport)?;
    let tcp = TcpTransport::new(server.local_addr()).context(Stage::Transport)?;
    let mut link = LossyTransport::new(
        tcp,
        opts.loss_rate,
        opts.loss_rate / 2.0,
        opts.seed ^ 0x5EED,
    );
    let uplink_opts = UplinkOptions::from_config(sensor);
    let run = run_node(sensor, scenario, &mut link, &uplink_opts, opts.seed)
        .context("node emulation")
        .context(Stage::Config)?;
    if !ingestor.wait_idle(Duration::from_secs(120)) {
        return Err(anyhow!("analysis did not finish within 120 s")).context(Stage::Analysis);
    }
    server.shutdown();

    let mut sessions = Vec::new();
    let mut fused = Vec::new();
    for s in &run.sessions {
        let upload = s
            .upload
            .clone()
            .map_err(|e| anyhow!("session {}: {e}", s.session.session_id))
            .context(Stage::Transport)?;
        let key = SessionKey {
            node: s.session.node_id.clone(),
            session: s.session.session_id.clone(),
        };
        let stored = ingestor
            .session(&key)
            .ok_or_else(|| anyhow!("session {key} missing from the store"))
            .context(Stage::Transport)?;
        let analysis = ingestor
            .analysis(&key)
            .ok_or_else(|| anyhow!("session {key} has no analysis row"))
            .context(Stage::Analysis)?;
        let result = fuse_session(&stored, &basis, &opts.fusion).ok();
        let peaks = result
            .as_ref()
            .map(|r| compare_peaks(scenario, &run.truth, &stored, r, opts.fusion.target_output))
            .unwrap_or_default();
        let y_na = scenario.beam.neutral_axis_mm;
        sessions.push(SessionOutcome {
            session: key.session.clone(),
            t0_ms: stored.t0_ms,
            upload,
            bit_exact: stored.conditioned == s.session.conditioned,
            ena_rel_err: analysis.ena_mm.map(|e| (e - y_na).abs() / y_na),
            analysis,
            y_na_mm: y_na,
            max_abs_err_mm: peaks.iter().map(|p| p.abs_err_mm).reduce(f64::max),
            all_within: !peaks.is_empty() && peaks.iter().all(|p| p.within),
            peaks,
        });
        fused.push(result);
    }
    Ok(EndToEndRun {
        report: EndToEndReport {
            scenario: scenario.name.clone(),
            node: sensor.node_id.clone(),
            seed: opts.seed,
            loss_rate: opts.loss_rate,
            sessions,
        },
        truth: run.truth,
        fused,
    })
}
