//! Subcommand definitions and implementations.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use bridgemon_core::fleetstats::{
    girder_report, gmm_inits, ComparisonReport, ReportConfig, TimeWindow,
};
use bridgemon_core::fusion::{fuse_session, scaling_rules, FusionConfig};
use bridgemon_core::nodesim::{
    run_node, LossyTransport, SensorConfig, TcpTransport, TransmissionReport, UplinkError,
    UplinkOptions,
};
use bridgemon_core::powerm::{budget, PowerProfile};
use bridgemon_core::simkit::{GroundTruth, Scenario};
use bridgemon_ingest::{
    export_all, read_analysis, read_store, FusionAnalyzer, IngestConfig, Ingestor, RecordStore,
    Server, SystemClock,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::e2e::{basis_for, run_end_to_end, EndToEndOptions};
use crate::exit::Stage;
use crate::scenarios;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "bridgemon",
    version,
    about = "Event-driven bridge monitoring pipeline: simulate, emulate nodes, ingest, analyse, report"
)]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Increase log detail (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Directory for every file the command writes.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Simulate a scenario and write the ground-truth series (truth.csv, truth.json).
    Simulate(SimulateArgs),
    /// Emulate a node: trigger, acquire, condition, packetize and upload to a server.
    Node(NodeArgs),
    /// Run the TCP ingestion service over a record store.
    Ingestd(IngestdArgs),
    /// Fuse one stored session and write the displacement estimate.
    Analyze(AnalyzeArgs),
    /// Compare two girders over the analysed sessions of a store.
    Report(ReportArgs),
    /// Print the battery and solar budget of a power profile.
    Power(PowerArgs),
    /// Simulate, upload to an in-process server, fuse and compare with the truth.
    EndToEnd(EndToEndArgs),
    /// Dump every table of a store to CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ScenarioArg {
    /// Scenario JSON file, or a bundled name: demo, zero-load, girder-a, girder-b, girder-c.
    #[arg(long, default_value = "demo")]
    pub scenario: String,
}

#[derive(Debug, Args, Serialize)]
pub struct SensorArgs {
    /// Sensor configuration JSON; defaults to the built-in node.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the node id of the sensor configuration.
    #[arg(long)]
    pub node_id: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct FusionArgs {
    /// Fusion configuration JSON.
    #[arg(long)]
    pub fusion: Option<PathBuf>,
    /// Scaling-factor rule: psd-match or reciprocal.
    #[arg(long)]
    pub alpha_rule: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
}

#[derive(Debug, Args, Serialize)]
pub struct NodeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    #[command(flatten)]
    pub sensor: SensorArgs,
    /// Ingestion server address.
    #[arg(long, default_value = "127.0.0.1:9000")]
    pub server: String,
    /// Injected frame loss probability; ACKs are lost at half this rate.
    #[arg(long, default_value_t = 0.0)]
    pub loss: f64,
    /// Give up on a packet after this many sends (default: retry forever).
    #[arg(long)]
    pub max_sends: Option<u32>,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestdArgs {
    #[arg(long, default_value = "0.0.0.0:9000")]
    pub bind: String,
    /// Store directory: one sub-directory per table holding rows.jsonl.
    #[arg(long)]
    pub store: PathBuf,
    /// Scenario whose beam defines the gauge basis.
    #[arg(long, default_value = "demo")]
    pub scenario: String,
    #[command(flatten)]
    pub fusion: FusionArgs,
    /// Hours without packets after which an incomplete session is stale.
    #[arg(long, default_value_t = 24.0)]
    pub stale_hours: f64,
    /// Exit once this many sessions have been analysed (runs forever if unset).
    #[arg(long)]
    pub exit_after_sessions: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Session id, e.g. janet-01-1626850801500.
    #[arg(long)]
    pub session: String,
    /// Node id, when session ids are not unique across nodes.
    #[arg(long)]
    pub node: Option<String>,
    /// Scenario whose beam defines the gauge basis.
    #[arg(long, default_value = "demo")]
    pub scenario: String,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub node_a: String,
    #[arg(long)]
    pub node_b: String,
    /// Session start window `START..END` in epoch ms; either side may be empty.
    #[arg(long, value_parser = parse_window, default_value = "..")]
    #[serde(skip)]
    pub window: TimeWindow,
    /// Relative ENA gap that flags divergence.
    #[arg(long, default_value_t = 0.10)]
    pub threshold: f64,
    /// Mixture initialiser: quantile or random.
    #[arg(long, default_value = "quantile")]
    pub gmm_init: String,
    /// Mixture components.
    #[arg(long, default_value_t = 2)]
    pub gmm_k: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PowerArgs {
    /// PowerProfile JSON; omitted fields take the reference defaults.
    #[arg(long)]
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EndToEndArgs {
    #[command(flatten)]
    pub scenario: ScenarioArg,
    #[command(flatten)]
    pub sensor: SensorArgs,
    #[command(flatten)]
    pub fusion: FusionArgs,
    /// Injected frame loss probability; ACKs are lost at half this rate.
    #[arg(long, default_value_t = 0.0)]
    pub loss: f64,
    /// Store to ingest into. Defaults to a fresh `<out>/store`, replacing an old one.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Independent runs, each shifted by one hour with offset seeds.
    #[arg(long, default_value_t = 1)]
    pub repeat: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: PathBuf,
}

pub fn parse_window(s: &str) -> Result<TimeWindow, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("window {s:?} must look like START..END"))?;
    let side = |v: &str| -> Result<Option<i64>, String> {
        if v.trim().is_empty() {
            Ok(None)
        } else {
            v.trim()
                .parse()
                .map(Some)
                .map_err(|e| format!("window bound {v:?}: {e}"))
        }
    };
    let w = TimeWindow {
        start_ms: side(a)?,
        end_ms: side(b)?,
    };
    if let (Some(a), Some(b)) = (w.start_ms, w.end_ms) {
        if a >= b {
            return Err(format!("window start {a} is not before end {b}"));
        }
    }
    Ok(w)
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{what} {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .context(Stage::Config)
}

fn sensor_config(a: &SensorArgs) -> Result<SensorConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SensorConfig::from_json_str(&text)
                .with_context(|| format!("sensor config {}", p.display()))?
        }
        None => SensorConfig::default(),
    };
    if let Some(id) = &a.node_id {
        cfg.node_id = id.clone();
    }
    cfg.validate().context("sensor config")?;
    Ok(cfg)
}

fn fusion_config(a: &FusionArgs) -> Result<FusionConfig> {
    let mut cfg: FusionConfig = match &a.fusion {
        Some(p) => read_json(p, "fusion config")?,
        None => FusionConfig::default(),
    };
    if let Some(rule) = &a.alpha_rule {
        cfg.scaling_rule = rule.clone();
    }
    scaling_rules().resolve(&cfg.scaling_rule)?;
    Ok(cfg)
}

/// Logs the fully resolved configuration and saves it beside the outputs.
fn log_resolved<T: Serialize>(out: &Path, cli: &Cli, resolved: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Resolved<'a, T> {
        cli: &'a Cli,
        resolved: &'a T,
    }
    let r = Resolved { cli, resolved };
    log::info!("resolved config: {}", serde_json::to_string(&r)?);
    write_json(&out.join("config.json"), &r)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Node(a) => node(cli, a),
        Command::Ingestd(a) => ingestd(cli, a),
        Command::Analyze(a) => analyze(cli, a),
        Command::Report(a) => report(cli, a),
        Command::Power(a) => power(cli, a),
        Command::EndToEnd(a) => end_to_end(cli, a),
        Command::Export(a) => export(cli, a),
    }
}

fn truth_csv(truth: &GroundTruth, scenario: &Scenario) -> String {
    let mut head = vec!["t_s".to_string()];
    head.extend(
        scenario
            .beam
            .output_positions_m
            .iter()
            .map(|x| format!("u_mm@{x}")),
    );
    head.extend(
        scenario
            .beam
            .gauge_positions_m
            .iter()
            .map(|x| format!("strain_ue@{x}")),
    );
    head.extend(
        scenario
            .beam
            .accel_positions_m
            .iter()
            .map(|x| format!("accel_g@{x}")),
    );
    let mut s = head.join(",");
    s.push('\n');
    let cols: Vec<&Vec<f64>> = truth
        .displacement_mm
        .iter()
        .chain(&truth.strain_ue)
        .chain(&truth.accel_g)
        .collect();
    for i in 0..truth.len() {
        s.push_str(&format!("{:.3}", i as f64 / truth.fs_hz));
        for c in &cols {
            s.push(',');
            s.push_str(&c[i].to_string());
        }
        s.push('\n');
    }
    s
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let scenario = scenarios::load(&a.scenario.scenario)?;
    ensure_out(&cli.out)?;
    log_resolved(&cli.out, cli, &scenario)?;
    let truth = scenario
        .simulate()
        .context("simulation")
        .context(Stage::Config)?;
    fs::write(cli.out.join("truth.csv"), truth_csv(&truth, &scenario))?;
    let peak = |v: &Vec<f64>| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    write_json(
        &cli.out.join("truth.json"),
        &serde_json::json!({
            "scenario": scenario.name,
            "fs_hz": truth.fs_hz,
            "samples": truth.len(),
            "duration_s": truth.duration_s(),
            "peak_displacement_mm": truth.displacement_mm.iter().map(peak).collect::<Vec<_>>(),
            "peak_strain_ue": truth.strain_ue.iter().map(peak).collect::<Vec<_>>(),
            "peak_accel_g": truth.accel_g.iter().map(peak).collect::<Vec<_>>(),
        }),
    )?;
    println!(
        "{} samples at {} Hz written to {}",
        truth.len(),
        truth.fs_hz,
        cli.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct NodeSessionReport {
    session: String,
    trigger_ms: i64,
    packets: usize,
    report: TransmissionReport,
    error: Option<String>,
}

fn node(cli: &Cli, a: &NodeArgs) -> Result<()> {
    let scenario = scenarios::load(&a.scenario.scenario)?;
    let cfg = sensor_config(&a.sensor).context(Stage::Config)?;
    if !(0.0..1.0).contains(&a.loss) {
        return Err(anyhow!("--loss must lie in [0, 1)")).context(Stage::Config);
    }
    let opts = UplinkOptions {
        max_sends_per_packet: a.max_sends,
        ..UplinkOptions::from_config(&cfg)
    };
    ensure_out(&cli.out)?;
    log_resolved(
        &cli.out,
        cli,
        &serde_json::json!({"sensor": cfg, "uplink": opts}),
    )?;
    let tcp = TcpTransport::new(a.server.as_str())
        .with_context(|| format!("resolving {}", a.server))
        .context(Stage::Config)?;
    let mut link = LossyTransport::new(tcp, a.loss, a.loss / 2.0, cli.seed ^ 0x5EED);
    let run = run_node(&cfg, &scenario, &mut link, &opts, cli.seed).context(Stage::Config)?;
    let reports: Vec<NodeSessionReport> = run
        .sessions
        .iter()
        .map(|s| {
            let (report, error) = match &s.upload {
                Ok(r) => (r.clone(), None),
                Err(e) => (e.report().clone(), Some(e.to_string())),
            };
            NodeSessionReport {
                session: s.session.session_id.clone(),
                trigger_ms: s.event.t_ms,
                packets: s.packets.len(),
                report,
                error,
            }
        })
        .collect();
    write_json(&cli.out.join("node_report.json"), &reports)?;
    for r in &reports {
        println!(
            "{}: {} packets, {} sends, {} resends, {} connect attempts{}",
            r.session,
            r.packets,
            r.report.sends,
            r.report.resends,
            r.report.connect_attempts,
            r.error
                .as_deref()
                .map(|e| format!(" ({e})"))
                .unwrap_or_default()
        );
    }
    if run.sessions.is_empty() {
        println!("no trigger fired");
    }
    if let Some(failed) = run.sessions.iter().find_map(|s| s.upload.as_ref().err()) {
        let what = match failed {
            UplinkError::Unreachable(_) => "server unreachable",
            UplinkError::RetryCeiling { .. } => "retry ceiling reached",
        };
        return Err(anyhow!("{what}: {failed}")).context(Stage::Transport);
    }
    Ok(())
}

fn ingestd(cli: &Cli, a: &IngestdArgs) -> Result<()> {
    let scenario = scenarios::load(&a.scenario)?;
    let fusion = fusion_config(&a.fusion).context(Stage::Config)?;
    if !(a.stale_hours > 0.0) {
        return Err(anyhow!("--stale-hours must be positive")).context(Stage::Config);
    }
    let cfg = IngestConfig {
        stale_after_ms: (a.stale_hours * 3.6e6) as i64,
    };
    ensure_out(&cli.out)?;
    log_resolved(
        &cli.out,
        cli,
        &serde_json::json!({"ingest": cfg, "fusion": fusion}),
    )?;
    let store = RecordStore::open(&a.store)
        .context("opening store")
        .context(Stage::Config)?;
    let analyzer = Arc::new(FusionAnalyzer {
        basis: basis_for(&scenario.beam).context(Stage::Config)?,
        cfg: fusion,
    });
    let ing = Arc::new(
        Ingestor::open(store, analyzer, Arc::new(SystemClock), cfg).context(Stage::Config)?,
    );
    let server = Server::start(a.bind.as_str(), Arc::clone(&ing)).context(Stage::Transport)?;
    println!(
        "listening on {} (store {})",
        server.local_addr(),
        a.store.display()
    );
    let _ = std::io::stdout().flush();
    match a.exit_after_sessions {
        Some(n) => {
            while ing.sessions().iter().filter(|s| s.analyzed).count() < n {
                std::thread::sleep(Duration::from_millis(50));
            }
            ing.wait_idle(Duration::from_secs(60));
            server.shutdown();
        }
        None => server.join(),
    }
    for s in ing.sessions() {
        println!(
            "{}/{}: {}/{} packets{}{}{}",
            s.node,
            s.session,
            s.received,
            s.expected.map_or("?".into(), |e| e.to_string()),
            if s.analyzed { ", analysed" } else { "" },
            if s.stale { ", stale" } else { "" },
            s.quarantined
                .map(|q| format!(", quarantined: {q}"))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<()> {
    let scenario = scenarios::load(&a.scenario)?;
    let fusion = fusion_config(&a.fusion).context(Stage::Config)?;
    ensure_out(&cli.out)?;
    log_resolved(&cli.out, cli, &fusion)?;
    let store = RecordStore::open(&a.store)
        .context("opening store")
        .context(Stage::Config)?;
    let sessions = read_store(&store).context(Stage::Config)?;
    let mut hits = sessions
        .iter()
        .filter(|(k, _)| k.session == a.session && a.node.as_ref().is_none_or(|n| *n == k.node));
    let (key, stored) = hits
        .next()
        .ok_or_else(|| anyhow!("no session {:?} in {}", a.session, a.store.display()))
        .context(Stage::Config)?;
    if hits.next().is_some() {
        return Err(anyhow!(
            "session id {:?} exists for several nodes; pass --node",
            a.session
        ))
        .context(Stage::Config);
    }
    let session = stored
        .to_session()
        .ok_or_else(|| {
            anyhow!(
                "session {key} is incomplete ({} packets stored)",
                stored.data.len()
            )
        })
        .context(Stage::Analysis)?;
    let basis = basis_for(&scenario.beam).context(Stage::Config)?;
    let result = match fuse_session(&session, &basis, &fusion) {
        Ok(r) => r,
        Err(e) => {
            let marker = bridgemon_core::fleetstats::error_marker(&e);
            write_json(
                &cli.out.join("analysis.json"),
                &serde_json::json!({"session": key, "error": marker, "detail": e.to_string()}),
            )?;
            println!("{key}: {marker}");
            return Err(anyhow!(e)).context(Stage::Analysis);
        }
    };
    write_json(&cli.out.join("analysis.json"), &result)?;
    let mut csv = String::from("t_s,u_fused_mm,u_acc_mm,u_strain_shape\n");
    for i in 0..result.u_fused.len() {
        csv.push_str(&format!(
            "{:.3},{},{},{}\n",
            i as f64 / result.fs_hz,
            result.u_fused[i],
            result.u_acc[i],
            result.u_strain_shape[i]
        ));
    }
    fs::write(cli.out.join("u_fused.csv"), csv)?;
    println!(
        "{key}: f_n {:.3} Hz, alpha {:.6e} ({}), ENA {:.1} mm, peak {:.3} mm",
        result.f_n_hz,
        result.alpha,
        result.scaling_rule,
        result.ena_mm,
        result.peak_mm()
    );
    Ok(())
}

fn write_report_files(out: &Path, r: &ComparisonReport) -> Result<()> {
    write_json(&out.join("report.json"), r)?;
    for n in [&r.node_a, &r.node_b] {
        let mut dat = String::from("# f_n_hz count\n");
        for b in &n.f_n_histogram {
            dat.push_str(&format!("{:.2} {}\n", b.center_hz, b.count));
        }
        fs::write(out.join(format!("{}_fn_hist.dat", n.node)), dat)?;
    }
    let mut pairs = String::from("# peak_a_mm peak_b_mm\n");
    for p in &r.paired_peaks {
        pairs.push_str(&format!("{} {}\n", p[0], p[1]));
    }
    fs::write(out.join("paired_peaks.dat"), pairs)?;
    Ok(())
}

fn report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    gmm_inits().resolve(&a.gmm_init).context(Stage::Config)?;
    if !(a.threshold > 0.0) || a.gmm_k == 0 {
        return Err(anyhow!(
            "--threshold must be positive and --gmm-k at least 1"
        ))
        .context(Stage::Config);
    }
    let mut cfg = ReportConfig {
        divergence_threshold: a.threshold,
        ..ReportConfig::default()
    };
    cfg.gmm.init = a.gmm_init.clone();
    cfg.gmm.k = a.gmm_k;
    cfg.gmm.seed = cli.seed;
    ensure_out(&cli.out)?;
    log_resolved(
        &cli.out,
        cli,
        &serde_json::json!({"report": cfg, "window": a.window}),
    )?;
    let store = RecordStore::open(&a.store)
        .context("opening store")
        .context(Stage::Config)?;
    let records = read_analysis(&store).context(Stage::Config)?;
    let mut rows = String::from("node,session,t0_ms,temperature_c,f_n_hz,ena_mm,peak_mm,error\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records
        .iter()
        .filter(|r| (r.node == a.node_a || r.node == a.node_b) && a.window.contains(r.t0_ms))
    {
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.node,
            r.session,
            r.t0_ms,
            r.temperature_c,
            opt(r.f_n_hz),
            opt(r.ena_mm),
            opt(r.peak_mm),
            r.error.as_deref().unwrap_or("")
        ));
    }
    fs::write(cli.out.join("sessions.csv"), rows)?;
    let r = girder_report(&records, &a.node_a, &a.node_b, a.window, &cfg);
    write_report_files(&cli.out, &r)?;
    for n in [&r.node_a, &r.node_b] {
        println!(
            "{}: {} sessions ({} analysed), f_n mode {}, ENA {}",
            n.node,
            n.sessions,
            n.analyzed,
            n.f_n_mode_hz.map_or("-".into(), |f| format!("{f:.2} Hz")),
            match (n.ena_mean_mm, n.ena_std_mm) {
                (Some(m), Some(s)) => format!("{m:.1} ± {s:.1} mm"),
                _ => "-".into(),
            }
        );
    }
    match r.ena_divergence {
        Some(d) => println!(
            "ENA divergence {:.1} % (threshold {:.1} %): {}",
            100.0 * d,
            100.0 * r.divergence_threshold,
            if r.divergent {
                "DIVERGENT"
            } else {
                "consistent"
            }
        ),
        None => println!("ENA divergence unavailable"),
    }
    for w in &r.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn power(cli: &Cli, a: &PowerArgs) -> Result<()> {
    let profile = match &a.profile {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            PowerProfile::from_json_str(&text)
                .with_context(|| format!("power profile {}", p.display()))?
        }
        None => PowerProfile::default(),
    };
    ensure_out(&cli.out)?;
    log_resolved(&cli.out, cli, &profile)?;
    let b = budget(&profile).context(Stage::Config)?;
    write_json(&cli.out.join("power.json"), &b)?;
    println!(
        "duty fraction {:.5} ({} events x {} s per day)",
        b.duty, profile.events_per_day, profile.sensing_time_s
    );
    println!(
        "sleep ledger total {:.5} mA (profile {:.3} mA, gap {:.2} %)",
        b.ledger_total_ma,
        profile.i_inactive_ma,
        100.0 * b.ledger_mismatch
    );
    println!(
        "{:<26} {:>10} {:>11} {:>8} {:>14}",
        "reading", "I_avg mA", "battery h", "days", "sun h/day"
    );
    for l in std::iter::once(&b.computed).chain(b.stated.as_ref()) {
        println!(
            "{:<26} {:>10.4} {:>11.2} {:>8.2} {:>14.3}",
            l.label, l.i_avg_ma, l.battery_hours, l.battery_days, l.solar_breakeven_hours
        );
    }
    if let Some(ratio) = b.stated_to_computed {
        println!("stated I_avg is {ratio:.1}x the duty-weighted value; both readings are kept");
    }
    Ok(())
}

fn end_to_end(cli: &Cli, a: &EndToEndArgs) -> Result<()> {
    let base = scenarios::load(&a.scenario.scenario)?;
    let sensor = sensor_config(&a.sensor).context(Stage::Config)?;
    let fusion = fusion_config(&a.fusion).context(Stage::Config)?;
    if !(0.0..1.0).contains(&a.loss) || a.repeat == 0 {
        return Err(anyhow!(
            "--loss must lie in [0, 1) and --repeat be at least 1"
        ))
        .context(Stage::Config);
    }
    ensure_out(&cli.out)?;
    log_resolved(
        &cli.out,
        cli,
        &serde_json::json!({"scenario": base, "sensor": sensor, "fusion": fusion}),
    )?;
    let store = match &a.store {
        Some(s) => s.clone(),
        None => {
            let s = cli.out.join("store");
            if s.exists() {
                fs::remove_dir_all(&s).with_context(|| format!("clearing {}", s.display()))?;
            }
            s
        }
    };
    let mut reports = Vec::new();
    let mut table = String::new();
    for i in 0..a.repeat {
        let scenario = scenarios::variant(&base, i);
        let opts = EndToEndOptions {
            seed: cli.seed.wrapping_add(i),
            loss_rate: a.loss,
            fusion: fusion.clone(),
        };
        let run = run_end_to_end(&scenario, &sensor, &store, &opts)?;
        for (s, fused) in run.report.sessions.iter().zip(&run.fused) {
            let Some(f) = fused else { continue };
            let start =
                ((s.t0_ms - scenario.epoch_ms) as f64 * run.truth.fs_hz / 1e3).round() as usize;
            let step = (run.truth.fs_hz / f.fs_hz).round() as usize;
            let mut csv = String::from("t_s,truth_mm,fused_mm,acc_mm\n");
            for (k, u) in f.u_fused.iter().enumerate() {
                let truth = run.truth.displacement_mm[fusion.target_output]
                    .get(start + k * step)
                    .copied()
                    .unwrap_or(f64::NAN);
                csv.push_str(&format!(
                    "{:.2},{},{},{}\n",
                    k as f64 / f.fs_hz,
                    truth,
                    u,
                    f.u_acc[k]
                ));
            }
            fs::write(cli.out.join(format!("u_fused_{}.csv", s.session)), csv)?;
        }
        for s in &run.report.sessions {
            table.push_str(&format!(
                "session {} ({} sends, {} resends{}): f_n {} Hz, ENA {} mm (y_na {} mm)\n",
                s.session,
                s.upload.sends,
                s.upload.resends,
                if s.bit_exact {
                    ", bit-exact"
                } else {
                    ", STORED DATA DIFFERS"
                },
                s.analysis.f_n_hz.map_or("-".into(), |f| format!("{f:.3}")),
                s.analysis.ena_mm.map_or("-".into(), |e| format!("{e:.1}")),
                s.y_na_mm
            ));
        }
        table.push_str(&run.report.table());
        reports.push(run.report);
    }
    fs::write(cli.out.join("e2e_table.txt"), &table)?;
    write_json(&cli.out.join("e2e_report.json"), &reports)?;
    print!("{table}");
    let bad: Vec<String> = reports
        .iter()
        .filter(|r| r.outcome() != "ok")
        .map(|r| format!("{}: {}", r.scenario, r.outcome()))
        .collect();
    if !bad.is_empty() {
        println!("outcome: {}", bad.join("; "));
        return Err(anyhow!("analysis outcome {}", bad.join("; "))).context(Stage::Analysis);
    }
    Ok(())
}

fn export(cli: &Cli, a: &ExportArgs) -> Result<()> {
    ensure_out(&cli.out)?;
    log_resolved(&cli.out, cli, &serde_json::json!({}))?;
    if !a.store.is_dir() {
        return Err(anyhow!("store {} does not exist", a.store.display())).context(Stage::Config);
    }
    let store = RecordStore::open(&a.store).context(Stage::Config)?;
    for p in export_all(&store, &cli.out).context(Stage::Config)? {
        println!("{}", p.display());
    }
    Ok(())
}
