//! Acceptance suite: one PASS/FAIL line per criterion, each timed against
//! its runtime budget. Exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bridgemon_cli::e2e::{basis_for, run_end_to_end, EndToEndOptions, EndToEndRun};
use bridgemon_cli::scenarios;
use bridgemon_core::dsp::{
    accel_to_disp, fir_lowpass_design, welch_psd, WelchConfig, DEFAULT_CUTOFF_HZ, DEFAULT_ORDER,
    MM_PER_G,
};
use bridgemon_core::fleetstats::{
    girder_report, gmm_fit_1d, linfit, AnalysisRecord, GmmConfig, ReportConfig, TimeWindow,
};
use bridgemon_core::fusion::FusionConfig;
use bridgemon_core::nodesim::{
    depacketize, eds_combine, latch_step, run_node, run_trigger_loop, uplink, EdsState,
    LoopbackTransport, SensorConfig, UplinkOptions, WatchdogClock,
};
use bridgemon_core::powerm::{avg_current, battery_life, budget, solar_breakeven, PowerProfile};
use bridgemon_core::wire::{
    decode_packet, encode_packet, hex_frame, quantize, Packet, SessionState, TriggerCause,
};
use bridgemon_ingest::{
    FaultPlan, FixedClock, FusionAnalyzer, IngestConfig, Ingestor, RecordStore,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;

/// Name, check, and runtime budget in seconds.
type Criterion = (&'static str, fn() -> Check, u64);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn sensor() -> SensorConfig {
    SensorConfig {
        timer_schedule: vec![],
        ..SensorConfig::default()
    }
}

fn end_to_end(
    scenario: &str,
    variant: u64,
    seed: u64,
    loss: f64,
    node: &str,
    store: &Path,
) -> Result<EndToEndRun, String> {
    let s = scenarios::variant(
        &scenarios::builtin(scenario).ok_or("unknown scenario")?,
        variant,
    );
    let sensor = SensorConfig {
        node_id: node.into(),
        ..sensor()
    };
    let opts = EndToEndOptions {
        seed,
        loss_rate: loss,
        fusion: FusionConfig::default(),
    };
    run_end_to_end(&s, &sensor, store, &opts).map_err(|e| format!("{e:#}"))
}

fn random_packet(rng: &mut ChaCha8Rng) -> Packet {
    let width = rng.random_range(1..8);
    let n = rng.random_range(1..16);
    let total = rng.random_range(1..500);
    let seq = rng.random_range(0..total);
    let last = seq + 1 == total;
    let scale = 10f64.powi(rng.random_range(-3..7));
    let t0 = rng.random_range(0..4_000_000_000_000i64);
    Packet {
        db: "CHEONGDAM1_data".into(),
        node: format!("node-{}", rng.random_range(0..100)),
        session: format!("s-{t0}"),
        seq,
        total,
        last,
        n,
        pad: if last { rng.random_range(0..n) } else { 0 },
        t0_ms: t0,
        fs: [100.0, 1000.0, 12.5][rng.random_range(0..3)],
        ch: (0..width).map(|i| format!("c{i}")).collect(),
        data: (0..n)
            .map(|_| {
                (0..width)
                    .map(|_| quantize(rng.random_range(-1.0..1.0) * scale))
                    .collect()
            })
            .collect(),
        state: (seq == 0 && rng.random_bool(0.5)).then(|| SessionState {
            battery_v: quantize(rng.random_range(3.0..4.2)),
            cause: if rng.random_bool(0.5) {
                TriggerCause::Timer
            } else {
                TriggerCause::Vibration
            },
            solar_ma: quantize(rng.random_range(0.0..600.0)),
            temp_c: quantize(rng.random_range(-20.0..50.0)),
        }),
    }
}

fn protocol_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let p = random_packet(&mut rng);
        let frame = encode_packet(&p);
        let back = decode_packet(&frame).map_err(|e| format!("packet {i}: {e}"))?;
        ensure!(back == p, "packet {i} changed in a round trip");
        ensure!(
            encode_packet(&back) == frame,
            "packet {i} re-encodes differently"
        );
    }
    ensure!(
        hex_frame(b"CAU") == b"434155\r\n",
        "CAU framed as {:?}",
        String::from_utf8_lossy(&hex_frame(b"CAU"))
    );
    Ok("1000 packets round-trip, CAU -> 434155".into())
}

fn open_ingestor(dir: &Path, fault: Option<u64>) -> Arc<Ingestor> {
    let ing = Ingestor::open(
        RecordStore::open(dir).unwrap(),
        Arc::new(FusionAnalyzer {
            basis: basis_for(&Default::default()).unwrap(),
            cfg: FusionConfig::default(),
        }),
        Arc::new(FixedClock(1_626_850_900_000)),
        IngestConfig::default(),
    )
    .unwrap();
    if fault.is_some() {
        ing.set_fault(FaultPlan {
            fail_after_bytes: fault,
        });
    }
    Arc::new(ing)
}

/// Session and packets of the demo scenario, collected through a store.
fn demo_packets(dir: &Path) -> (bridgemon_core::nodesim::Session, Vec<Packet>, Arc<Ingestor>) {
    let ing = open_ingestor(dir, None);
    let mut link = LoopbackTransport::new(Arc::clone(&ing));
    let cfg = sensor();
    let run = run_node(
        &cfg,
        &scenarios::builtin("demo").unwrap(),
        &mut link,
        &UplinkOptions::from_config(&cfg),
        1,
    )
    .unwrap();
    let s = run.sessions.into_iter().next().expect("one session");
    s.upload.expect("lossless upload");
    (s.session, s.packets, ing)
}

fn packetization() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let (session, packets, ing) = demo_packets(dir.path());
    ensure!(
        session.conditioned.len() == 6,
        "{} channels",
        session.conditioned.len()
    );
    ensure!(
        session.fs_hz == 100.0 && session.conditioned_len() == 3000,
        "{} samples at {} Hz",
        session.conditioned_len(),
        session.fs_hz
    );
    ensure!(packets.len() == 375, "{} packets", packets.len());
    ensure!(
        packets.iter().all(|p| p.n == 8 && p.pad == 0),
        "packet of other than 8 rows"
    );
    ensure!(
        depacketize(&packets).map_err(|e| e.to_string())? == session.conditioned,
        "depacketize differs"
    );
    ensure!(
        ing.wait_idle(Duration::from_secs(10)),
        "analysis did not finish"
    );
    let key = bridgemon_ingest::SessionKey {
        node: session.node_id.clone(),
        session: session.session_id.clone(),
    };
    let stored = ing.session(&key).ok_or("session not stored")?;
    ensure!(
        stored.conditioned == session.conditioned,
        "stored stream differs from the node's"
    );
    Ok("375 packets x 8 samples, server reassembly bit-exact".into())
}

fn lossy_delivery() -> Check {
    let mut detail = Vec::new();
    for (i, loss) in [0.1, 0.3, 0.5].into_iter().enumerate() {
        let dir = tempfile::tempdir().unwrap();
        let run = end_to_end("demo", 0, 40 + i as u64, loss, "janet-01", dir.path())?;
        let s = run.report.sessions.first().ok_or("no session")?;
        ensure!(s.bit_exact, "loss {loss}: stored data differs");
        ensure!(
            s.upload.acked == 375 && s.upload.resends > 0,
            "loss {loss}: {:?}",
            s.upload
        );
        let store = RecordStore::open(dir.path()).map_err(|e| e.to_string())?;
        let (data, info) = (
            store.rows("CHEONGDAM1_data").len(),
            store.rows("CHEONGDAM1_info").len(),
        );
        ensure!(
            data == 375 && info == 2,
            "loss {loss}: {data} data rows, {info} info rows"
        );
        detail.push(format!("{loss}: {} resends", s.upload.resends));
    }
    Ok(format!("exactly-once storage ({})", detail.join(", ")))
}

fn eds_logic() -> Check {
    for (vib, rtc_n, want) in [
        (false, true, false),
        (true, true, true),
        (false, false, true),
        (true, false, true),
    ] {
        ensure!(
            eds_combine(vib, rtc_n) == want,
            "eds_combine({vib}, {rtc_n}) != {want}"
        );
    }
    let idle = EdsState::default();
    let on = latch_step(idle, true);
    ensure!(
        on.latch_out && on.mcu_on,
        "transparent latch did not follow D"
    );
    let held = EdsState {
        latch_enable: false,
        ..on
    };
    for d in [false, true, false, false] {
        let s = latch_step(held, d);
        ensure!(s.latch_out && s.mcu_on, "latch released while LE low");
    }
    let released = latch_step(
        EdsState {
            latch_enable: true,
            ..held
        },
        false,
    );
    ensure!(
        !released.latch_out && !released.mcu_on,
        "latch did not release with LE high and D low"
    );
    let idle_low = latch_step(
        EdsState {
            latch_enable: false,
            ..idle
        },
        true,
    );
    ensure!(!idle_low.mcu_on, "trigger accepted while LE low");

    let cfg = sensor();
    let clock = WatchdogClock {
        start_ms: 1_626_850_000_000,
        period_ms: 10.0,
    };
    let mut v = vec![0.0; 30_000];
    v[10] = 300.0;
    for i in (100..22_900).step_by(97) {
        v[i] = 400.0;
    }
    let ev = run_trigger_loop(&cfg, &v, &clock);
    ensure!(
        ev.len() == 1,
        "{} power-ups while the latch was held",
        ev.len()
    );
    v[23_100] = 300.0;
    ensure!(
        run_trigger_loop(&cfg, &v, &clock).len() == 2,
        "circuit did not re-arm"
    );
    Ok("truth table, hold/release, no trigger while LE low".into())
}

fn fusion_accuracy() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let run = end_to_end("demo", 0, 1, 0.0, "janet-01", dir.path())?;
    let s = run.report.sessions.first().ok_or("no session")?;
    ensure!(
        s.analysis.is_ok(),
        "analysis failed: {:?}",
        s.analysis.error
    );
    let truth: Vec<f64> = s.peaks.iter().map(|p| p.truth_mm).collect();
    for (t, want) in truth.iter().zip([2.08, 1.01, 1.26]) {
        ensure!((t - want).abs() < 0.01, "truth peaks {truth:?}");
    }
    ensure!(
        s.peaks.len() == 3,
        "{} vehicles in the session",
        s.peaks.len()
    );
    for p in &s.peaks {
        ensure!(
            p.abs_err_mm <= 0.1 && p.rel_err <= 0.05,
            "vehicle {}: truth {:.3} fused {:.3}",
            p.vehicle + 1,
            p.truth_mm,
            p.fused_mm
        );
    }
    let f = s.analysis.f_n_hz.ok_or("no f_n")?;
    ensure!((f - 4.78).abs() <= 0.05, "f_n {f}");
    let errs: Vec<String> = s
        .peaks
        .iter()
        .map(|p| format!("{:.3}", p.abs_err_mm))
        .collect();
    Ok(format!(
        "peak errors [{}] mm, f_n {f:.3} Hz",
        errs.join(", ")
    ))
}

fn ena_recovery() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut records: Vec<AnalysisRecord> = Vec::new();
    for (scenario, node) in [
        ("girder-a", "g-a"),
        ("girder-b", "g-b"),
        ("girder-c", "g-c"),
    ] {
        for i in 0..4 {
            let run = end_to_end(scenario, i, 100 + i, 0.0, node, dir.path())?;
            for s in run.report.sessions {
                if scenario == "girder-a" {
                    let e = s
                        .ena_rel_err
                        .ok_or_else(|| format!("{node}: {:?}", s.analysis.error))?;
                    ensure!(
                        e <= 0.02,
                        "{node} session {}: ENA error {:.2} %",
                        s.session,
                        100.0 * e
                    );
                }
                records.push(s.analysis);
            }
        }
    }
    let cfg = ReportConfig::default();
    let ab = girder_report(&records, "g-a", "g-b", TimeWindow::default(), &cfg);
    let ac = girder_report(&records, "g-a", "g-c", TimeWindow::default(), &cfg);
    let dab = ab.ena_divergence.ok_or("no a/b divergence")?;
    let dac = ac.ena_divergence.ok_or("no a/c divergence")?;
    ensure!(
        dab < 0.05 && !ab.divergent,
        "equal girders diverge by {:.1} %",
        100.0 * dab
    );
    ensure!(
        ac.divergent,
        "asymmetric girders not flagged ({:.1} %)",
        100.0 * dac
    );
    Ok(format!(
        "ENA {:.0} mm, equal girders {:.2} %, asymmetric {:.1} % flagged",
        ab.node_a.ena_mean_mm.unwrap_or(f64::NAN),
        100.0 * dab,
        100.0 * dac
    ))
}

fn power_math() -> Check {
    let p = PowerProfile::default();
    let life = battery_life(&p, 214.02).map_err(|e| e.to_string())?;
    ensure!((life - 38.7).abs() <= 0.1, "battery life {life}");
    let sun = solar_breakeven(&p, 214.02);
    ensure!((sun - 9.34).abs() <= 0.05, "solar break-even {sun}");
    let i = avg_current(&p).map_err(|e| e.to_string())?;
    ensure!((i - 8.92).abs() <= 0.01, "duty-weighted current {i}");
    let b = budget(&p).map_err(|e| e.to_string())?;
    let stated = b.stated.as_ref().ok_or("stated reading missing")?;
    ensure!(
        stated.i_avg_ma == 214.02 && b.stated_to_computed.is_some_and(|r| r > 20.0),
        "discrepancy not reported"
    );
    Ok(format!(
        "{life:.2} h, {sun:.3} h sun, {i:.4} mA vs stated 214.02 mA"
    ))
}

fn regression() -> Check {
    let x: Vec<f64> = (0..500).map(|i| -10.0 + 45.0 * i as f64 / 499.0).collect();
    let y: Vec<f64> = x.iter().map(|t| -0.0021 * t + 4.8420).collect();
    let f = linfit(&x, &y).map_err(|e| e.to_string())?;
    ensure!(
        (f.slope + 0.0021).abs() <= 1e-9 && (f.intercept - 4.8420).abs() <= 1e-9,
        "{f:?}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let yn: Vec<f64> = y.iter().map(|v| v + noise.sample(&mut rng)).collect();
    let g = linfit(&x, &yn).map_err(|e| e.to_string())?;
    ensure!(
        (g.slope + 0.0021).abs() <= 0.0005,
        "noisy slope {}",
        g.slope
    );
    Ok(format!("noisy slope {:.6}", g.slope))
}

fn gmm() -> Check {
    let (w, m, sd) = ([0.35, 0.65], [1.2, 2.0], [0.12, 0.2]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let comps = [
        Normal::new(m[0], sd[0]).unwrap(),
        Normal::new(m[1], sd[1]).unwrap(),
    ];
    let x: Vec<f64> = (0..10_000)
        .map(|_| comps[usize::from(!rng.random_bool(w[0]))].sample(&mut rng))
        .collect();
    let fit = gmm_fit_1d(&x, &GmmConfig::default()).map_err(|e| e.to_string())?;
    for k in 0..2 {
        ensure!(
            (fit.means[k][0] - m[k]).abs() <= 0.02,
            "mean {k}: {}",
            fit.means[k][0]
        );
        ensure!(
            (fit.weights[k] - w[k]).abs() <= 0.03,
            "weight {k}: {}",
            fit.weights[k]
        );
    }
    ensure!(fit.is_monotone(), "log-likelihood decreased");
    Ok(format!(
        "means {:.4}/{:.4}, weights {:.3}/{:.3}, {} iterations",
        fit.means[0][0], fit.means[1][0], fit.weights[0], fit.weights[1], fit.iterations
    ))
}

fn dsp_kernels() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let noise = Normal::new(0.0, 1.5).unwrap();
    let x: Vec<f64> = (0..20_000).map(|_| noise.sample(&mut rng)).collect();
    let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let psd = welch_psd(&x, 100.0, &WelchConfig::default()).map_err(|e| e.to_string())?;
    let area: f64 = psd.power.iter().sum::<f64>() * psd.df;
    let parseval = (area - var).abs() / var;
    ensure!(parseval <= 0.05, "PSD area {area} vs variance {var}");

    let (fs, f, amp) = (100.0, 4.78, 2.0);
    let n = 3000;
    let w = 2.0 * std::f64::consts::PI * f;
    let a: Vec<f64> = (0..n)
        .map(|i| -amp * w * w * (w * i as f64 / fs).sin() / MM_PER_G)
        .collect();
    let u = accel_to_disp(&a, fs, 0.5).map_err(|e| e.to_string())?;
    let worst = (n / 4..3 * n / 4)
        .map(|i| (u[i] - amp * (w * i as f64 / fs).sin()).abs() / amp)
        .fold(0.0f64, f64::max);
    ensure!(worst <= 0.02, "integration error {:.2} %", 100.0 * worst);

    let spec =
        fir_lowpass_design(1000.0, DEFAULT_CUTOFF_HZ, DEFAULT_ORDER).map_err(|e| e.to_string())?;
    let stop = (0..=200)
        .map(|k| 1.25 * DEFAULT_CUTOFF_HZ + k as f64 * (500.0 - 1.25 * DEFAULT_CUTOFF_HZ) / 200.0)
        .map(|fq| 20.0 * spec.magnitude_at(fq, 1000.0).log10())
        .fold(f64::NEG_INFINITY, f64::max);
    ensure!(stop <= -40.0, "stopband {stop:.1} dB");
    Ok(format!(
        "Parseval {:.2} %, integration {:.2} %, stopband {stop:.1} dB",
        100.0 * parseval,
        100.0 * worst
    ))
}

fn crash_safety() -> Check {
    let src = tempfile::tempdir().unwrap();
    let (_, packets, _) = demo_packets(src.path());
    let cfg = sensor();
    let opts = UplinkOptions {
        max_sends_per_packet: Some(2),
        ..UplinkOptions::from_config(&cfg)
    };
    let upload = |ing: &Arc<Ingestor>| {
        uplink(
            &mut LoopbackTransport::new(Arc::clone(ing)),
            &packets,
            &opts,
        )
    };
    let snapshot = |ing: &Arc<Ingestor>| -> BTreeMap<String, Vec<u8>> {
        assert!(ing.wait_idle(Duration::from_secs(30)));
        ing.with_store(|s| s.snapshot()).unwrap()
    };
    let want = {
        let dir = tempfile::tempdir().unwrap();
        let ing = open_ingestor(dir.path(), None);
        upload(&ing).map_err(|e| e.to_string())?;
        snapshot(&ing)
    };
    let total: u64 = want.values().map(|b| b.len() as u64).sum();
    let mut points: Vec<u64> = vec![0, 1, total - 1];
    points.extend((1..20).map(|i| total * i / 20));
    for &k in &points {
        let dir = tempfile::tempdir().unwrap();
        {
            let ing = open_ingestor(dir.path(), Some(k));
            let _ = upload(&ing);
            ing.wait_idle(Duration::from_secs(30));
        }
        let ing = open_ingestor(dir.path(), None);
        upload(&ing).map_err(|e| format!("replay after kill at {k}: {e}"))?;
        ensure!(
            snapshot(&ing) == want,
            "store differs after kill at byte {k}"
        );
    }
    Ok(format!(
        "{} kill points over {total} bytes converge",
        points.len()
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("1 protocol exactness", protocol_exactness, 5),
        ("2 packetization arithmetic", packetization, 5),
        ("3 lossy-link delivery", lossy_delivery, 30),
        ("4 EDS logic", eds_logic, 1),
        ("5 fusion accuracy", fusion_accuracy, 30),
        ("6 ENA recovery", ena_recovery, 60),
        ("7 power math", power_math, 1),
        ("8 regression", regression, 1),
        ("9 GMM", gmm, 10),
        ("10 DSP kernels", dsp_kernels, 10),
        ("11 crash safety", crash_safety, 60),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check, budget_s) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(d) if secs > budget_s as f64 => Err(format!("{d}; took {secs:.2} s")),
            o => o,
        };
        match outcome {
            Ok(d) => println!("PASS  {name} ({secs:.2} s / {budget_s} s): {d}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2} s / {budget_s} s): {e}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
