use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bridgemon"))
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(out).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Starts `ingestd` on an ephemeral port and returns it with its address.
fn ingestd(out: &Path, store: &Path, extra: &[&str]) -> (Child, String) {
    let mut child = bin()
        .arg("--out")
        .arg(out)
        .args(["ingestd", "--bind", "127.0.0.1:0", "--store"])
        .arg(store)
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .strip_prefix("listening on ")
        .and_then(|r| r.split_whitespace().next())
        .unwrap_or_else(|| panic!("unexpected ingestd banner {line:?}"))
        .to_string();
    (child, addr)
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(
            d.path(),
            &["simulate", "--scenario", "no-such-scenario"]
        )),
        2
    );
    assert_eq!(code(&run(d.path(), &["simulate", "--no-such-flag"])), 2);
    assert_eq!(code(&run(d.path(), &["node", "--loss", "1.5"])), 2);
    assert_eq!(
        code(&run(
            d.path(),
            &["report", "--store", "x", "--node-a", "a", "--node-b", "b", "--window", "5..1"]
        )),
        2
    );
    assert_eq!(
        code(&run(
            d.path(),
            &[
                "report",
                "--store",
                "x",
                "--node-a",
                "a",
                "--node-b",
                "b",
                "--gmm-init",
                "nope"
            ]
        )),
        2
    );
    assert_eq!(
        code(&run(d.path(), &["end-to-end", "--alpha-rule", "nope"])),
        2
    );
    let bad = d.path().join("bad.json");
    std::fs::write(&bad, r#"{"capacity_mah": 10, "wat": 1}"#).unwrap();
    assert_eq!(
        code(&run(
            d.path(),
            &["power", "--profile", bad.to_str().unwrap()]
        )),
        2
    );
}

#[test]
fn simulate_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert_eq!(code(&run(&a, &["simulate", "--scenario", "demo"])), 0);
    assert_eq!(code(&run(&b, &["simulate", "--scenario", "demo"])), 0);
    let ca = std::fs::read(a.join("truth.csv")).unwrap();
    assert!(ca.len() > 1000);
    assert_eq!(ca, std::fs::read(b.join("truth.csv")).unwrap());
    assert_eq!(json(&a.join("truth.json"))["samples"], 33000);
    assert!(a.join("config.json").exists());
}

#[test]
fn zero_load_simulation_is_all_zero() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(d.path(), &["simulate", "--scenario", "zero-load"])),
        0
    );
    let text = std::fs::read_to_string(d.path().join("truth.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("t_s,"));
    let mut n = 0;
    for l in lines {
        assert!(
            l.split(',')
                .skip(1)
                .all(|v| v.parse::<f64>().unwrap() == 0.0),
            "{l}"
        );
        n += 1;
    }
    assert_eq!(n, 33000);
}

#[test]
fn node_delivers_to_ingestd() {
    let d = tempfile::tempdir().unwrap();
    let store = d.path().join("store");
    let (mut server, addr) = ingestd(
        &d.path().join("srv"),
        &store,
        &["--exit-after-sessions", "1"],
    );
    let o = run(
        &d.path().join("node"),
        &["node", "--scenario", "girder-a", "--server", &addr],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(server.wait().unwrap().success());
    let rep = json(&d.path().join("node/node_report.json"));
    assert_eq!(rep[0]["packets"], 375);
    assert_eq!(rep[0]["report"]["acked"], 375);
    assert_eq!(rep[0]["report"]["resends"], 0);

    let session = rep[0]["session"].as_str().unwrap();
    let a = d.path().join("an");
    let o = run(
        &a,
        &[
            "analyze",
            "--store",
            store.to_str().unwrap(),
            "--session",
            session,
            "--scenario",
            "girder-a",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let f = json(&a.join("analysis.json"))["f_n_hz"].as_f64().unwrap();
    assert!((f - 4.78).abs() < 0.05, "{f}");
    assert!(a.join("u_fused.csv").exists());

    let e = d.path().join("ex");
    assert_eq!(
        code(&run(&e, &["export", "--store", store.to_str().unwrap()])),
        0
    );
    let data = std::fs::read_to_string(e.join("CHEONGDAM1_data.csv")).unwrap();
    assert_eq!(data.lines().count(), 3001);
}

#[test]
fn lossy_node_resends_and_completes() {
    let d = tempfile::tempdir().unwrap();
    let store = d.path().join("store");
    let (mut server, addr) = ingestd(
        &d.path().join("srv"),
        &store,
        &["--exit-after-sessions", "1"],
    );
    let o = run(
        &d.path().join("node"),
        &["--seed", "7", "node", "--server", &addr, "--loss", "0.3"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(server.wait().unwrap().success());
    let rep = json(&d.path().join("node/node_report.json"));
    assert_eq!(rep[0]["report"]["acked"], 375);
    assert!(rep[0]["report"]["resends"].as_u64().unwrap() > 0);
}

#[test]
fn refused_server_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let o = run(d.path(), &["node", "--server", &port.to_string()]);
    assert_eq!(code(&o), 3);
    let rep = json(&d.path().join("node_report.json"));
    assert_eq!(rep[0]["report"]["connect_attempts"], 10);
}

#[test]
fn end_to_end_demo_and_no_vehicle() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["end-to-end", "--scenario", "demo"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rep = json(&d.path().join("e2e_report.json"));
    let peaks = rep[0]["sessions"][0]["peaks"].as_array().unwrap();
    assert_eq!(peaks.len(), 3);
    assert!(peaks
        .iter()
        .all(|p| p["abs_err_mm"].as_f64().unwrap() <= 0.1));
    let first = std::fs::read(d.path().join("e2e_report.json")).unwrap();
    assert_eq!(
        code(&run(d.path(), &["end-to-end", "--scenario", "demo"])),
        0
    );
    assert_eq!(
        first,
        std::fs::read(d.path().join("e2e_report.json")).unwrap()
    );

    let z = d.path().join("z");
    assert_eq!(
        code(&run(&z, &["end-to-end", "--scenario", "zero-load"])),
        4
    );
    let rep = json(&z.join("e2e_report.json"));
    assert_eq!(rep[0]["sessions"][0]["analysis"]["error"], "no-peak");
}

#[test]
fn report_flags_asymmetric_girders() {
    let d = tempfile::tempdir().unwrap();
    let store = d.path().join("store");
    let s = store.to_str().unwrap();
    for (scenario, node) in [
        ("girder-a", "g-a"),
        ("girder-b", "g-b"),
        ("girder-c", "g-c"),
    ] {
        let o = run(
            &d.path().join(node),
            &[
                "end-to-end",
                "--scenario",
                scenario,
                "--node-id",
                node,
                "--store",
                s,
                "--repeat",
                "3",
            ],
        );
        assert_eq!(
            code(&o),
            0,
            "{scenario}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let ab = d.path().join("ab");
    assert_eq!(
        code(&run(
            &ab,
            &["report", "--store", s, "--node-a", "g-a", "--node-b", "g-b"]
        )),
        0
    );
    let r = json(&ab.join("report.json"));
    assert_eq!(r["divergent"], false);
    assert!(r["ena_divergence"].as_f64().unwrap() < 0.05);
    assert_eq!(r["node_a"]["analyzed"], 3);

    let ac = d.path().join("ac");
    assert_eq!(
        code(&run(
            &ac,
            &["report", "--store", s, "--node-a", "g-a", "--node-b", "g-c"]
        )),
        0
    );
    assert_eq!(json(&ac.join("report.json"))["divergent"], true);
    assert!(ac.join("g-a_fn_hist.dat").exists());
    assert!(ac.join("paired_peaks.dat").exists());
}

#[test]
fn power_reports_both_readings() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["power"]);
    assert_eq!(code(&o), 0);
    let p = json(&d.path().join("power.json"));
    let computed = p["computed"]["i_avg_ma"].as_f64().unwrap();
    assert!((computed - 8.9157).abs() < 1e-3, "{computed}");
    assert_eq!(p["stated"]["i_avg_ma"], 214.02);
}
