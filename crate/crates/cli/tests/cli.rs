//! Subcommand behaviour and exit codes, driving the built binary.

use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use airq_core::storage::read_log;
use airq_core::telemetry::TelemetryLine;

fn airq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_airq"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    airq().args(args).current_dir(cwd).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

const SCENARIO: &str = r#"
seed = 3
[[steps]]
duration = 4
pm2_5 = 30
pm10 = 50
temperature = 21.0
humidity = 44.0
co_ppm = 1.5
[[faults]]
at = 2
kind = "corrupt-checksum"
"#;

fn long_scenario(dir: &Path) {
    fs::write(
        dir.join("long.toml"),
        "[[steps]]\nduration = 100000\npm2_5 = 12\npm10 = 20\ntemperature = 20.0\nhumidity = 50.0\nco_ppm = 1.0\n",
    )
    .unwrap();
}

fn gateway_config(dir: &Path, scenario: &str, query: &str) -> PathBuf {
    let path = dir.join("airq.toml");
    let src = format!(
        r#"
[sampling]
period_secs = 0.01

[sources.pms5003]
kind = "simulator"
endpoint = "{scenario}"
[sources.dht11]
kind = "simulator"
endpoint = "{scenario}"
[sources.mq135]
kind = "simulator"
endpoint = "{scenario}"

[sinks.csv]
dir = "logs"

[sinks.query]
{query}
"#
    );
    fs::write(&path, src).unwrap();
    path
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn aqi_text_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["aqi", "pm2.5=55.5"], tmp.path());
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("overall  151"), "{text}");
    assert!(text.contains("category Unhealthy"), "{text}");

    let out = run(&["aqi", "--json", "pm2.5=100", "co=5.68"], tmp.path());
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["overall"], 174);
    assert_eq!(v["dominant"], "pm2.5");
    assert_eq!(v["sub_indices"]["co"], 62);
    assert_eq!(v["concentrations"]["co"], 5.6);
}

#[test]
fn aqi_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["aqi", "pm2.5=600"], tmp.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("pm2.5"), "{}", stderr(&out));
    assert_eq!(code(&run(&["aqi", "pm2.5=600", "--clamp"], tmp.path())), 0);
    assert_eq!(code(&run(&["aqi", "o3=1"], tmp.path())), 1);
    assert_eq!(code(&run(&["aqi", "pm10=x"], tmp.path())), 1);
    assert_eq!(code(&run(&["aqi", "pm10=1", "pm10=2"], tmp.path())), 1);
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["frob"], tmp.path())), 1);
    assert_eq!(code(&run(&["--help"], tmp.path())), 0);
}

#[test]
fn decode_reports_bad_checksum() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("sc.toml"), SCENARIO).unwrap();
    let out = run(&["simulate", "sc.toml", "-q", "--dump", "cap.bin"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let strict = run(&["decode", "cap.bin"], tmp.path());
    assert_eq!(code(&strict), 4);
    let text = stdout(&strict);
    assert!(text.contains("BADCHECKSUM"), "{text}");
    assert!(text.contains("pms5003: 3 frame(s), 1 bad checksum"), "{text}");

    let tolerant = run(&["decode", "cap.bin", "--tolerate"], tmp.path());
    assert_eq!(code(&tolerant), 0);

    fs::write(tmp.path().join("junk.bin"), [0x07, 0, 0]).unwrap();
    assert_eq!(code(&run(&["decode", "junk.bin"], tmp.path())), 1);
}

#[test]
fn replay_matches_simulate() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("sc.toml"), SCENARIO).unwrap();
    let sim = run(&["simulate", "sc.toml", "--dump", "cap.bin"], tmp.path());
    let rep = run(&["replay", "cap.bin", "--calibration", "sc.toml"], tmp.path());
    assert_eq!(code(&rep), 0, "{}", stderr(&rep));
    assert_eq!(stdout(&sim), stdout(&rep));
    let lines: Vec<TelemetryLine> = stdout(&rep).lines().map(|l| TelemetryLine::parse(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    // The corrupted second frame leaves the previous PM values in place.
    assert_eq!(lines[1].pm2_5, lines[0].pm2_5);
}

#[test]
fn export_ndjson_from_reference_log() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--reference", "-q", "--csv", "logs"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&["export", "logs", "--ndjson"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[1]["pm2.5"], 180);
    assert_eq!(rows[1]["co"], 5.27);
    assert_eq!(rows[9]["no"], 10);

    fs::write(
        tmp.path().join("torn.csv"),
        "no,pm2.5,pm10,temperature,humidity,co,aqi\n1,2,3",
    )
    .unwrap();
    assert_eq!(code(&run(&["export", "torn.csv"], tmp.path())), 1);
}

#[test]
fn run_missing_config_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["run", "-c", "nowhere.toml"], tmp.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nowhere.toml"));
}

#[test]
fn run_unopenable_source_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    long_scenario(tmp.path());
    let cfg = gateway_config(tmp.path(), "long.toml", "enabled = false");
    let out = airq()
        .args(["run", "-c"])
        .arg(&cfg)
        .env("AIRQ_PMS5003_ENDPOINT", "/nonexistent/tty")
        .output()
        .unwrap();
    // The override only changes where the source points, not its kind, so
    // the simulator fails to read a scenario there.
    assert_ne!(code(&out), 0);

    let src = fs::read_to_string(&cfg)
        .unwrap()
        .replacen("kind = \"simulator\"", "kind = \"stream\"", 1);
    fs::write(&cfg, src).unwrap();
    let out = airq()
        .args(["run", "-c"])
        .arg(&cfg)
        .env("AIRQ_PMS5003_ENDPOINT", "/nonexistent/tty")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn run_taken_port_exits_3_without_leaving_a_log() {
    let tmp = tempfile::tempdir().unwrap();
    long_scenario(tmp.path());
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = busy.local_addr().unwrap();
    let cfg = gateway_config(tmp.path(), "long.toml", &format!("bind = \"{addr}\""));
    let out = airq().args(["run", "-c"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(!tmp.path().join("logs").exists() || csv_files(&tmp.path().join("logs")).is_empty());
}

fn spawn_run(cfg: &Path) -> Child {
    airq()
        .args(["run", "-c"])
        .arg(cfg)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

/// Reads stderr until the gateway announces its query address.
fn query_addr(child: &mut Child) -> String {
    let err = child.stderr.take().unwrap();
    let mut lines = BufReader::new(err).lines();
    for line in lines.by_ref() {
        let line = line.unwrap();
        if let Some(addr) = line.strip_prefix("airq: query server on ") {
            let addr = addr.trim().to_string();
            // Keep draining so the child never blocks on a full pipe.
            thread::spawn(move || lines.for_each(drop));
            return addr;
        }
    }
    panic!("gateway never announced its query server");
}

fn interrupt(child: &Child) {
    let ok = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap()
        .success();
    assert!(ok);
}

#[test]
fn sigint_stops_cleanly_and_watch_sees_the_server() {
    let tmp = tempfile::tempdir().unwrap();
    long_scenario(tmp.path());
    let cfg = gateway_config(tmp.path(), "long.toml", "bind = \"127.0.0.1:0\"");
    let mut child = spawn_run(&cfg);
    let addr = query_addr(&mut child);

    // Wait for a first reading.
    let deadline = Instant::now() + Duration::from_secs(10);
    let view = loop {
        let out = airq().args(["watch", &addr, "--once"]).output().unwrap();
        if code(&out) == 0 && stdout(&out).contains("AQI") && !stdout(&out).contains("waiting") {
            break stdout(&out);
        }
        assert!(Instant::now() < deadline, "no reading over the query port");
        thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(view.lines().count(), 2, "{view}");
    assert!(view.contains("Good"), "{view}");

    interrupt(&child);
    let status = child.wait().unwrap();
    assert!(status.success(), "{status}");
    let files = csv_files(&tmp.path().join("logs"));
    assert_eq!(files.len(), 1);
    let log = read_log(&files[0]).unwrap();
    assert!(log.has_header);
    assert!(!log.records.is_empty());

    let out = airq().args(["watch", &addr, "--once"]).output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn restart_keeps_old_logs_intact() {
    let tmp = tempfile::tempdir().unwrap();
    long_scenario(tmp.path());
    let cfg = gateway_config(tmp.path(), "long.toml", "enabled = false");
    for _ in 0..2 {
        let out = airq()
            .args(["run", "-c"])
            .arg(&cfg)
            .args(["--max-cycles", "5"])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let files = csv_files(&tmp.path().join("logs"));
    assert_eq!(files.len(), 2);
    for f in files {
        assert_eq!(read_log(&f).unwrap().records.len(), 5);
    }
}
