use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use podcar::gateway::{Client, ServerMsg};
use podcar::safety::{FaultReason, Mode};
use podcar::telemetry::TelemetryRecord;

fn podcar() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_podcar"));
    c.env_remove("PODCAR_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    podcar().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("podcar-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn records(path: &Path) -> Vec<TelemetryRecord> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn scenario(name: &str) -> String {
    format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn selftest_passes_on_defaults() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn config_prints_a_loadable_file() {
    let dir = scratch("config");
    let o = run(&["config"]);
    assert!(o.status.success());
    let path = dir.join("podcar.toml");
    std::fs::write(&path, &o.stdout).unwrap();
    let again = run(&["--config", path.to_str().unwrap(), "config"]);
    assert_eq!(again.stdout, o.stdout);

    std::fs::write(&path, "[planner]\nwarp = 9\n").unwrap();
    let bad = podcar().arg("config").env("PODCAR_CONFIG", &path).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("warp"));
}

#[test]
fn goto_reports_success_and_writes_telemetry() {
    let dir = scratch("goto");
    let tel = dir.join("run.jsonl");
    let o = run(&["goto", "1", "0", "0", "--telemetry", tel.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("SUCCESS"));
    let recs = records(&tel);
    assert!(recs.iter().any(|r| r.nav.as_ref().is_some_and(|n| n.path.is_some())));
    assert_eq!(recs.last().unwrap().nav.as_ref().unwrap().status, "SUCCESS");

    let o = run(&["goto", "-1", "0.3", "0", "0.001", "0.01"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("ABORTED"), "{}", stdout(&o));
}

#[test]
fn sim_captures_replay_cleanly() {
    let dir = scratch("replay");
    let gap = scenario("heartbeat_gap.scn");
    let o = run(&["sim", "--test-mode", "--scenario", &gap, "--capture-dir", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mode=Fault"));
    let mut caps: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path().to_string_lossy().into_owned())
        .collect();
    caps.sort();
    assert_eq!(caps.len(), 2, "{caps:?}");
    let mut args = vec!["replay"];
    args.extend(caps.iter().map(String::as_str));
    let o = run(&args);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains(" 0 mismatches"));
}

#[test]
fn sim_serves_the_gateway() {
    let mut child = podcar()
        .args(["sim", "--listen", "127.0.0.1:0", "--duration", "1.5"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().parse().unwrap();
    let mut client = Client::connect(addr).unwrap();
    client.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    assert!(matches!(client.recv().unwrap(), Some(ServerMsg::Welcome { .. })));
    assert!(matches!(client.recv().unwrap(), Some(ServerMsg::Telemetry { .. })));
    assert!(child.wait().unwrap().success());
}

#[test]
fn teleop_arms_and_drives_from_stdin() {
    let dir = scratch("teleop");
    let tel = dir.join("teleop.jsonl");
    let mut child = podcar()
        .args(["teleop", "--telemetry", tel.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut input = child.stdin.take().unwrap();
    writeln!(input, "i").unwrap();
    writeln!(input, "ww").unwrap();
    for _ in 0..6 {
        std::thread::sleep(Duration::from_millis(250));
        writeln!(input).unwrap();
    }
    writeln!(input, "q").unwrap();
    assert!(child.wait().unwrap().success());
    let recs = records(&tel);
    assert!(recs.iter().any(|r| r.safety_mode == Mode::Armed && r.v > 0.05));
    assert_eq!(recs.last().unwrap().safety_mode, Mode::PowerOff);
}

#[test]
fn sim_refuses_fault_injection_without_test_mode() {
    let o = run(&["sim", "--scenario", &scenario("heartbeat_gap.scn")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--test-mode"));
    let o = run(&["sim", "--scenario", &scenario("two_goals.scn")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

/// A raw pseudo-terminal: the controller end as a path, the host end as a file.
struct Pty {
    host: std::fs::File,
    _device: std::os::fd::OwnedFd,
    path: String,
}

fn pty() -> Pty {
    use nix::sys::termios::{cfmakeraw, tcgetattr, tcsetattr, SetArg};
    let p = nix::pty::openpty(None, None).unwrap();
    let mut t = tcgetattr(&p.slave).unwrap();
    cfmakeraw(&mut t);
    tcsetattr(&p.slave, SetArg::TCSANOW, &t).unwrap();
    let path = nix::unistd::ttyname(&p.slave).unwrap().to_string_lossy().into_owned();
    Pty { host: p.master.into(), _device: p.slave, path }
}

/// Lines arriving on the host end, read on a background thread.
fn lines_from(file: &std::fs::File) -> std::sync::mpsc::Receiver<String> {
    let (tx, rx) = std::sync::mpsc::channel();
    let reader = BufReader::new(file.try_clone().unwrap());
    std::thread::spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    rx
}

#[test]
fn emulate_drives_the_controllers_over_device_files() {
    let dir = scratch("emulate");
    let (mut speed, steer) = (pty(), pty());
    let cfg = dir.join("podcar.toml");
    std::fs::write(&cfg, format!("[link]\nspeed_device = \"{}\"\nsteering_device = \"{}\"\n", speed.path, steer.path))
        .unwrap();
    let tel = dir.join("emulate.jsonl");
    let mut child = podcar()
        .args(["--config", cfg.to_str().unwrap(), "sim", "--emulate", "--duration", "4"])
        .args(["--telemetry", tel.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let replies = lines_from(&speed.host);
    speed.host.write_all(b"BV\n").unwrap();
    let bv = replies.recv_timeout(Duration::from_secs(5)).unwrap();
    assert!(bv.starts_with("BV:"), "{bv}");

    let mut panel = child.stdin.take().unwrap();
    speed.host.write_all(b"FA:164\n").unwrap();
    writeln!(panel, "dmh press\nfuse").unwrap();
    std::thread::sleep(Duration::from_millis(50));
    writeln!(panel, "ignition").unwrap();
    for ms in (0..1500u64).step_by(20) {
        speed.host.write_all(format!("HB:{ms}\n").as_bytes()).unwrap();
        if ms == 200 {
            speed.host.write_all(b"FA:230\n").unwrap();
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    // The heartbeat stops here; the watchdog must cut the drive.
    let out = child.wait_with_output().unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{stderr}");
    assert!(stderr.contains("ignored `fuse`"), "{stderr}");
    let recs = records(&tel);
    assert!(recs.iter().any(|r| r.safety_mode == Mode::Armed && r.v > 0.05), "{stderr}");
    let last = recs.last().unwrap();
    assert_eq!(last.safety_mode, Mode::Fault);
    assert_eq!(last.fault_reason, Some(FaultReason::WatchdogExpired));
    assert_eq!(last.speed_cmd, 170);
}
