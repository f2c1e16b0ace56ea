use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use podcar::bus::{GoalRequest, JoystickSample, OperatorEvent};
use podcar::capture::{parse_panel, replay, Capture};
use podcar::config::Config;
use podcar::gateway::{serve, ServeOptions};
use podcar::planner::{GoalTolerance, NavStatus};
use podcar::pose::Pose2D;
use podcar::scenario::Scenario;
use podcar::simulator::{self, PanelInput, SimVehicle};
use podcar::stack::{Stack, StackConfig};
use podcar::telemetry::TelemetryRecord;
use podcar::transport::DeviceLink;

#[derive(Parser)]
#[command(name = "podcar", version, about = "Drive-by-wire stack and simulator for a converted mobility scooter")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "PODCAR_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulator and the full stack.
    Sim {
        /// Timed operator script.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Simulated seconds to run; defaults to the scenario end.
        #[arg(long)]
        duration: Option<f64>,
        /// Serve the operator gateway, in real time. Without a value the
        /// `[gateway]` address is used.
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        listen: Option<String>,
        /// Emulate both controllers on the `[link]` devices, in real time.
        /// Panel inputs are read from stdin, one per line: `dmh press`,
        /// `dmh release`, `ignition`, `fuse`.
        #[arg(long, conflicts_with_all = ["listen", "scenario", "capture_dir"])]
        emulate: bool,
        /// Allow fault injection (blown fuse, silenced heartbeat).
        #[arg(long)]
        test_mode: bool,
        /// Telemetry output (JSON lines); `-` for stdout.
        #[arg(long)]
        telemetry: Option<PathBuf>,
        /// Write one capture file per link into this directory.
        #[arg(long)]
        capture_dir: Option<PathBuf>,
    },
    /// Keyboard teleoperation from stdin, in real time.
    ///
    /// One command per line: w/s faster/slower, a/d steer left/right,
    /// x centre and stop, i ignition, q quit. The handle counts as held while
    /// stdin stays open and lines keep arriving within two seconds.
    Teleop {
        #[arg(long)]
        telemetry: Option<PathBuf>,
    },
    /// Drive to a goal in simulation and report the outcome.
    #[command(allow_negative_numbers = true)]
    Goto {
        x: f64,
        y: f64,
        /// Degrees.
        heading: f64,
        /// Position tolerance, m.
        tol_pos: Option<f64>,
        /// Heading tolerance, rad.
        tol_heading: Option<f64>,
        /// Simulated seconds before giving up.
        #[arg(long, default_value_t = 300.0)]
        budget: f64,
        #[arg(long)]
        telemetry: Option<PathBuf>,
    },
    /// Replay link captures against the simulated controllers.
    Replay {
        #[arg(required = true)]
        captures: Vec<PathBuf>,
        #[arg(long)]
        telemetry: Option<PathBuf>,
    },
    /// Check the configuration end to end.
    Selftest,
    /// Print the effective configuration as TOML.
    Config,
}

fn telemetry_sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        None => Box::new(io::sink()),
        Some(p) if p.as_os_str() == "-" => Box::new(BufWriter::new(io::stdout())),
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
    })
}

fn write_records(out: &mut dyn Write, records: &[TelemetryRecord]) -> Result<()> {
    for r in records {
        r.write_line(out)?;
    }
    Ok(())
}

fn write_captures(stack: &Stack, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(caps) = stack.captures() {
        for cap in caps {
            let path = dir.join(format!("{}.cap", cap.endpoint));
            fs::write(&path, cap.to_text()).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

struct SimArgs {
    scenario: Option<PathBuf>,
    duration: Option<f64>,
    listen: Option<String>,
    emulate: bool,
    test_mode: bool,
    telemetry: Option<PathBuf>,
    capture_dir: Option<PathBuf>,
}

fn emulate(cfg: StackConfig, file_cfg: &Config, args: SimArgs) -> Result<ExitCode> {
    let open = |key: &str, path: &Option<String>| -> Result<DeviceLink> {
        let path = path.as_deref().with_context(|| format!("--emulate needs [link] {key}"))?;
        DeviceLink::open(path).with_context(|| format!("opening {path}"))
    };
    let mut speed = open("speed_device", &file_cfg.link.speed_device)?;
    let mut steer = open("steering_device", &file_cfg.link.steering_device)?;
    let mut out = telemetry_sink(args.telemetry.as_deref())?;
    let stop = Arc::new(AtomicBool::new(false));
    if let Some(d) = args.duration {
        let stop = stop.clone();
        thread::spawn(move || {
            thread::sleep(Duration::from_secs_f64(d));
            stop.store(true, Ordering::Relaxed);
        });
    }
    let (tx, panel) = mpsc::channel::<PanelInput>();
    let test_mode = args.test_mode;
    thread::spawn(move || {
        for line in io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            let line = line.trim();
            match parse_panel(line.as_bytes()) {
                Some(PanelInput::BlowFuse) if !test_mode => eprintln!("ignored `fuse`: needs --test-mode"),
                Some(input) => {
                    if tx.send(input).is_err() {
                        break;
                    }
                }
                None if line.is_empty() => {}
                None => eprintln!("unknown panel input `{line}`"),
            }
        }
    });

    eprintln!("emulating controllers on the [link] devices");
    let mut vehicle = SimVehicle::with_safety(cfg.sim, cfg.safety);
    let mut err = None;
    simulator::serve(&mut vehicle, &mut speed, &mut steer, &panel, Some(cfg.sim.dt_duration()), &stop, &mut |r| {
        if err.is_none() {
            err = r.write_line(&mut out).err();
        }
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    out.flush()?;
    let s = vehicle.state();
    eprintln!("t={:.2}s pose=({:.3}, {:.3}, {:.3}) v={:.3} mode={:?}", s.t, s.x, s.y, s.heading, s.v, vehicle.mode());
    Ok(ExitCode::SUCCESS)
}

fn sim(mut cfg: StackConfig, file_cfg: &Config, args: SimArgs) -> Result<ExitCode> {
    if args.emulate {
        return emulate(cfg, file_cfg, args);
    }
    let SimArgs { scenario, duration, listen, test_mode, telemetry, capture_dir, .. } = args;
    cfg.capture = capture_dir.is_some();
    let mut stack = Stack::new(cfg);
    let mut out = telemetry_sink(telemetry.as_deref())?;
    let duration = duration.map(Duration::from_secs_f64);

    if let Some(addr) = listen {
        let addr = if addr.is_empty() { file_cfg.gateway.listen.clone() } else { addr };
        let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
        eprintln!("gateway listening on {}", listener.local_addr()?);
        let stop = Arc::new(AtomicBool::new(false));
        let opts = ServeOptions { freshness: file_cfg.dmh_freshness(), realtime: true, duration };
        let mut err = None;
        serve(&mut stack, listener, opts, stop, |r| {
            if err.is_none() {
                err = r.write_line(&mut out).err();
            }
        })?;
        if let Some(e) = err {
            return Err(e.into());
        }
    } else {
        let script = match scenario {
            Some(p) => {
                let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                Scenario::parse(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => Scenario::default(),
        };
        if script.injects_faults() && !test_mode {
            bail!("scenario injects faults (fuse, heartbeat off); rerun with --test-mode");
        }
        let script = match duration {
            Some(d) => {
                let mut s = script;
                s.events.retain(|(_, a)| *a != podcar::scenario::Action::End);
                s.events.push((d, podcar::scenario::Action::End));
                s
            }
            None if script.events.is_empty() => bail!("give --scenario, --duration or --listen"),
            None => script,
        };
        let mut err = None;
        script.run(&mut stack, |r| {
            if err.is_none() {
                err = r.write_line(&mut out).err();
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        let s = stack.vehicle().state();
        eprintln!(
            "t={:.2}s pose=({:.3}, {:.3}, {:.3}) v={:.3} mode={:?} nav={}",
            s.t,
            s.x,
            s.y,
            s.heading,
            s.v,
            stack.safety_mode(),
            stack.nav_status().label()
        );
    }
    out.flush()?;
    if let Some(dir) = capture_dir {
        write_captures(&stack, &dir)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn teleop(cfg: StackConfig, telemetry: Option<PathBuf>) -> Result<ExitCode> {
    let mut stack = Stack::new(cfg);
    let mut out = telemetry_sink(telemetry.as_deref())?;
    let (tx, rx) = mpsc::channel::<String>();
    thread::spawn(move || {
        for line in io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });

    let freshness = Duration::from_secs(2);
    let tick = Duration::from_millis(20);
    let start = Instant::now();
    let mut last_input = Instant::now();
    let mut stick = JoystickSample::new(0.0, 0.0);
    let mut held = false;
    let mut ticks = 0u32;
    'run: loop {
        loop {
            match rx.try_recv() {
                Ok(line) => {
                    last_input = Instant::now();
                    if !held {
                        stack.operator(OperatorEvent::DmhPress);
                        held = true;
                    }
                    for c in line.trim().chars() {
                        match c {
                            'w' => stick = JoystickSample::new(stick.x, stick.y + 0.25),
                            's' => stick = JoystickSample::new(stick.x, stick.y - 0.25),
                            'a' => stick = JoystickSample::new(stick.x + 0.25, stick.y),
                            'd' => stick = JoystickSample::new(stick.x - 0.25, stick.y),
                            'x' => stick = JoystickSample::new(0.0, 0.0),
                            'i' => stack.operator(OperatorEvent::Ignition),
                            'q' => break 'run,
                            _ => {}
                        }
                    }
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => break 'run,
            }
        }
        if held && last_input.elapsed() > freshness {
            stack.operator(OperatorEvent::DmhRelease);
            held = false;
            stick = JoystickSample::new(0.0, 0.0);
        }
        stack.joystick(stick);
        for r in stack.tick() {
            r.write_line(&mut out)?;
            if ticks.is_multiple_of(50) {
                eprintln!(
                    "x={:.2} y={:.2} v={:.2} steer={:.2} mode={:?} stick=({:.2}, {:.2})",
                    r.x, r.y, r.v, r.steer_angle, r.safety_mode, stick.x, stick.y
                );
            }
        }
        ticks += 1;
        if let Some(wait) = (start + tick * ticks).checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
    }
    stack.operator(OperatorEvent::DmhRelease);
    write_records(&mut out, &stack.tick())?;
    stack.telemetry().write_line(&mut out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn goto(
    cfg: StackConfig,
    file_cfg: &Config,
    x: f64,
    y: f64,
    heading_deg: f64,
    tol_pos: Option<f64>,
    tol_heading: Option<f64>,
    budget: f64,
    telemetry: Option<PathBuf>,
) -> Result<ExitCode> {
    let d = file_cfg.tolerance()?;
    let tol = GoalTolerance::new(tol_pos.unwrap_or(d.position), tol_heading.unwrap_or(d.heading))
        .context("tolerances must be positive")?;
    let mut stack = Stack::new(cfg);
    let mut out = telemetry_sink(telemetry.as_deref())?;
    if !stack.arm(50) {
        bail!("vehicle did not arm");
    }
    let goal = GoalRequest { pose: Pose2D::new(x, y, heading_deg.to_radians()), tol };
    let start = stack.now();
    let records = stack.run_goal(goal, Duration::from_secs_f64(budget));
    write_records(&mut out, &records)?;
    out.flush()?;
    let p = stack.pose();
    println!(
        "{} after {:.2} s: pose ({:.3}, {:.3}, {:.2} deg), error {:.3} m / {:.3} rad",
        stack.nav_status().label(),
        (stack.now() - start).as_secs_f64(),
        p.x,
        p.y,
        p.heading.to_degrees(),
        p.distance(&goal.pose),
        p.heading_error(&goal.pose)
    );
    Ok(if stack.nav_status() == &NavStatus::Succeeded { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn replay_cmd(cfg: StackConfig, paths: Vec<PathBuf>, telemetry: Option<PathBuf>) -> Result<ExitCode> {
    let captures = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Capture::parse(&text).with_context(|| format!("in {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = replay(&captures, cfg.sim);
    let mut out = telemetry_sink(telemetry.as_deref())?;
    write_records(&mut out, &report.telemetry)?;
    out.flush()?;
    println!(
        "{} frames replayed, {} replies recorded, {} produced, {} mismatches",
        report.frames_sent,
        report.replies_expected,
        report.replies_produced,
        report.mismatches.len()
    );
    for (at, want, got) in report.mismatches.iter().take(20) {
        println!("  {:.5}: recorded `{want}`, replay gave `{got}`", at.as_secs_f64());
    }
    Ok(if report.mismatches.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    let file_cfg = Config::resolve(cli.config.as_deref())?;
    let cfg = file_cfg.stack_config()?;
    match cli.command {
        Command::Sim { scenario, duration, listen, emulate, test_mode, telemetry, capture_dir } => {
            let args = SimArgs { scenario, duration, listen, emulate, test_mode, telemetry, capture_dir };
            sim(cfg, &file_cfg, args)
        }
        Command::Teleop { telemetry } => teleop(cfg, telemetry),
        Command::Goto { x, y, heading, tol_pos, tol_heading, budget, telemetry } => {
            goto(cfg, &file_cfg, x, y, heading, tol_pos, tol_heading, budget, telemetry)
        }
        Command::Replay { captures, telemetry } => replay_cmd(cfg, captures, telemetry),
        Command::Selftest => {
            let checks = podcar::selftest::run(&cfg);
            for c in &checks {
                println!("{} {:<20} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Config => {
            print!("{}", file_cfg.to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

