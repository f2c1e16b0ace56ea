use std::f64::consts::TAU;

use podcar::simulator::{self, target_extension, target_speed, MotorInputs, SimConfig, VehicleState};

fn flat_battery() -> SimConfig {
    SimConfig { battery_drain: 0.0, ..SimConfig::default() }
}

#[test]
fn straight_line_follows_the_first_order_lag() {
    let cfg = flat_battery();
    let inputs = MotorInputs { speed_cmd: 220, steer_cmd: 1900 };
    let vt = target_speed(220, cfg.initial_battery, &cfg);
    let q = (-cfg.dt / cfg.drive_time_constant).exp();
    let mut s = VehicleState::initial(&cfg);
    for n in 1..=1000 {
        s = simulator::step(&s, inputs, &cfg);
        let nf = f64::from(n);
        let v = vt * (1.0 - q.powi(n));
        let x = vt * cfg.dt * (nf - q * (1.0 - q.powi(n)) / (1.0 - q));
        assert!((s.v - v).abs() < 1e-12, "step {n}: v {} vs {v}", s.v);
        assert!((s.x - x).abs() < 1e-9, "step {n}: x {} vs {x}", s.x);
        // Centred wheels read back as zero to bisection precision.
        assert!(s.y.abs() < 1e-12 && s.heading.abs() < 1e-12);
    }
}

fn circling(dt: f64) -> (SimConfig, MotorInputs, VehicleState) {
    let cfg = SimConfig { dt, ..flat_battery() };
    let inputs = MotorInputs { speed_cmd: 215, steer_cmd: 1600 };
    let mut s = VehicleState::initial(&cfg);
    s.v = target_speed(inputs.speed_cmd, cfg.initial_battery, &cfg);
    s.actuator_ext = target_extension(inputs.steer_cmd, &cfg);
    s.steer_angle = cfg.geometry.extension_to_angle(s.actuator_ext).unwrap();
    (cfg, inputs, s)
}

/// Distance from the exact arc after `t` seconds at constant speed and lock.
fn arc_error(dt: f64, t: f64) -> f64 {
    let (cfg, inputs, mut s) = circling(dt);
    let omega = s.v * s.steer_angle.tan() / cfg.wheelbase;
    let r = s.v / omega;
    let steps = (t / dt).round() as usize;
    for _ in 0..steps {
        s = simulator::step(&s, inputs, &cfg);
    }
    let (x, y) = (r * (omega * t).sin(), r * (1.0 - (omega * t).cos()));
    (s.x - x).hypot(s.y - y)
}

#[test]
fn constant_lock_closes_the_circle() {
    let (cfg, inputs, mut s) = circling(0.01);
    let start = s;
    let period = TAU * cfg.wheelbase / (s.v * s.steer_angle.tan());
    for _ in 0..(period / cfg.dt).round() as usize {
        s = simulator::step(&s, inputs, &cfg);
    }
    assert!((s.x - start.x).hypot(s.y - start.y) < 0.01);
    assert!((s.v - start.v).abs() < 1e-12);
}

#[test]
fn halving_the_step_halves_the_arc_error() {
    let (coarse, fine) = (arc_error(0.02, 4.0), arc_error(0.01, 4.0));
    let ratio = coarse / fine;
    assert!(fine < 0.01);
    assert!((1.8..2.2).contains(&ratio), "error ratio {ratio} ({coarse} vs {fine})");
}

#[test]
fn reverse_bytes_back_up() {
    let cfg = flat_battery();
    let mut s = VehicleState::initial(&cfg);
    for _ in 0..300 {
        s = simulator::step(&s, MotorInputs { speed_cmd: 100, steer_cmd: 1900 }, &cfg);
    }
    assert!(s.v < 0.0 && s.x < 0.0);
}
