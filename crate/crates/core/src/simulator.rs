//! Fixed-step kinematic simulation of the vehicle and an emulation of its two
//! serial controllers.
//!
//! Each step:
//!
//! 1. the speed byte is converted to the nominal-supply command the motor
//!    controller actually sees, mapped back to a target speed (zero inside
//!    the dead zone), and the speed relaxes toward it with a first-order lag;
//! 2. the steering count sets an actuator target extension, approached at no
//!    more than the actuator's rated speed and kept inside the stroke;
//! 3. the wheel angle is read back from the actuator extension;
//! 4. the pose integrates the kinematic bicycle model with explicit Euler;
//! 5. the battery drains linearly.
//!
//! [`SimVehicle`] wraps the physics with the firmware side of the serial
//! protocol and an embedded [`Supervisor`], so a misbehaving host cannot
//! bypass the watchdog even in simulation.

use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Receiver;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drivebywire::{BatteryModel, SpeedCalibration};
use crate::geometry::{ActuatorCalibration, SteeringGeometry};
use crate::pose::Pose2D;
use crate::protocol::{decode, encode, Endpoint, Frame, LineBuffer};
use crate::quant::{normalize_angle, round_half_away, step_toward};
use crate::safety::{limit_steering, Event, EventKind, Mode, SafetyConfig, Supervisor};
use crate::telemetry::TelemetryRecord;
use crate::transport::Link;

/// 15 km/h.
pub const HARDWARE_MAX_SPEED: f64 = 15.0 / 3.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Fixed step, s.
    pub dt: f64,
    /// m. Placeholder, not a datasheet value.
    pub wheelbase: f64,
    /// s. Placeholder.
    pub drive_time_constant: f64,
    /// V per hour.
    pub battery_drain: f64,
    pub initial_battery: f64,
    pub initial_pose: Pose2D,
    /// mm/s.
    pub actuator_rate: f64,
    pub max_speed: f64,
    pub geometry: SteeringGeometry,
    pub actuator: ActuatorCalibration,
    pub speed_cal: SpeedCalibration,
    pub battery: BatteryModel,
    /// Safety ticks per second.
    pub tick_hz: u32,
    /// Telemetry records per second.
    pub telemetry_hz: u32,
    /// Relative speed disturbance per step, uniform in +-`speed_noise`.
    /// Zero disables it.
    pub speed_noise: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            wheelbase: 1.0,
            drive_time_constant: 0.5,
            battery_drain: 0.5,
            initial_battery: 24.0,
            initial_pose: Pose2D::default(),
            actuator_rate: 8.0,
            max_speed: HARDWARE_MAX_SPEED,
            geometry: SteeringGeometry::default(),
            actuator: ActuatorCalibration::default(),
            speed_cal: SpeedCalibration::default(),
            battery: BatteryModel::default(),
            tick_hz: 50,
            telemetry_hz: 10,
            speed_noise: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn dt_duration(&self) -> Duration {
        Duration::from_nanos(round_half_away(self.dt * 1e9) as u64)
    }

    /// Physics steps per safety tick.
    pub fn steps_per_tick(&self) -> u64 {
        (1.0 / (self.dt * f64::from(self.tick_hz))).round().max(1.0) as u64
    }

    pub fn steps_per_telemetry(&self) -> u64 {
        (1.0 / (self.dt * f64::from(self.telemetry_hz))).round().max(1.0) as u64
    }

    /// Rated actuator travel in one step, mm.
    pub fn max_actuator_step(&self) -> f64 {
        self.actuator_rate * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    /// mm.
    pub actuator_ext: f64,
    /// rad, read back from the actuator.
    pub steer_angle: f64,
    pub v_battery: f64,
    pub t: f64,
}

impl VehicleState {
    /// Stationary at the configured pose with the wheels centered.
    pub fn initial(cfg: &SimConfig) -> Self {
        let ext = cfg.geometry.linkage_extension(0.0);
        Self {
            x: cfg.initial_pose.x,
            y: cfg.initial_pose.y,
            heading: cfg.initial_pose.heading,
            v: 0.0,
            actuator_ext: ext,
            steer_angle: cfg.geometry.extension_to_angle_saturating(ext),
            v_battery: cfg.initial_battery,
            t: 0.0,
        }
    }

    pub fn pose(&self) -> Pose2D {
        Pose2D { x: self.x, y: self.y, heading: self.heading }
    }
}

/// Commands already passed through the safety gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotorInputs {
    pub speed_cmd: u8,
    pub steer_cmd: u16,
}

impl MotorInputs {
    pub const NEUTRAL: MotorInputs = MotorInputs { speed_cmd: 170, steer_cmd: 1900 };
}

/// Target speed the motor controller aims for, given the byte on the DAC and
/// the battery voltage that feeds the Arduino rail.
pub fn target_speed(cmd: u8, v_battery: f64, cfg: &SimConfig) -> f64 {
    let supply = cfg.battery.supply_from_battery(v_battery);
    let effective = cfg.speed_cal.effective_command(cmd, supply);
    cfg.speed_cal.command_to_speed(effective).clamp(-cfg.max_speed, cfg.max_speed)
}

/// Actuator extension the steering controller servos to for `steer_cmd`.
pub fn target_extension(steer_cmd: u16, cfg: &SimConfig) -> f64 {
    let cmd = i64::from(limit_steering(i64::from(steer_cmd)));
    let angle = cfg
        .actuator
        .command_to_angle(cmd)
        .expect("limited command is inside the calibration")
        .clamp(cfg.geometry.angle_right, cfg.geometry.angle_left);
    cfg.geometry.linkage_extension(angle)
}

/// One explicit-Euler step of the kinematic bicycle model.
pub fn integrate_pose(pose: Pose2D, v: f64, steer: f64, wheelbase: f64, dt: f64) -> Pose2D {
    let (s, c) = pose.heading.sin_cos();
    Pose2D {
        x: pose.x + v * c * dt,
        y: pose.y + v * s * dt,
        heading: normalize_angle(pose.heading + v * steer.tan() / wheelbase * dt),
    }
}

pub fn step(state: &VehicleState, inputs: MotorInputs, cfg: &SimConfig) -> VehicleState {
    let target_v = target_speed(inputs.speed_cmd, state.v_battery, cfg);
    let blend = 1.0 - (-cfg.dt / cfg.drive_time_constant).exp();
    let v = (state.v + (target_v - state.v) * blend).clamp(-cfg.max_speed, cfg.max_speed);

    let target_ext = target_extension(inputs.steer_cmd, cfg);
    let actuator_ext = step_toward(state.actuator_ext, target_ext, cfg.max_actuator_step())
        .clamp(0.0, cfg.actuator.stroke_max);
    let steer_angle = cfg.geometry.extension_to_angle_saturating(actuator_ext);

    let pose = integrate_pose(state.pose(), v, steer_angle, cfg.wheelbase, cfg.dt);
    VehicleState {
        x: pose.x,
        y: pose.y,
        heading: pose.heading,
        v,
        actuator_ext,
        steer_angle,
        v_battery: (state.v_battery - cfg.battery_drain * cfg.dt / 3600.0).max(0.0),
        t: state.t + cfg.dt,
    }
}

/// Physical inputs that do not travel over the serial links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PanelInput {
    DmhPress,
    DmhRelease,
    /// Key turn; the controller samples the DAC byte for the dead zone.
    Ignition,
    /// Test-mode fault injection.
    BlowFuse,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounters {
    pub frames: u64,
    pub malformed: u64,
    pub heartbeats: u64,
    pub stale_heartbeats: u64,
}

/// The simulated vehicle as seen through its serial links.
#[derive(Debug, Clone)]
pub struct SimVehicle {
    cfg: SimConfig,
    state: VehicleState,
    supervisor: Supervisor,
    speed_rx: LineBuffer,
    steer_rx: LineBuffer,
    dac_byte: u8,
    steer_target: u16,
    last_hb_stamp: Option<u64>,
    steps: u64,
    pub counters: LinkCounters,
    warnings: u64,
    last_outputs: MotorInputs,
    rng: ChaCha8Rng,
}

impl SimVehicle {
    pub fn new(cfg: SimConfig) -> Self {
        let safety = SafetyConfig {
            supply_min: cfg.speed_cal.supply_min,
            supply_max: cfg.speed_cal.supply_max,
            steer_center: cfg.actuator.cmd_center,
            ..SafetyConfig::default()
        };
        Self::with_safety(cfg, safety)
    }

    pub fn with_safety(cfg: SimConfig, safety: SafetyConfig) -> Self {
        Self {
            state: VehicleState::initial(&cfg),
            supervisor: Supervisor::new(safety, cfg.speed_cal),
            speed_rx: LineBuffer::new(),
            steer_rx: LineBuffer::new(),
            dac_byte: cfg.speed_cal.cmd_stop,
            steer_target: cfg.actuator.cmd_center,
            last_hb_stamp: None,
            steps: 0,
            counters: LinkCounters::default(),
            warnings: 0,
            last_outputs: MotorInputs::NEUTRAL,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn supervisor(&self) -> &Supervisor {
        &self.supervisor
    }

    pub fn mode(&self) -> Mode {
        self.supervisor.mode()
    }

    /// Gated outputs applied during the last step.
    pub fn motor_outputs(&self) -> MotorInputs {
        self.last_outputs
    }

    pub fn audible_warnings(&self) -> u64 {
        self.warnings
    }

    pub fn now(&self) -> Duration {
        Duration::from_nanos(self.cfg.dt_duration().as_nanos() as u64 * self.steps)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Current Arduino rail voltage.
    pub fn supply_voltage(&self) -> f64 {
        self.cfg.battery.supply_from_battery(self.state.v_battery)
    }

    /// Bytes arriving from the host on one link. Returns the bytes the
    /// controller writes back.
    pub fn receive(&mut self, endpoint: Endpoint, bytes: &[u8]) -> Vec<u8> {
        let lines = match endpoint {
            Endpoint::SpeedController => self.speed_rx.push(bytes),
            Endpoint::SteeringController => self.steer_rx.push(bytes),
        };
        let mut out = Vec::new();
        for line in lines {
            let frame = decode(&line, endpoint);
            if let Some(reply) = self.handle_frame(endpoint, frame) {
                out.extend(encode(&reply).expect("replies are well formed"));
            }
        }
        out
    }

    fn handle_frame(&mut self, endpoint: Endpoint, frame: Frame) -> Option<Frame> {
        self.counters.frames += 1;
        match frame {
            Frame::SpeedCmd(b) => self.dac_byte = b,
            Frame::SteerCmd(c) => self.steer_target = c,
            Frame::BatteryQuery => {
                let adc = self.cfg.battery.divider_output(self.state.v_battery);
                let volts = self.cfg.battery.battery_voltage_from_adc(adc);
                return Some(Frame::BatteryReply(round_half_away(volts * 100.0).max(0) as u32));
            }
            Frame::Heartbeat(stamp) if endpoint == Endpoint::SpeedController => {
                if self.last_hb_stamp.is_some_and(|prev| stamp < prev) {
                    self.counters.stale_heartbeats += 1;
                } else {
                    self.last_hb_stamp = Some(stamp);
                    self.counters.heartbeats += 1;
                    let now = self.now();
                    self.supervisor.handle(Event::new(now, EventKind::HeartbeatRx));
                }
            }
            Frame::Heartbeat(_) | Frame::BatteryReply(_) => {}
            Frame::Malformed(raw) => {
                self.counters.malformed += 1;
                // Out-of-range steering counts are clamped by the limiter
                // rather than dropped.
                if endpoint == Endpoint::SteeringController {
                    if let Some(value) = raw
                        .strip_prefix(b"FA:")
                        .filter(|d| !d.is_empty() && d.len() <= 12 && d.iter().all(u8::is_ascii_digit))
                        .and_then(|d| std::str::from_utf8(d).ok()?.parse::<i64>().ok())
                    {
                        self.steer_target = self.supervisor.limit_steering(value);
                    }
                }
            }
        }
        None
    }

    pub fn panel(&mut self, input: PanelInput) {
        let now = self.now();
        let kind = match input {
            PanelInput::DmhPress => EventKind::DmhPress,
            PanelInput::DmhRelease => EventKind::DmhRelease,
            PanelInput::Ignition => {
                let effective = self.cfg.speed_cal.effective_command(self.dac_byte, self.supply_voltage());
                EventKind::IgnitionRequest(round_half_away(effective))
            }
            PanelInput::BlowFuse => EventKind::FuseEvent,
        };
        let effects = self.supervisor.handle(Event::new(now, kind));
        self.warnings += effects
            .iter()
            .filter(|e| **e == crate::safety::Effect::AudibleWarning)
            .count() as u64;
    }

    /// Advances one physics step. Safety ticks run first so an expired
    /// watchdog neutralizes the outputs of this very step.
    pub fn advance(&mut self) {
        self.steps += 1;
        let now = self.now();
        if self.steps.is_multiple_of(self.cfg.steps_per_tick()) {
            let supply = self.supply_voltage();
            self.supervisor.handle(Event::new(now, EventKind::SupplyReading(supply)));
            self.supervisor.handle(Event::new(now, EventKind::Tick));
        }
        let (speed_cmd, steer_cmd) = self.supervisor.gate(self.dac_byte, i64::from(self.steer_target));
        self.last_outputs = MotorInputs { speed_cmd, steer_cmd };
        self.state = step(&self.state, self.last_outputs, &self.cfg);
        if self.cfg.speed_noise > 0.0 {
            let u: f64 = self.rng.random_range(-1.0..=1.0);
            self.state.v = (self.state.v * (1.0 + self.cfg.speed_noise * u)).clamp(-self.cfg.max_speed, self.cfg.max_speed);
        }
    }

    pub fn telemetry_due(&self) -> bool {
        self.steps.is_multiple_of(self.cfg.steps_per_telemetry())
    }

    pub fn telemetry(&self) -> TelemetryRecord {
        let s = &self.state;
        let safety = self.supervisor.state();
        TelemetryRecord {
            t: s.t,
            x: s.x,
            y: s.y,
            heading: s.heading,
            v: s.v,
            steer_angle: s.steer_angle,
            actuator_ext: s.actuator_ext,
            v_battery: s.v_battery,
            safety_mode: safety.mode,
            fault_reason: safety.fault_reason,
            heartbeat_age: safety.last_heartbeat.map(|hb| (self.now().saturating_sub(hb)).as_secs_f64()),
            speed_cmd: self.last_outputs.speed_cmd,
            steer_cmd: self.last_outputs.steer_cmd,
            clamp_count: self.supervisor.clamp_count(),
            nav: None,
        }
    }
}

/// Moves pending bytes from `link` into the vehicle and writes its reply.
/// Returns true when the link is closed.
fn pump(vehicle: &mut SimVehicle, endpoint: Endpoint, link: &mut dyn Link) -> io::Result<bool> {
    match link.recv_available() {
        Ok(bytes) => {
            let reply = vehicle.receive(endpoint, &bytes);
            Ok(!reply.is_empty() && link.send(&reply).is_err())
        }
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(true),
        Err(e) => Err(e),
    }
}

/// Runs the simulated controllers over two byte links, one physics step at a
/// time, until `stop` is set or either link closes. Panel inputs queued on
/// `panel` apply before the next step. The final state is always flushed to
/// `telemetry`.
pub fn serve(
    vehicle: &mut SimVehicle,
    speed: &mut dyn Link,
    steer: &mut dyn Link,
    panel: &Receiver<PanelInput>,
    pace: Option<Duration>,
    stop: &AtomicBool,
    telemetry: &mut dyn FnMut(&TelemetryRecord),
) -> io::Result<()> {
    let start = Instant::now();
    let result = loop {
        if stop.load(Ordering::Relaxed) {
            break Ok(());
        }
        for input in panel.try_iter() {
            vehicle.panel(input);
        }
        let closed = pump(vehicle, Endpoint::SpeedController, speed)? | pump(vehicle, Endpoint::SteeringController, steer)?;
        if closed {
            break Ok(());
        }
        vehicle.advance();
        if vehicle.telemetry_due() {
            telemetry(&vehicle.telemetry());
        }
        if let Some(step) = pace {
            let due = start + step * vehicle.steps() as u32;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
    };
    telemetry(&vehicle.telemetry());
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_command_is_a_fixed_point() {
        let cfg = SimConfig { initial_pose: Pose2D::new(1.5, -2.0, -0.7), ..SimConfig::default() };
        let mut s = VehicleState::initial(&cfg);
        let start = s;
        for _ in 0..500 {
            s = step(&s, MotorInputs::NEUTRAL, &cfg);
        }
        assert_eq!((s.x, s.y, s.heading, s.v), (start.x, start.y, start.heading, 0.0));
        assert!((s.t - 5.0).abs() < 1e-9);
    }

    #[test]
    fn dead_zone_targets_zero() {
        let cfg = SimConfig::default();
        for b in 133..=200u8 {
            assert_eq!(target_speed(b, 24.0, &cfg), 0.0);
        }
        assert!(target_speed(210, 24.0, &cfg) > 0.0);
        assert!(target_speed(100, 24.0, &cfg) < 0.0);
    }

    #[test]
    fn sagging_rail_shifts_the_effective_byte() {
        let cfg = SimConfig::default();
        // 23.52 V battery -> 4.9 V rail; byte 214 reads as 209.72.
        let sag = target_speed(214, 23.52, &cfg);
        let nominal = cfg.speed_cal.command_to_speed(214.0 * 4.9 / 5.0);
        assert!((sag - nominal).abs() < 1e-12);
    }

    #[test]
    fn battery_query_reply() {
        let mut sim = SimVehicle::new(SimConfig::default());
        assert_eq!(sim.receive(Endpoint::SpeedController, b"BV\n"), b"BV:2400\n");
        assert!(sim.receive(Endpoint::SteeringController, b"BV\n").is_empty());
    }

    #[test]
    fn out_of_range_steering_is_limited() {
        let mut sim = SimVehicle::new(SimConfig::default());
        sim.receive(Endpoint::SteeringController, b"FA:2600\n");
        assert_eq!(sim.steer_target, 2500);
        assert_eq!(sim.supervisor().clamp_count(), 1);
        assert_eq!(sim.counters.malformed, 1);
    }

    #[test]
    fn not_armed_means_neutral() {
        let mut sim = SimVehicle::new(SimConfig::default());
        sim.receive(Endpoint::SpeedController, b"FA:240\n");
        for _ in 0..100 {
            sim.advance();
        }
        assert_eq!(sim.state().v, 0.0);
        assert_eq!(sim.motor_outputs().speed_cmd, 170);
    }

    #[test]
    fn ignition_samples_the_dac_byte() {
        let mut sim = SimVehicle::new(SimConfig::default());
        sim.receive(Endpoint::SpeedController, b"FA:210\n");
        sim.panel(PanelInput::DmhPress);
        sim.panel(PanelInput::Ignition);
        assert_eq!(sim.mode(), Mode::IgnitionPending);
        assert_eq!(sim.audible_warnings(), 1);
        sim.receive(Endpoint::SpeedController, b"FA:164\n");
        sim.panel(PanelInput::Ignition);
        assert_eq!(sim.mode(), Mode::Armed);
    }

    #[test]
    fn regressing_heartbeat_is_not_a_heartbeat() {
        let mut sim = SimVehicle::new(SimConfig::default());
        sim.receive(Endpoint::SpeedController, b"HB:100\nHB:50\nHB:100\n");
        assert_eq!(sim.counters.heartbeats, 2);
        assert_eq!(sim.counters.stale_heartbeats, 1);
    }

    #[test]
    fn serve_answers_over_pipes_and_flushes_on_close() {
        use crate::transport::{pipe, Link};
        let (mut host_speed, mut sim_speed) = pipe();
        let (host_steer, mut sim_steer) = pipe();
        host_speed.send(b"BV\n").unwrap();
        drop(host_steer);
        let mut sim = SimVehicle::new(SimConfig::default());
        let mut records = 0;
        let (_panel_tx, panel) = std::sync::mpsc::channel();
        serve(&mut sim, &mut sim_speed, &mut sim_steer, &panel, None, &AtomicBool::new(false), &mut |_| records += 1)
            .unwrap();
        assert_eq!(host_speed.recv_available().unwrap(), b"BV:2400\n");
        assert_eq!(records, 1);
    }
}
