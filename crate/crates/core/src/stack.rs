//! The whole vehicle in one process: bus, driver nodes, navigator and the
//! simulated controllers, stepped in lock-step at the control tick.
//!
//! One [`Stack::tick`] does, in order: drain operator events, goals and
//! joystick samples; run the navigator; hand the latest commands to the
//! drivers; push their frames through both links; then run the physics
//! steps of one tick. An operator event therefore reaches the wire in the
//! same tick it is taken off the bus.

use std::sync::mpsc::Receiver;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bus::{self, Bus, ControlMode, GoalRequest, JoystickSample, OperatorEvent, Payload, TopicMessage};
use crate::capture::{Capture, Direction};
use crate::drivers::{joystick_to_speed, joystick_to_wheel_angle, SpeedDriver, SpeedDriverConfig, SteerDriver};
use crate::planner::{NavConfig, NavStatus, Navigator};
use crate::pose::Pose2D;
use crate::protocol::{decode, Endpoint, LineBuffer};
use crate::safety::{Mode, SafetyConfig};
use crate::simulator::{PanelInput, SimConfig, SimVehicle};
use crate::telemetry::{NavTelemetry, TelemetryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub sim: SimConfig,
    pub safety: SafetyConfig,
    pub nav: NavConfig,
    pub speed_driver: SpeedDriverConfig,
    /// Record both links into captures.
    pub capture: bool,
}

impl Default for StackConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            safety: SafetyConfig {
                supply_min: sim.speed_cal.supply_min,
                supply_max: sim.speed_cal.supply_max,
                steer_center: sim.actuator.cmd_center,
                ..SafetyConfig::default()
            },
            nav: NavConfig {
                follower: crate::planner::FollowerConfig { wheelbase: sim.wheelbase, ..Default::default() },
                ..NavConfig::default()
            },
            sim,
            speed_driver: SpeedDriverConfig::default(),
            capture: false,
        }
    }
}

struct Subscriptions {
    speed: Receiver<TopicMessage>,
    angle: Receiver<TopicMessage>,
    joystick: Receiver<TopicMessage>,
    goal: Receiver<TopicMessage>,
    operator: Receiver<TopicMessage>,
}

pub struct Stack {
    cfg: StackConfig,
    bus: Bus,
    subs: Subscriptions,
    vehicle: SimVehicle,
    speed: SpeedDriver,
    steer: SteerDriver,
    nav: Navigator,
    mode: ControlMode,
    ignored_joystick: u64,
    reported_path: u64,
    speed_rx: LineBuffer,
    captures: Option<[Capture; 2]>,
}

impl Stack {
    pub fn new(cfg: StackConfig) -> Self {
        let mut bus = Bus::standard();
        let mut sub = |t| bus.subscribe(t).expect("standard topic");
        let subs = Subscriptions {
            speed: sub(bus::SPEED_CMD),
            angle: sub(bus::WHEEL_ANGLE_CMD),
            joystick: sub(bus::JOYSTICK),
            goal: sub(bus::GOAL),
            operator: sub(bus::OPERATOR),
        };
        Self {
            vehicle: SimVehicle::with_safety(cfg.sim, cfg.safety),
            speed: SpeedDriver::new(cfg.sim.speed_cal, cfg.sim.battery, cfg.speed_driver),
            steer: SteerDriver::new(cfg.sim.actuator),
            nav: Navigator::new(cfg.nav),
            mode: ControlMode::Teleop,
            ignored_joystick: 0,
            reported_path: 0,
            speed_rx: LineBuffer::new(),
            captures: cfg
                .capture
                .then(|| [Capture::new(Endpoint::SpeedController), Capture::new(Endpoint::SteeringController)]),
            bus,
            subs,
            cfg,
        }
    }

    pub fn config(&self) -> &StackConfig {
        &self.cfg
    }

    pub fn bus(&mut self) -> &mut Bus {
        &mut self.bus
    }

    pub fn vehicle(&self) -> &SimVehicle {
        &self.vehicle
    }

    pub fn navigator(&self) -> &Navigator {
        &self.nav
    }

    pub fn speed_driver(&mut self) -> &mut SpeedDriver {
        &mut self.speed
    }

    pub fn steer_driver(&self) -> &SteerDriver {
        &self.steer
    }

    pub fn control_mode(&self) -> ControlMode {
        self.mode
    }

    pub fn ignored_joystick(&self) -> u64 {
        self.ignored_joystick
    }

    pub fn now(&self) -> Duration {
        self.vehicle.now()
    }

    pub fn pose(&self) -> Pose2D {
        self.vehicle.state().pose()
    }

    pub fn safety_mode(&self) -> Mode {
        self.vehicle.mode()
    }

    pub fn captures(&self) -> Option<&[Capture; 2]> {
        self.captures.as_ref()
    }

    fn publish(&mut self, topic: &str, payload: Payload) {
        let now = self.now();
        self.bus.publish(topic, payload, now).expect("standard topic with matching payload");
    }

    pub fn operator(&mut self, event: OperatorEvent) {
        self.publish(bus::OPERATOR, Payload::Operator(event));
    }

    pub fn joystick(&mut self, sample: JoystickSample) {
        self.publish(bus::JOYSTICK, Payload::Joystick(sample));
    }

    pub fn goto(&mut self, goal: GoalRequest) {
        self.publish(bus::GOAL, Payload::Goal(goal));
    }

    pub fn command(&mut self, speed: f64, wheel_angle: f64) {
        self.publish(bus::SPEED_CMD, Payload::Scalar(speed));
        self.publish(bus::WHEEL_ANGLE_CMD, Payload::Scalar(wheel_angle));
    }

    fn panel(&mut self, input: PanelInput) {
        let now = self.now();
        if let Some(c) = self.captures.as_mut() {
            c[0].record_panel(now, input);
        }
        self.vehicle.panel(input);
    }

    fn set_mode(&mut self, mode: ControlMode) {
        if mode != self.mode {
            self.mode = mode;
            self.nav.cancel();
            self.command(0.0, self.steer.target());
        }
    }

    /// Returns true when the key is turned this tick.
    fn handle_operator(&mut self) -> bool {
        let mut ignition = false;
        let events: Vec<_> = self.subs.operator.try_iter().collect();
        for msg in events {
            let Payload::Operator(ev) = msg.payload else { continue };
            match ev {
                OperatorEvent::DmhPress => self.panel(PanelInput::DmhPress),
                OperatorEvent::DmhRelease => self.panel(PanelInput::DmhRelease),
                OperatorEvent::BlowFuse => self.panel(PanelInput::BlowFuse),
                OperatorEvent::Ignition => {
                    self.speed.prepare_ignition();
                    ignition = true;
                }
                OperatorEvent::SetMode(m) => self.set_mode(m),
                OperatorEvent::CancelGoal => {
                    self.nav.cancel();
                    self.command(0.0, self.steer.target());
                }
            }
        }
        ignition
    }

    fn handle_inputs(&mut self) {
        let goals: Vec<_> = self.subs.goal.try_iter().collect();
        for msg in goals {
            if let Payload::Goal(g) = msg.payload {
                self.mode = ControlMode::Autonomous;
                let (pose, now) = (self.pose(), self.now());
                self.nav.goto(g.pose, g.tol, pose, now);
            }
        }
        let samples: Vec<_> = self.subs.joystick.try_iter().collect();
        for msg in samples {
            let Payload::Joystick(s) = msg.payload else { continue };
            if self.mode != ControlMode::Teleop {
                self.ignored_joystick += 1;
                continue;
            }
            let cal = &self.cfg.sim.speed_cal;
            let v = joystick_to_speed(s.y, cal.max_forward_speed, cal.max_reverse_speed);
            self.command(v, joystick_to_wheel_angle(s.x));
        }
        if self.mode == ControlMode::Autonomous && self.nav.is_active() {
            let (pose, steer, now) = (self.pose(), self.vehicle.state().steer_angle, self.now());
            let cmd = self.nav.tick(pose, steer, now);
            self.command(cmd.speed, cmd.wheel_angle);
        }
    }

    fn exchange(&mut self, ignition: bool) {
        let now = self.now();
        if let Some(v) = self.subs.speed.try_iter().filter_map(scalar).last() {
            self.speed.set_speed(v);
        }
        if let Some(a) = self.subs.angle.try_iter().filter_map(scalar).last() {
            self.steer.set_angle(a);
        }
        if ignition {
            self.speed.prepare_ignition();
        }

        let out = self.speed.poll_bytes(now);
        let reply = self.vehicle.receive(Endpoint::SpeedController, &out);
        for line in self.speed_rx.push(&reply) {
            self.speed.on_reply(&decode(&line, Endpoint::SpeedController));
        }
        let steer_out = self.steer.poll_bytes();
        let steer_reply = self.vehicle.receive(Endpoint::SteeringController, &steer_out);
        if let Some(c) = self.captures.as_mut() {
            c[0].record(Direction::ToController, now, &out);
            c[0].record(Direction::FromController, now, &reply);
            c[1].record(Direction::ToController, now, &steer_out);
            c[1].record(Direction::FromController, now, &steer_reply);
        }
        if ignition {
            self.panel(PanelInput::Ignition);
        }
    }

    /// One control tick; returns the telemetry records produced by its
    /// physics steps.
    pub fn tick(&mut self) -> Vec<TelemetryRecord> {
        let ignition = self.handle_operator();
        self.handle_inputs();
        self.exchange(ignition);

        let mut out = Vec::new();
        for _ in 0..self.cfg.sim.steps_per_tick() {
            self.vehicle.advance();
            if self.vehicle.telemetry_due() {
                let rec = self.telemetry();
                self.publish(bus::TELEMETRY, Payload::Telemetry(Box::new(rec.clone())));
                out.push(rec);
            }
        }
        out
    }

    /// Current snapshot; the sampled path is attached once per plan.
    pub fn telemetry(&mut self) -> TelemetryRecord {
        let mut rec = self.vehicle.telemetry();
        let version = self.nav.path_version();
        let path = (version != self.reported_path)
            .then(|| self.nav.path())
            .flatten()
            .map(|p| p.sample(0.1).iter().map(|q| [q.x, q.y, q.heading]).collect());
        if path.is_some() {
            self.reported_path = version;
        }
        rec.nav = Some(NavTelemetry {
            control_mode: self.mode.to_string(),
            status: self.nav.status().label(),
            goal: self.nav.goal().map(|(g, _)| g),
            path,
            path_version: version,
            ignored_joystick: self.ignored_joystick,
            steer_clamps: self.steer.clamp_count(),
        });
        rec
    }

    /// Presses the handle and turns the key, then ticks until armed or
    /// `max_ticks` pass.
    pub fn arm(&mut self, max_ticks: usize) -> bool {
        self.operator(OperatorEvent::DmhPress);
        self.operator(OperatorEvent::Ignition);
        for _ in 0..max_ticks {
            self.tick();
            if self.safety_mode() == Mode::Armed {
                return true;
            }
        }
        false
    }

    /// Ticks until the navigator leaves `Active` or `budget` of sim time
    /// passes. Returns the telemetry produced.
    pub fn run_goal(&mut self, goal: GoalRequest, budget: Duration) -> Vec<TelemetryRecord> {
        self.goto(goal);
        let deadline = self.now() + budget;
        let mut out = self.tick();
        while self.nav.is_active() && self.now() < deadline {
            out.extend(self.tick());
        }
        out
    }

    pub fn nav_status(&self) -> &NavStatus {
        self.nav.status()
    }
}

fn scalar(m: TopicMessage) -> Option<f64> {
    match m.payload {
        Payload::Scalar(v) => Some(v),
        _ => None,
    }
}
