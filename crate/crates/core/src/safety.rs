//! Layered safety supervisor: dead-man's handle, ignition in the dead zone,
//! heartbeat watchdog, supply plausibility, fuse faults and the steering
//! limiter.
//!
//! ```text
//!  PowerOff --DmhPress--> IgnitionPending --Ignition(dead zone)--> Armed
//!     ^                        |  ^  Ignition(moving byte): beep    |
//!     |                        |  +-------------------------------+ |
//!     +------DmhRelease--------+                                    |
//!     +------DmhRelease------------------------------------------- +
//!     +------DmhRelease------ Fault <--watchdog / supply / fuse ----+
//! ```
//!
//! Every motor command passes through [`Supervisor::gate`]; outside `Armed`
//! it yields the stop byte and holds the last steering position.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::drivebywire::SpeedCalibration;
use crate::protocol::{STEER_MAX, STEER_MIN};

pub const WATCHDOG_PERIOD: Duration = Duration::from_millis(100);
pub const NEUTRAL_SPEED: u8 = 170;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    PowerOff,
    IgnitionPending,
    Armed,
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultReason {
    WatchdogExpired,
    DmhReleased,
    SupplyOutOfBand,
    FuseBlown,
    OutOfOrderEvent,
}

/// What happens to the steering actuator when the supervisor disarms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SteeringOnDisarm {
    /// Keep the last commanded position.
    #[default]
    Hold,
    /// Drive back to the center count.
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    #[serde(with = "duration_millis")]
    pub watchdog_period: Duration,
    pub supply_min: f64,
    pub supply_max: f64,
    pub steering_on_disarm: SteeringOnDisarm,
    pub steer_center: u16,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            watchdog_period: WATCHDOG_PERIOD,
            supply_min: 3.5,
            supply_max: 5.5,
            steering_on_disarm: SteeringOnDisarm::Hold,
            steer_center: 1900,
        }
    }
}

pub(crate) mod duration_millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyState {
    pub mode: Mode,
    pub dmh_pressed: bool,
    /// Time of the last heartbeat, since session start.
    pub last_heartbeat: Option<Duration>,
    pub last_event: Duration,
    pub fault_reason: Option<FaultReason>,
}

impl Default for SafetyState {
    fn default() -> Self {
        Self {
            mode: Mode::PowerOff,
            dmh_pressed: false,
            last_heartbeat: None,
            last_event: Duration::ZERO,
            fault_reason: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    HeartbeatRx,
    DmhPress,
    DmhRelease,
    IgnitionRequest(i64),
    Tick,
    SupplyReading(f64),
    FuseEvent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub at: Duration,
    pub kind: EventKind,
}

impl Event {
    pub fn new(at: Duration, kind: EventKind) -> Self {
        Self { at, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Effect {
    RelayClosed,
    RelayOpen,
    AudibleWarning,
    MotorsNeutral,
}

/// Pure transition function.
pub fn step(
    state: &SafetyState,
    event: &Event,
    cfg: &SafetyConfig,
    speed: &SpeedCalibration,
) -> (SafetyState, Vec<Effect>) {
    let mut next = *state;
    let mut effects = Vec::new();
    let was_powered = matches!(state.mode, Mode::Armed);

    let trip = |next: &mut SafetyState, effects: &mut Vec<Effect>, reason: FaultReason| {
        if next.mode != Mode::Fault {
            next.mode = Mode::Fault;
            next.fault_reason = Some(reason);
            effects.push(Effect::MotorsNeutral);
            if was_powered {
                effects.push(Effect::RelayOpen);
            }
        }
    };

    if event.at < state.last_event {
        trip(&mut next, &mut effects, FaultReason::OutOfOrderEvent);
        return (next, effects);
    }
    next.last_event = event.at;

    match event.kind {
        EventKind::HeartbeatRx => next.last_heartbeat = Some(event.at),
        EventKind::DmhPress => {
            next.dmh_pressed = true;
            if state.mode == Mode::PowerOff {
                next.mode = Mode::IgnitionPending;
                next.fault_reason = None;
            }
        }
        EventKind::DmhRelease => {
            next.dmh_pressed = false;
            match state.mode {
                Mode::Armed => {
                    next.mode = Mode::PowerOff;
                    next.fault_reason = Some(FaultReason::DmhReleased);
                    effects.push(Effect::RelayOpen);
                    effects.push(Effect::MotorsNeutral);
                }
                Mode::IgnitionPending | Mode::Fault => next.mode = Mode::PowerOff,
                Mode::PowerOff => {}
            }
        }
        EventKind::IgnitionRequest(cmd) => {
            if state.mode == Mode::IgnitionPending {
                if speed.in_ignition_dead_zone(cmd) && state.dmh_pressed {
                    next.mode = Mode::Armed;
                    next.fault_reason = None;
                    // Ignition counts as a fresh, well-formed command.
                    next.last_heartbeat = Some(event.at);
                    effects.push(Effect::RelayClosed);
                } else {
                    effects.push(Effect::AudibleWarning);
                }
            }
        }
        EventKind::Tick => {
            if state.mode == Mode::Armed {
                let stale = match state.last_heartbeat {
                    Some(hb) => event.at - hb > cfg.watchdog_period,
                    None => true,
                };
                if stale {
                    trip(&mut next, &mut effects, FaultReason::WatchdogExpired);
                }
            }
        }
        EventKind::SupplyReading(v) => {
            if !(v >= cfg.supply_min && v <= cfg.supply_max) {
                trip(&mut next, &mut effects, FaultReason::SupplyOutOfBand);
            }
        }
        EventKind::FuseEvent => trip(&mut next, &mut effects, FaultReason::FuseBlown),
    }
    (next, effects)
}

/// Clamps a steering count to the mechanically safe range.
pub fn limit_steering(cmd: i64) -> u16 {
    cmd.clamp(i64::from(STEER_MIN), i64::from(STEER_MAX)) as u16
}

/// Pure gate: the commands that may reach the motors in `state`.
pub fn gate_motor_output(state: &SafetyState, speed_cmd: u8, steer_cmd: i64, hold: u16) -> (u8, u16) {
    if state.mode == Mode::Armed {
        (speed_cmd, limit_steering(steer_cmd))
    } else {
        (NEUTRAL_SPEED, hold)
    }
}

/// Stateful supervisor: the state machine plus the steering hold position and
/// the limiter's clamp counter.
#[derive(Debug, Clone)]
pub struct Supervisor {
    state: SafetyState,
    cfg: SafetyConfig,
    speed: SpeedCalibration,
    steer_hold: u16,
    clamp_count: u64,
}

impl Supervisor {
    pub fn new(cfg: SafetyConfig, speed: SpeedCalibration) -> Self {
        Self { state: SafetyState::default(), steer_hold: cfg.steer_center, cfg, speed, clamp_count: 0 }
    }

    pub fn state(&self) -> SafetyState {
        self.state
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    pub fn steer_hold(&self) -> u16 {
        self.steer_hold
    }

    pub fn handle(&mut self, event: Event) -> Vec<Effect> {
        let (next, effects) = step(&self.state, &event, &self.cfg, &self.speed);
        if next.mode != Mode::Armed
            && self.state.mode == Mode::Armed
            && self.cfg.steering_on_disarm == SteeringOnDisarm::Center
        {
            self.steer_hold = self.cfg.steer_center;
        }
        self.state = next;
        effects
    }

    /// Limits and counts.
    pub fn limit_steering(&mut self, cmd: i64) -> u16 {
        let limited = limit_steering(cmd);
        if i64::from(limited) != cmd {
            self.clamp_count += 1;
        }
        limited
    }

    /// The single choke point for motor commands.
    pub fn gate(&mut self, speed_cmd: u8, steer_cmd: i64) -> (u8, u16) {
        if self.state.mode == Mode::Armed {
            let steer = self.limit_steering(steer_cmd);
            self.steer_hold = steer;
            (speed_cmd, steer)
        } else {
            (NEUTRAL_SPEED, self.steer_hold)
        }
    }
}
