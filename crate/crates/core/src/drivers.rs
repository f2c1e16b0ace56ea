//! Host-side driver nodes: bus commands in, serial frames out.

use std::f64::consts::FRAC_PI_4;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::drivebywire::{BatteryModel, SpeedCalibration};
use crate::geometry::ActuatorCalibration;
use crate::protocol::{encode, Frame, STEER_MAX, STEER_MIN};
use crate::safety::{limit_steering, NEUTRAL_SPEED};

/// Stick travel treated as centred, as a fraction of full scale.
pub const JOYSTICK_DEADBAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedDriverConfig {
    /// Heartbeat cadence; keep well under the watchdog period.
    #[serde(with = "crate::safety::duration_millis")]
    pub heartbeat_period: Duration,
    #[serde(with = "crate::safety::duration_millis")]
    pub battery_query_period: Duration,
}

impl Default for SpeedDriverConfig {
    fn default() -> Self {
        Self { heartbeat_period: Duration::from_millis(20), battery_query_period: Duration::from_secs(1) }
    }
}

/// Turns `/speedcmd_meterssec` into `FA` bytes on the speed link, corrected
/// for the last measured supply, and keeps the heartbeat going.
#[derive(Debug, Clone)]
pub struct SpeedDriver {
    cal: SpeedCalibration,
    battery: BatteryModel,
    cfg: SpeedDriverConfig,
    target: f64,
    ignition_hold: bool,
    supply_estimate: f64,
    last_heartbeat: Option<Duration>,
    last_query: Option<Duration>,
    heartbeats_enabled: bool,
    last_byte: u8,
}

impl SpeedDriver {
    pub fn new(cal: SpeedCalibration, battery: BatteryModel, cfg: SpeedDriverConfig) -> Self {
        Self {
            supply_estimate: cal.v_supply_nominal,
            cal,
            battery,
            cfg,
            target: 0.0,
            ignition_hold: false,
            last_heartbeat: None,
            last_query: None,
            heartbeats_enabled: true,
            last_byte: NEUTRAL_SPEED,
        }
    }

    pub fn set_speed(&mut self, v: f64) {
        self.target = if v.is_finite() { v } else { 0.0 };
        self.ignition_hold = false;
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    /// Parks the DAC on the ignition byte until the next speed command.
    pub fn prepare_ignition(&mut self) {
        self.target = 0.0;
        self.ignition_hold = true;
    }

    /// Test-mode fault injection: suppress heartbeats.
    pub fn set_heartbeats(&mut self, enabled: bool) {
        self.heartbeats_enabled = enabled;
    }

    pub fn heartbeats_enabled(&self) -> bool {
        self.heartbeats_enabled
    }

    /// Estimated Arduino rail voltage from the last battery reply.
    pub fn supply_estimate(&self) -> f64 {
        self.supply_estimate
    }

    pub fn last_byte(&self) -> u8 {
        self.last_byte
    }

    /// Feeds a frame read back from the speed controller.
    pub fn on_reply(&mut self, frame: &Frame) {
        if let Frame::BatteryReply(centivolts) = frame {
            self.supply_estimate = self.battery.supply_from_battery(f64::from(*centivolts) / 100.0);
        }
    }

    /// Byte for the current target at the estimated supply. Falls back to the
    /// uncorrected byte when the supply estimate is implausible.
    pub fn command_byte(&self) -> u8 {
        let nominal = if self.ignition_hold {
            self.cal.cmd_ignition
        } else {
            self.cal.speed_to_command(self.target).unwrap_or(self.cal.cmd_stop)
        };
        self.cal.compensate_for_supply(i64::from(nominal), self.supply_estimate).unwrap_or(nominal)
    }

    /// Frames due at `now`.
    pub fn poll(&mut self, now: Duration) -> Vec<Frame> {
        let due = |last: Option<Duration>, period: Duration| last.is_none_or(|t| now.saturating_sub(t) >= period);
        let mut out = Vec::with_capacity(3);
        if self.heartbeats_enabled && due(self.last_heartbeat, self.cfg.heartbeat_period) {
            self.last_heartbeat = Some(now);
            out.push(Frame::Heartbeat(now.as_millis() as u64));
        }
        if due(self.last_query, self.cfg.battery_query_period) {
            self.last_query = Some(now);
            out.push(Frame::BatteryQuery);
        }
        self.last_byte = self.command_byte();
        out.push(Frame::SpeedCmd(self.last_byte));
        out
    }

    pub fn poll_bytes(&mut self, now: Duration) -> Vec<u8> {
        self.poll(now).iter().flat_map(|f| encode(f).expect("driver frames are well formed")).collect()
    }
}

/// Turns `/wheelAngleCmd` into `FA` counts on the steering link.
#[derive(Debug, Clone)]
pub struct SteerDriver {
    actuator: ActuatorCalibration,
    target: f64,
    clamp_count: u64,
}

impl SteerDriver {
    pub fn new(actuator: ActuatorCalibration) -> Self {
        Self { actuator, target: 0.0, clamp_count: 0 }
    }

    pub fn set_angle(&mut self, theta: f64) {
        self.target = if theta.is_finite() { theta } else { 0.0 };
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    /// Limited count for `theta`; out-of-range requests bump the counter.
    pub fn command_for(&mut self, theta: f64) -> u16 {
        let raw = self.actuator.extrapolated_command(theta);
        if raw < i64::from(STEER_MIN) || raw > i64::from(STEER_MAX) {
            self.clamp_count += 1;
        }
        limit_steering(raw)
    }

    pub fn poll(&mut self) -> Frame {
        Frame::SteerCmd(self.command_for(self.target))
    }

    pub fn poll_bytes(&mut self) -> Vec<u8> {
        encode(&self.poll()).expect("limited counts are in range")
    }
}

fn deadband(a: f64) -> f64 {
    if a.abs() < JOYSTICK_DEADBAND {
        0.0
    } else {
        a.clamp(-1.0, 1.0)
    }
}

/// Stick y axis to m/s. Full forward is `v_max`; full back is `-v_reverse`.
pub fn joystick_to_speed(y: f64, v_max: f64, v_reverse: f64) -> f64 {
    let y = deadband(y);
    if y >= 0.0 {
        y * v_max
    } else {
        y * v_reverse
    }
}

/// Stick x axis to wheel angle; positive x (stick left) steers left.
pub fn joystick_to_wheel_angle(x: f64) -> f64 {
    deadband(x) * FRAC_PI_4
}

#[cfg(test)]
mod tests {
    use super::*;

    fn speed_driver() -> SpeedDriver {
        SpeedDriver::new(SpeedCalibration::default(), BatteryModel::default(), SpeedDriverConfig::default())
    }

    #[test]
    fn stop_at_nominal_supply() {
        let mut d = speed_driver();
        d.set_speed(0.0);
        let frames = d.poll(Duration::ZERO);
        assert_eq!(frames.last(), Some(&Frame::SpeedCmd(170)));
        assert_eq!(encode(frames.last().unwrap()).unwrap(), b"FA:170\n");
    }

    #[test]
    fn cruise_byte() {
        let mut d = speed_driver();
        d.set_speed(0.2);
        assert_eq!(d.command_byte(), 210);
    }

    #[test]
    fn sagging_supply_shifts_the_byte() {
        let mut d = speed_driver();
        d.on_reply(&Frame::BatteryReply(2352));
        assert!((d.supply_estimate() - 4.9).abs() < 1e-12);
        d.set_speed(0.0);
        assert_eq!(d.command_byte(), 173);
        d.set_speed(0.2);
        assert_eq!(d.command_byte(), 214);
    }

    #[test]
    fn ignition_byte_until_commanded() {
        let mut d = speed_driver();
        d.prepare_ignition();
        assert_eq!(d.command_byte(), 164);
        d.set_speed(0.0);
        assert_eq!(d.command_byte(), 170);
    }

    #[test]
    fn heartbeat_cadence_without_traffic() {
        let mut d = speed_driver();
        let hb = (0..50)
            .map(|k| d.poll(Duration::from_millis(k * 20)))
            .filter(|f| f.iter().any(|x| matches!(x, Frame::Heartbeat(_))))
            .count();
        assert_eq!(hb, 50);
        d.set_heartbeats(false);
        assert!(!d.poll(Duration::from_secs(2)).iter().any(|x| matches!(x, Frame::Heartbeat(_))));
    }

    #[test]
    fn steering_examples() {
        let mut d = SteerDriver::new(ActuatorCalibration::default());
        d.set_angle(0.0);
        assert_eq!(d.poll_bytes(), b"FA:1900\n");
        d.set_angle(FRAC_PI_4);
        assert_eq!(d.poll_bytes(), b"FA:1000\n");
        assert_eq!(d.clamp_count(), 0);
        d.set_angle(1.0);
        assert_eq!(d.poll_bytes(), b"FA:1000\n");
        assert_eq!(d.clamp_count(), 1);
        d.set_angle(-1.0);
        assert_eq!(d.poll_bytes(), b"FA:2500\n");
        assert_eq!(d.clamp_count(), 2);
    }

    #[test]
    fn joystick_examples() {
        let v = 0.894;
        assert_eq!((joystick_to_speed(0.0, v, v), joystick_to_wheel_angle(0.0)), (0.0, 0.0));
        assert_eq!(joystick_to_speed(1.0, v, v), v);
        assert_eq!(joystick_to_wheel_angle(-1.0), -FRAC_PI_4);
        assert_eq!(joystick_to_speed(0.049, v, v), 0.0);
        assert_eq!(joystick_to_wheel_angle(0.05), 0.05 * FRAC_PI_4);
    }
}
