//! Wigwag speed pipeline: desired speed to command byte, command byte to DAC
//! voltage, supply-sag compensation and battery monitoring.
//!
//! The motor controller reads one analog voltage. Bytes between the slowest
//! reverse and slowest forward rows are a dead zone meaning "no motion"; that
//! band is also the only one in which the controller will accept ignition.
//! The host only ever emits bytes inside the software limits (80..=240).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quant::round_half_away;

/// Metres per second in one mile per hour.
pub const MPH: f64 = 0.44704;

/// Speed the vehicle creeps at with its speed dial on '5'. Used as the
/// default autonomous cruise speed.
pub const DIAL_FIVE_SPEED: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpeedError {
    #[error("speed is NaN")]
    NotANumber,
    #[error("command {0} is outside the byte range 0..=255")]
    CommandOutOfRange(i64),
    #[error("supply voltage {0} V outside plausible band [{1}, {2}]")]
    SupplyOutOfBand(f64, f64, f64),
}

/// Speed-mode toggle on the donor vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveMode {
    Low,
    High,
}

impl DriveMode {
    pub fn top_speed(self) -> f64 {
        match self {
            DriveMode::Low => 4.0 * MPH,
            DriveMode::High => 8.0 * MPH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedCalibration {
    pub cmd_stop: u8,
    pub cmd_ignition: u8,
    pub cmd_slowest_reverse: u8,
    pub cmd_slowest_forward: u8,
    pub cmd_ros_reverse_limit: u8,
    pub cmd_ros_forward_limit: u8,
    pub cmd_min: u8,
    pub cmd_max: u8,
    /// Volts per count at nominal supply.
    pub dac_gain: f64,
    pub v_supply_nominal: f64,
    /// Speed at the forward software limit, m/s.
    pub max_forward_speed: f64,
    /// Speed magnitude at the reverse software limit, m/s.
    pub max_reverse_speed: f64,
    /// Plausible Arduino rail band, volts.
    pub supply_min: f64,
    pub supply_max: f64,
}

impl Default for SpeedCalibration {
    fn default() -> Self {
        Self::for_mode(DriveMode::Low, 0.5)
    }
}

impl SpeedCalibration {
    /// Calibration with the forward limit at `dial` (0..=1) of the mode's top
    /// speed. Reverse is scaled by the ratio of the reverse and forward byte
    /// spans.
    pub fn for_mode(mode: DriveMode, dial: f64) -> Self {
        let forward = mode.top_speed() * dial.clamp(0.0, 1.0);
        let mut cal = Self {
            cmd_stop: 170,
            cmd_ignition: 164,
            cmd_slowest_reverse: 132,
            cmd_slowest_forward: 201,
            cmd_ros_reverse_limit: 80,
            cmd_ros_forward_limit: 240,
            cmd_min: 0,
            cmd_max: 255,
            dac_gain: 3.0 / 255.0,
            v_supply_nominal: 5.0,
            max_forward_speed: forward,
            max_reverse_speed: 0.0,
            supply_min: 3.5,
            supply_max: 5.5,
        };
        cal.max_reverse_speed = forward * cal.reverse_span() / cal.forward_span();
        cal
    }

    fn forward_span(&self) -> f64 {
        f64::from(self.cmd_ros_forward_limit) - f64::from(self.cmd_slowest_forward)
    }

    fn reverse_span(&self) -> f64 {
        f64::from(self.cmd_slowest_reverse) - f64::from(self.cmd_ros_reverse_limit)
    }

    /// Checks the byte ordering `min <= 80 < 132 < 164 < 170 < 201 < 240 <= max`.
    pub fn is_ordered(&self) -> bool {
        self.cmd_min <= self.cmd_ros_reverse_limit
            && self.cmd_ros_reverse_limit < self.cmd_slowest_reverse
            && self.cmd_slowest_reverse < self.cmd_ignition
            && self.cmd_ignition < self.cmd_stop
            && self.cmd_stop < self.cmd_slowest_forward
            && self.cmd_slowest_forward < self.cmd_ros_forward_limit
            && self.cmd_ros_forward_limit <= self.cmd_max
    }

    /// Maps a desired speed to a command byte. Zero is the stop byte;
    /// anything else lands on the forward or reverse segment, clamped to the
    /// software limits.
    pub fn speed_to_command(&self, v: f64) -> Result<u8, SpeedError> {
        if v.is_nan() {
            return Err(SpeedError::NotANumber);
        }
        let cmd = if v == 0.0 {
            f64::from(self.cmd_stop)
        } else if v > 0.0 {
            let frac = (v / self.max_forward_speed).min(1.0);
            f64::from(self.cmd_slowest_forward) + frac * self.forward_span()
        } else {
            let frac = (-v / self.max_reverse_speed).min(1.0);
            f64::from(self.cmd_slowest_reverse) - frac * self.reverse_span()
        };
        let lo = i64::from(self.cmd_ros_reverse_limit);
        let hi = i64::from(self.cmd_ros_forward_limit);
        Ok(round_half_away(cmd).clamp(lo, hi) as u8)
    }

    /// Inverse of [`speed_to_command`](Self::speed_to_command) for a
    /// (possibly fractional) nominal-supply command. The dead zone and its
    /// edges map to zero; bytes past the software limits extrapolate.
    pub fn command_to_speed(&self, cmd: f64) -> f64 {
        let fwd = f64::from(self.cmd_slowest_forward);
        let rev = f64::from(self.cmd_slowest_reverse);
        if cmd > fwd {
            (cmd - fwd) / self.forward_span() * self.max_forward_speed
        } else if cmd < rev {
            -(rev - cmd) / self.reverse_span() * self.max_reverse_speed
        } else {
            0.0
        }
    }

    /// DAC output for `cmd` when the Arduino rail is at `v_supply`.
    pub fn command_to_voltage(&self, cmd: i64, v_supply: f64) -> Result<f64, SpeedError> {
        if !(i64::from(self.cmd_min)..=i64::from(self.cmd_max)).contains(&cmd) {
            return Err(SpeedError::CommandOutOfRange(cmd));
        }
        Ok(cmd as f64 * self.dac_gain * (v_supply / self.v_supply_nominal))
    }

    /// Voltage of one DAC count at `v_supply`.
    pub fn quantum(&self, v_supply: f64) -> f64 {
        self.dac_gain * v_supply / self.v_supply_nominal
    }

    pub fn supply_in_band(&self, v_supply: f64) -> bool {
        v_supply >= self.supply_min && v_supply <= self.supply_max
    }

    /// Rescales `cmd_nominal` so the DAC produces the nominal-supply voltage
    /// on a sagging (or high) rail. Saturates at the byte range.
    pub fn compensate_for_supply(
        &self,
        cmd_nominal: i64,
        v_supply_measured: f64,
    ) -> Result<u8, SpeedError> {
        if !self.supply_in_band(v_supply_measured) {
            return Err(SpeedError::SupplyOutOfBand(
                v_supply_measured,
                self.supply_min,
                self.supply_max,
            ));
        }
        if !(i64::from(self.cmd_min)..=i64::from(self.cmd_max)).contains(&cmd_nominal) {
            return Err(SpeedError::CommandOutOfRange(cmd_nominal));
        }
        let scaled = cmd_nominal as f64 * self.v_supply_nominal / v_supply_measured;
        Ok(round_half_away(scaled).clamp(i64::from(self.cmd_min), i64::from(self.cmd_max)) as u8)
    }

    /// Nominal-supply command equivalent to what the DAC actually outputs
    /// for `cmd` on a rail at `v_supply`.
    pub fn effective_command(&self, cmd: u8, v_supply: f64) -> f64 {
        f64::from(cmd) * v_supply / self.v_supply_nominal
    }

    pub fn in_ignition_dead_zone(&self, cmd: i64) -> bool {
        cmd > i64::from(self.cmd_slowest_reverse) && cmd < i64::from(self.cmd_slowest_forward)
    }
}

/// Battery, potential divider and the Arduino rail it feeds.
///
/// The ADC taps the divider across the bottom resistor, so it reads
/// `v_battery * r_bottom / (r_top + r_bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    pub v_battery_nominal: f64,
    pub divider_r_top: f64,
    pub divider_r_bottom: f64,
    pub v_supply_nominal: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        Self {
            v_battery_nominal: 24.0,
            divider_r_top: 100e3,
            divider_r_bottom: 10e3,
            v_supply_nominal: 5.0,
        }
    }
}

impl BatteryModel {
    fn ratio(&self) -> f64 {
        self.divider_r_bottom / (self.divider_r_top + self.divider_r_bottom)
    }

    pub fn divider_output(&self, v_battery: f64) -> f64 {
        v_battery * self.ratio()
    }

    pub fn battery_voltage_from_adc(&self, adc_reading: f64) -> f64 {
        adc_reading / self.ratio()
    }

    /// Arduino rail for a given battery voltage: proportional sag below
    /// nominal battery, capped at the nominal rail.
    pub fn supply_from_battery(&self, v_battery: f64) -> f64 {
        (self.v_supply_nominal * v_battery / self.v_battery_nominal).min(self.v_supply_nominal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_ordering_holds() {
        assert!(SpeedCalibration::default().is_ordered());
    }

    #[test]
    fn speed_examples() {
        let cal = SpeedCalibration::default();
        assert_eq!(cal.speed_to_command(0.0).unwrap(), 170);
        assert_eq!(cal.speed_to_command(cal.max_forward_speed).unwrap(), 240);
        assert_eq!(cal.speed_to_command(100.0).unwrap(), 240);
        assert_eq!(cal.speed_to_command(f64::INFINITY).unwrap(), 240);
        assert_eq!(cal.speed_to_command(-100.0).unwrap(), 80);
        // 201 + 0.5 * 39 = 220.5, rounded away from zero.
        assert_eq!(cal.speed_to_command(cal.max_forward_speed / 2.0).unwrap(), 221);
        assert_eq!(cal.speed_to_command(-cal.max_reverse_speed / 2.0).unwrap(), 106);
        assert_eq!(cal.speed_to_command(f64::NAN), Err(SpeedError::NotANumber));
    }

    #[test]
    fn dial_five_cruise_byte() {
        // 0.2 / (4 mph * 0.5) * 39 + 201 = 209.72
        assert_eq!(SpeedCalibration::default().speed_to_command(DIAL_FIVE_SPEED).unwrap(), 210);
    }

    #[test]
    fn voltage_examples() {
        let cal = SpeedCalibration::default();
        assert_eq!(cal.command_to_voltage(0, 5.0).unwrap(), 0.0);
        assert!((cal.command_to_voltage(255, 5.0).unwrap() - 3.0).abs() < 1e-12);
        let v170 = cal.command_to_voltage(170, 5.0).unwrap();
        assert!((v170 - 2.0).abs() < 1e-12 && (v170 - 1.9).abs() <= 0.15);
        assert!(cal.command_to_voltage(256, 5.0).is_err());
        assert!(cal.command_to_voltage(-1, 5.0).is_err());
    }

    #[test]
    fn compensation_examples() {
        let cal = SpeedCalibration::default();
        assert_eq!(cal.compensate_for_supply(170, 5.0).unwrap(), 170);
        assert_eq!(cal.compensate_for_supply(170, 4.9).unwrap(), 173);
        let target = cal.command_to_voltage(170, 5.0).unwrap();
        let got = cal.command_to_voltage(173, 4.9).unwrap();
        assert!((got - target).abs() < cal.quantum(4.9));
        assert!(matches!(
            cal.compensate_for_supply(170, 3.0),
            Err(SpeedError::SupplyOutOfBand(..))
        ));
    }

    #[test]
    fn divider_examples() {
        let b = BatteryModel::default();
        assert!((b.battery_voltage_from_adc(2.1818) - 23.9998).abs() < 1e-9);
        assert_eq!(b.battery_voltage_from_adc(0.0), 0.0);
        assert!((b.battery_voltage_from_adc(2.0) - 22.0).abs() < 1e-12);
        assert!(b.divider_output(24.0) < 24.0);
        assert!((b.supply_from_battery(23.52) - 4.9).abs() < 1e-12);
        assert_eq!(b.supply_from_battery(26.0), 5.0);
    }

    #[test]
    fn dead_zone_edges() {
        let cal = SpeedCalibration::default();
        assert!(cal.in_ignition_dead_zone(164));
        assert!(cal.in_ignition_dead_zone(170));
        assert!(!cal.in_ignition_dead_zone(132));
        assert!(!cal.in_ignition_dead_zone(201));
    }

    #[test]
    fn inverse_matches_forward_on_segments() {
        let cal = SpeedCalibration::default();
        for cmd in 80..=240u8 {
            let v = cal.command_to_speed(f64::from(cmd));
            if !(132..=201).contains(&cmd) {
                assert_eq!(cal.speed_to_command(v).unwrap(), cmd);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }
}
