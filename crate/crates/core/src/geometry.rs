//! Steering linkage mathematics and the steering controller's command
//! calibration.
//!
//! The front axle is pushed by a linear actuator anchored to the chassis. The
//! wheel angle `theta` is related to the actuator-side crank angle `alpha` by a
//! fixed offset, and the actuator extension is the distance from the chassis
//! anchor `(x0, y0)` to the crank pin on a circle of radius `r1`, corrected by
//! the installation length and the feedback offset:
//!
//! ```text
//! alpha = theta + atan(W / 2H)
//! beta  = alpha - pi/2
//! (x, y) = r1 * (cos beta, sin beta)
//! l = |(x0, y0) - (x, y)| - L + l0
//! ```
//!
//! Sign convention: positive wheel angle turns left. A rebuild whose linkage is
//! mirrored sets [`SteeringGeometry::invert`].
//!
//! All angles are radians and all lengths millimetres. Degrees only appear in
//! configuration files.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quant::round_half_away;

/// Samples used when checking that the forward map is monotone.
pub const MONOTONICITY_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("wheel angle {angle} rad outside admissible range [{min}, {max}]")]
    AngleOutOfRange { angle: f64, min: f64, max: f64 },
    #[error("actuator extension {extension} mm outside reachable range [{min}, {max}]")]
    ExtensionOutOfRange { extension: f64, min: f64, max: f64 },
    #[error("steering command {command} outside [{min}, {max}]")]
    CommandOutOfRange { command: i64, min: u16, max: u16 },
    #[error("invalid steering geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid actuator calibration: {0}")]
    InvalidCalibration(String),
}

/// Linkage coefficients measured on the vehicle, plus the admissible wheel
/// angle range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringGeometry {
    /// Crank radius on the axle side, mm.
    pub r1: f64,
    /// Chassis anchor, mm. `y0` is negative.
    pub x0: f64,
    pub y0: f64,
    /// Track width `W` and axle offset `H`, mm.
    pub width: f64,
    pub height: f64,
    /// Actuator installation length `L`, mm.
    pub install_length: f64,
    /// Actuator feedback reading at installation, `l0`, mm.
    pub feedback_offset: f64,
    /// Full right lock (negative), rad.
    pub angle_right: f64,
    /// Full left lock (positive), rad.
    pub angle_left: f64,
    /// Mirrors the linkage when the actuator is mounted on the other side.
    #[serde(default)]
    pub invert: bool,
}

impl Default for SteeringGeometry {
    /// Placeholder linkage, not measured on any vehicle. It is monotone,
    /// sits inside a 250 mm stroke over +/-45 degrees, and spans about the
    /// 1500 of 4095 feedback counts that the calibrated command range covers.
    /// Measure your own.
    fn default() -> Self {
        Self {
            r1: 70.0,
            x0: -145.6,
            y0: -318.3,
            width: 600.0,
            height: 400.0,
            install_length: 390.0,
            feedback_offset: 185.0,
            angle_right: -FRAC_PI_4,
            angle_left: FRAC_PI_4,
            invert: false,
        }
    }
}

impl SteeringGeometry {
    /// Evaluates the linkage chain without checking the angle range.
    pub fn linkage_extension(&self, theta: f64) -> f64 {
        let theta = if self.invert { -theta } else { theta };
        let alpha = theta + (self.width / (2.0 * self.height)).atan();
        let beta = alpha - FRAC_PI_2;
        let (x, y) = (self.r1 * beta.cos(), self.r1 * beta.sin());
        (self.x0 - x).hypot(self.y0 - y) - self.install_length + self.feedback_offset
    }

    pub fn contains_angle(&self, theta: f64) -> bool {
        theta >= self.angle_right && theta <= self.angle_left
    }

    /// Actuator extension (mm) needed for wheel angle `theta` (rad).
    pub fn angle_to_extension(&self, theta: f64) -> Result<f64, GeometryError> {
        if !self.contains_angle(theta) {
            return Err(GeometryError::AngleOutOfRange {
                angle: theta,
                min: self.angle_right,
                max: self.angle_left,
            });
        }
        Ok(self.linkage_extension(theta))
    }

    /// Smallest and largest extension reachable over the admissible range.
    pub fn extension_range(&self) -> (f64, f64) {
        let a = self.linkage_extension(self.angle_right);
        let b = self.linkage_extension(self.angle_left);
        (a.min(b), a.max(b))
    }

    /// Inverts the forward map by bisection. Requires the forward map to be
    /// monotone, which [`SteeringGeometry::validate`] checks.
    pub fn extension_to_angle(&self, extension: f64) -> Result<f64, GeometryError> {
        let (min, max) = self.extension_range();
        if !(extension >= min && extension <= max) {
            return Err(GeometryError::ExtensionOutOfRange { extension, min, max });
        }
        let increasing =
            self.linkage_extension(self.angle_left) >= self.linkage_extension(self.angle_right);
        let (mut lo, mut hi) = (self.angle_right, self.angle_left);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let below = self.linkage_extension(mid) < extension;
            if below == increasing {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Like [`extension_to_angle`](Self::extension_to_angle) but saturates at
    /// the lock angles instead of failing.
    pub fn extension_to_angle_saturating(&self, extension: f64) -> f64 {
        let (min, max) = self.extension_range();
        self.extension_to_angle(extension.clamp(min, max))
            .expect("clamped extension is inside the image")
    }

    /// True when the forward map is strictly monotone at `samples` evenly
    /// spaced angles.
    pub fn is_monotone(&self, samples: usize) -> bool {
        let n = samples.max(2);
        let step = (self.angle_left - self.angle_right) / (n - 1) as f64;
        let values: Vec<f64> = (0..n)
            .map(|i| self.linkage_extension(self.angle_right + step * i as f64))
            .collect();
        let rising = values.windows(2).all(|w| w[1] > w[0]);
        let falling = values.windows(2).all(|w| w[1] < w[0]);
        rising || falling
    }

    /// Checks the geometric invariants, including that every admissible angle
    /// maps into `[0, stroke_max]`.
    pub fn validate(&self, stroke_max: f64) -> Result<(), GeometryError> {
        let bad = |msg: &str| Err(GeometryError::InvalidGeometry(msg.to_owned()));
        let finite = [
            self.r1,
            self.x0,
            self.y0,
            self.width,
            self.height,
            self.install_length,
            self.feedback_offset,
            self.angle_right,
            self.angle_left,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite coefficient");
        }
        if self.r1 <= 0.0 || self.width <= 0.0 || self.height <= 0.0 || self.install_length <= 0.0 {
            return bad("r1, W, H and L must be positive");
        }
        if self.y0 >= 0.0 {
            return bad("y0 must be negative");
        }
        if self.angle_right >= self.angle_left {
            return bad("right lock must be below left lock");
        }
        if !self.is_monotone(MONOTONICITY_SAMPLES) {
            return bad("extension is not monotone over the admissible range");
        }
        let (min, max) = self.extension_range();
        if min < 0.0 || max > stroke_max {
            return Err(GeometryError::InvalidGeometry(format!(
                "extension range [{min:.3}, {max:.3}] mm leaves the stroke [0, {stroke_max}]"
            )));
        }
        Ok(())
    }
}

/// Steering-controller command calibration: three anchor points joined by two
/// linear segments of different slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCalibration {
    pub cmd_max_right: u16,
    pub cmd_center: u16,
    pub cmd_max_left: u16,
    /// rad, negative.
    pub angle_max_right: f64,
    /// rad, positive.
    pub angle_max_left: f64,
    /// mm.
    pub stroke_max: f64,
}

impl Default for ActuatorCalibration {
    fn default() -> Self {
        Self {
            cmd_max_right: 2500,
            cmd_center: 1900,
            cmd_max_left: 1000,
            angle_max_right: -FRAC_PI_4,
            angle_max_left: FRAC_PI_4,
            stroke_max: 250.0,
        }
    }
}

impl ActuatorCalibration {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.cmd_max_left < self.cmd_center && self.cmd_center < self.cmd_max_right) {
            return Err(GeometryError::InvalidCalibration(format!(
                "need {} < {} < {}",
                self.cmd_max_left, self.cmd_center, self.cmd_max_right
            )));
        }
        if !(self.angle_max_right < 0.0 && self.angle_max_left > 0.0) {
            return Err(GeometryError::InvalidCalibration(
                "lock angles must straddle zero".into(),
            ));
        }
        if self.stroke_max.is_nan() || self.stroke_max <= 0.0 {
            return Err(GeometryError::InvalidCalibration("stroke must be positive".into()));
        }
        Ok(())
    }

    pub fn command_min(&self) -> u16 {
        self.cmd_max_left.min(self.cmd_max_right)
    }

    pub fn command_max(&self) -> u16 {
        self.cmd_max_left.max(self.cmd_max_right)
    }

    /// Linear interpolation on the segment containing `theta`, extrapolated
    /// past the locks and rounded. Callers must limit the result.
    pub fn extrapolated_command(&self, theta: f64) -> i64 {
        let center = f64::from(self.cmd_center);
        let raw = if theta <= 0.0 {
            center + theta / self.angle_max_right * (f64::from(self.cmd_max_right) - center)
        } else {
            center + theta / self.angle_max_left * (f64::from(self.cmd_max_left) - center)
        };
        round_half_away(raw)
    }

    pub fn angle_to_command(&self, theta: f64) -> Result<u16, GeometryError> {
        if !(theta >= self.angle_max_right && theta <= self.angle_max_left) {
            return Err(GeometryError::AngleOutOfRange {
                angle: theta,
                min: self.angle_max_right,
                max: self.angle_max_left,
            });
        }
        let cmd = self
            .extrapolated_command(theta)
            .clamp(i64::from(self.command_min()), i64::from(self.command_max()));
        Ok(cmd as u16)
    }

    pub fn command_to_angle(&self, cmd: i64) -> Result<f64, GeometryError> {
        let (min, max) = (self.command_min(), self.command_max());
        if cmd < i64::from(min) || cmd > i64::from(max) {
            return Err(GeometryError::CommandOutOfRange { command: cmd, min, max });
        }
        let center = f64::from(self.cmd_center);
        let c = cmd as f64;
        let right_is_up = self.cmd_max_right > self.cmd_center;
        let on_right = (c >= center) == right_is_up;
        Ok(if on_right {
            (c - center) / (f64::from(self.cmd_max_right) - center) * self.angle_max_right
        } else {
            (c - center) / (f64::from(self.cmd_max_left) - center) * self.angle_max_left
        })
    }

    /// Angle spanned by one command count on the segment containing `theta`.
    pub fn quantum_at(&self, theta: f64) -> f64 {
        let center = f64::from(self.cmd_center);
        if theta <= 0.0 {
            (self.angle_max_right / (f64::from(self.cmd_max_right) - center)).abs()
        } else {
            (self.angle_max_left / (f64::from(self.cmd_max_left) - center)).abs()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> SteeringGeometry {
        SteeringGeometry {
            r1: 100.0,
            x0: 300.0,
            y0: -50.0,
            width: 600.0,
            height: 400.0,
            install_length: 390.0,
            feedback_offset: 125.0,
            ..SteeringGeometry::default()
        }
    }

    #[test]
    fn fixture_values_match_hand_evaluation() {
        // Values from a separate evaluation of the linkage chain.
        let g = fixture();
        assert!((g.angle_to_extension(0.0).unwrap() - -23.132267551043498).abs() < 1e-9);
        assert!((g.angle_to_extension(0.4).unwrap() - -51.41688763642915).abs() < 1e-9);
        assert!((g.angle_to_extension(-0.4).unwrap() - 14.872983049161746).abs() < 1e-9);
    }

    #[test]
    fn zero_crank_offset_is_zero_wheel_angle() {
        let g = SteeringGeometry::default();
        let alpha = (g.width / (2.0 * g.height)).atan();
        let theta = alpha - (g.width / (2.0 * g.height)).atan();
        assert_eq!(theta, 0.0);
        assert_eq!(g.angle_to_extension(theta).unwrap(), g.linkage_extension(0.0));
    }

    #[test]
    fn default_geometry_is_valid() {
        let g = SteeringGeometry::default();
        g.validate(250.0).unwrap();
        let (lo, hi) = g.extension_range();
        assert!((lo - 78.57959682940833).abs() < 1e-9);
        assert!((hi - 170.88743262064804).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_angle_is_rejected_not_clamped() {
        let g = SteeringGeometry::default();
        assert!(matches!(
            g.angle_to_extension(1.0),
            Err(GeometryError::AngleOutOfRange { .. })
        ));
    }

    #[test]
    fn inverse_at_center_and_below_image() {
        let g = SteeringGeometry::default();
        let l = g.angle_to_extension(0.0).unwrap();
        assert!(g.extension_to_angle(l).unwrap().abs() < 1e-6);
        let (lo, _) = g.extension_range();
        assert!(matches!(
            g.extension_to_angle(lo - 1.0),
            Err(GeometryError::ExtensionOutOfRange { .. })
        ));
    }

    #[test]
    fn inverse_round_trip_over_range() {
        let g = SteeringGeometry::default();
        for i in 0..100 {
            let theta = (g.angle_right + (g.angle_left - g.angle_right) * i as f64 / 99.0).min(g.angle_left);
            let back = g.extension_to_angle(g.angle_to_extension(theta).unwrap()).unwrap();
            assert!((back - theta).abs() < 1e-6, "{theta} -> {back}");
        }
    }

    #[test]
    fn invert_flag_mirrors_the_map() {
        let g = SteeringGeometry::default();
        let m = SteeringGeometry { invert: true, ..g };
        assert_eq!(m.linkage_extension(0.3), g.linkage_extension(-0.3));
    }

    #[test]
    fn validation_rejects_positive_y0() {
        let g = SteeringGeometry { y0: 10.0, ..SteeringGeometry::default() };
        assert!(g.validate(250.0).is_err());
        assert!(fixture().validate(250.0).is_err());
    }

    #[test]
    fn table_anchors() {
        let cal = ActuatorCalibration::default();
        assert_eq!(cal.angle_to_command(0.0).unwrap(), 1900);
        assert_eq!(cal.angle_to_command((-45f64).to_radians()).unwrap(), 2500);
        assert_eq!(cal.angle_to_command(45f64.to_radians()).unwrap(), 1000);
        assert_eq!(cal.angle_to_command((-22.5f64).to_radians()).unwrap(), 2200);
        assert_eq!(cal.command_to_angle(1900).unwrap(), 0.0);
        assert!((cal.command_to_angle(1000).unwrap() - 45f64.to_radians()).abs() < 1e-15);
        assert!((cal.command_to_angle(2200).unwrap() - (-22.5f64).to_radians()).abs() < 1e-15);
    }

    #[test]
    fn command_range_errors() {
        let cal = ActuatorCalibration::default();
        assert!(cal.command_to_angle(999).is_err());
        assert!(cal.command_to_angle(2501).is_err());
        assert!(cal.angle_to_command(0.8).is_err());
        assert_eq!(cal.extrapolated_command(1.0), 1900 - 1146);
    }
}
