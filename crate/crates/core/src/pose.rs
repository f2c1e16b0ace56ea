use serde::{Deserialize, Serialize};

use crate::quant::normalize_angle;

/// Planar pose; heading in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: normalize_angle(heading) }
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    /// Absolute heading difference, wrapped.
    pub fn heading_error(&self, other: &Pose2D) -> f64 {
        normalize_angle(other.heading - self.heading).abs()
    }

    /// `other` expressed in this pose's frame (forward, left).
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}
