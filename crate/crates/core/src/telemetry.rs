//! Newline-delimited JSON telemetry records.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::pose::Pose2D;
use crate::safety::{FaultReason, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub steer_angle: f64,
    pub actuator_ext: f64,
    pub v_battery: f64,
    pub safety_mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_reason: Option<FaultReason>,
    /// Seconds since the last accepted heartbeat.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heartbeat_age: Option<f64>,
    pub speed_cmd: u8,
    pub steer_cmd: u16,
    pub clamp_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nav: Option<NavTelemetry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavTelemetry {
    /// `teleop` or `autonomous`.
    pub control_mode: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Pose2D>,
    /// Sampled path, sent once whenever a new path is planned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<[f64; 3]>>,
    pub path_version: u64,
    pub ignored_joystick: u64,
    pub steer_clamps: u64,
}

impl TelemetryRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("telemetry is always serializable")
    }

    pub fn write_line<W: Write + ?Sized>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(self.to_line().as_bytes())?;
        out.write_all(b"\n")
    }
}
