//! TOML configuration. Every key carries its unit in its name; every key is
//! optional and falls back to the built-in default.
//!
//! ```toml
//! [speed]
//! drive_mode = "low"
//! dial = 0.5
//!
//! [sim]
//! dt_s = 0.01
//! wheelbase_m = 1.0
//!
//! [planner]
//! min_turn_radius_m = 1.0
//! ```
//!
//! The file is located through `PODCAR_CONFIG` unless a path is given.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::drivebywire::{DriveMode, SpeedCalibration};
use crate::geometry::{ActuatorCalibration, SteeringGeometry};
use crate::planner::{GoalTolerance, NavConfig};
use crate::pose::Pose2D;
use crate::protocol::{Endpoint, LinkConfig};
use crate::safety::{SafetyConfig, SteeringOnDisarm};
use crate::simulator::SimConfig;
use crate::stack::StackConfig;

pub const CONFIG_ENV: &str = "PODCAR_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub baud: u32,
    pub speed_device: Option<String>,
    pub steering_device: Option<String>,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self { baud: LinkConfig::new(Endpoint::SpeedController).baud, speed_device: None, steering_device: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub r1_mm: f64,
    pub x0_mm: f64,
    pub y0_mm: f64,
    pub width_mm: f64,
    pub height_mm: f64,
    pub install_length_mm: f64,
    pub feedback_offset_mm: f64,
    pub angle_right_deg: f64,
    pub angle_left_deg: f64,
    pub invert: bool,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = SteeringGeometry::default();
        Self {
            r1_mm: g.r1,
            x0_mm: g.x0,
            y0_mm: g.y0,
            width_mm: g.width,
            height_mm: g.height,
            install_length_mm: g.install_length,
            feedback_offset_mm: g.feedback_offset,
            angle_right_deg: g.angle_right.to_degrees(),
            angle_left_deg: g.angle_left.to_degrees(),
            invert: g.invert,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorSection {
    pub cmd_max_right: u16,
    pub cmd_center: u16,
    pub cmd_max_left: u16,
    pub angle_max_right_deg: f64,
    pub angle_max_left_deg: f64,
    pub stroke_max_mm: f64,
    pub rate_mm_s: f64,
}

impl Default for ActuatorSection {
    fn default() -> Self {
        let a = ActuatorCalibration::default();
        Self {
            cmd_max_right: a.cmd_max_right,
            cmd_center: a.cmd_center,
            cmd_max_left: a.cmd_max_left,
            angle_max_right_deg: a.angle_max_right.to_degrees(),
            angle_max_left_deg: a.angle_max_left.to_degrees(),
            stroke_max_mm: a.stroke_max,
            rate_mm_s: SimConfig::default().actuator_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedSection {
    pub drive_mode: DriveMode,
    /// Fraction of the mode's top speed at the forward software limit.
    pub dial: f64,
    pub max_forward_speed_m_s: Option<f64>,
    pub max_reverse_speed_m_s: Option<f64>,
    pub supply_min_v: f64,
    pub supply_max_v: f64,
}

impl Default for SpeedSection {
    fn default() -> Self {
        let c = SpeedCalibration::default();
        Self {
            drive_mode: DriveMode::Low,
            dial: 0.5,
            max_forward_speed_m_s: None,
            max_reverse_speed_m_s: None,
            supply_min_v: c.supply_min,
            supply_max_v: c.supply_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetySection {
    pub watchdog_ms: u64,
    pub steering_on_disarm: SteeringOnDisarm,
    pub heartbeat_period_ms: u64,
    pub battery_query_period_ms: u64,
}

impl Default for SafetySection {
    fn default() -> Self {
        let s = StackConfig::default();
        Self {
            watchdog_ms: s.safety.watchdog_period.as_millis() as u64,
            steering_on_disarm: s.safety.steering_on_disarm,
            heartbeat_period_ms: s.speed_driver.heartbeat_period.as_millis() as u64,
            battery_query_period_ms: s.speed_driver.battery_query_period.as_millis() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt_s: f64,
    pub wheelbase_m: f64,
    pub drive_time_constant_s: f64,
    pub battery_drain_v_per_h: f64,
    pub initial_battery_v: f64,
    pub initial_x_m: f64,
    pub initial_y_m: f64,
    pub initial_heading_deg: f64,
    pub max_speed_m_s: f64,
    pub tick_hz: u32,
    pub telemetry_hz: u32,
    pub speed_noise: f64,
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            dt_s: s.dt,
            wheelbase_m: s.wheelbase,
            drive_time_constant_s: s.drive_time_constant,
            battery_drain_v_per_h: s.battery_drain,
            initial_battery_v: s.initial_battery,
            initial_x_m: s.initial_pose.x,
            initial_y_m: s.initial_pose.y,
            initial_heading_deg: s.initial_pose.heading.to_degrees(),
            max_speed_m_s: s.max_speed,
            tick_hz: s.tick_hz,
            telemetry_hz: s.telemetry_hz,
            speed_noise: s.speed_noise,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    /// Defaults to wheelbase / tan(left lock).
    pub min_turn_radius_m: Option<f64>,
    pub cruise_speed_m_s: f64,
    pub creep_speed_m_s: f64,
    pub lookahead_m: Option<f64>,
    pub abort_cross_track_m: f64,
    pub retry_budget: u32,
    pub oscillation_limit: u32,
    pub approach_radius_m: f64,
    pub time_budget_s: f64,
    pub tol_position_m: f64,
    pub tol_heading_rad: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let n = NavConfig::default();
        let t = GoalTolerance::default();
        Self {
            min_turn_radius_m: None,
            cruise_speed_m_s: n.follower.cruise_speed,
            creep_speed_m_s: n.follower.creep_speed,
            lookahead_m: n.follower.lookahead,
            abort_cross_track_m: n.follower.abort_cross_track,
            retry_budget: n.retry_budget,
            oscillation_limit: n.oscillation_limit,
            approach_radius_m: n.approach_radius,
            time_budget_s: n.time_budget.as_secs_f64(),
            tol_position_m: t.position,
            tol_heading_rad: t.heading,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub listen: String,
    pub dmh_freshness_ms: u64,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self { listen: "127.0.0.1:7878".into(), dmh_freshness_ms: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub link: LinkSection,
    pub geometry: GeometrySection,
    pub actuator: ActuatorSection,
    pub speed: SpeedSection,
    pub safety: SafetySection,
    pub sim: SimSection,
    pub planner: PlannerSection,
    pub gateway: GatewaySection,
}

fn positive(name: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// Loads `path`, else the file named by `PODCAR_CONFIG`, else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn tolerance(&self) -> Result<GoalTolerance, ConfigError> {
        GoalTolerance::new(self.planner.tol_position_m, self.planner.tol_heading_rad)
            .ok_or_else(|| ConfigError::Invalid("goal tolerances must be positive".into()))
    }

    pub fn link(&self, endpoint: Endpoint) -> LinkConfig {
        LinkConfig { baud: self.link.baud, ..LinkConfig::new(endpoint) }
    }

    pub fn dmh_freshness(&self) -> Duration {
        Duration::from_millis(self.gateway.dmh_freshness_ms)
    }

    /// Builds and validates the runtime configuration.
    pub fn stack_config(&self) -> Result<StackConfig, ConfigError> {
        let g = &self.geometry;
        let geometry = SteeringGeometry {
            r1: g.r1_mm,
            x0: g.x0_mm,
            y0: g.y0_mm,
            width: g.width_mm,
            height: g.height_mm,
            install_length: g.install_length_mm,
            feedback_offset: g.feedback_offset_mm,
            angle_right: g.angle_right_deg.to_radians(),
            angle_left: g.angle_left_deg.to_radians(),
            invert: g.invert,
        };
        let a = &self.actuator;
        let actuator = ActuatorCalibration {
            cmd_max_right: a.cmd_max_right,
            cmd_center: a.cmd_center,
            cmd_max_left: a.cmd_max_left,
            angle_max_right: a.angle_max_right_deg.to_radians(),
            angle_max_left: a.angle_max_left_deg.to_radians(),
            stroke_max: a.stroke_max_mm,
        };
        actuator.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        geometry.validate(actuator.stroke_max).map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let s = &self.speed;
        let mut speed_cal = SpeedCalibration::for_mode(s.drive_mode, s.dial);
        if let Some(v) = s.max_forward_speed_m_s {
            speed_cal.max_forward_speed = positive("max_forward_speed_m_s", v)?;
            speed_cal.max_reverse_speed = v * 52.0 / 39.0;
        }
        if let Some(v) = s.max_reverse_speed_m_s {
            speed_cal.max_reverse_speed = positive("max_reverse_speed_m_s", v)?;
        }
        if !(s.supply_min_v < s.supply_max_v && s.supply_min_v > 0.0) {
            return Err(ConfigError::Invalid("supply band must satisfy 0 < min < max".into()));
        }
        speed_cal.supply_min = s.supply_min_v;
        speed_cal.supply_max = s.supply_max_v;

        let m = &self.sim;
        if m.tick_hz == 0 || m.telemetry_hz == 0 {
            return Err(ConfigError::Invalid("tick_hz and telemetry_hz must be positive".into()));
        }
        if !(m.speed_noise >= 0.0 && m.speed_noise < 1.0) {
            return Err(ConfigError::Invalid("speed_noise must be in [0, 1)".into()));
        }
        let sim = SimConfig {
            dt: positive("dt_s", m.dt_s)?,
            wheelbase: positive("wheelbase_m", m.wheelbase_m)?,
            drive_time_constant: positive("drive_time_constant_s", m.drive_time_constant_s)?,
            battery_drain: m.battery_drain_v_per_h.max(0.0),
            initial_battery: positive("initial_battery_v", m.initial_battery_v)?,
            initial_pose: Pose2D::new(m.initial_x_m, m.initial_y_m, m.initial_heading_deg.to_radians()),
            actuator_rate: positive("rate_mm_s", a.rate_mm_s)?,
            max_speed: positive("max_speed_m_s", m.max_speed_m_s)?,
            geometry,
            actuator,
            speed_cal,
            tick_hz: m.tick_hz,
            telemetry_hz: m.telemetry_hz,
            speed_noise: m.speed_noise,
            seed: m.seed,
            ..SimConfig::default()
        };

        let mut stack = StackConfig { sim, ..StackConfig::default() };
        stack.safety = SafetyConfig {
            watchdog_period: Duration::from_millis(self.safety.watchdog_ms),
            supply_min: speed_cal.supply_min,
            supply_max: speed_cal.supply_max,
            steering_on_disarm: self.safety.steering_on_disarm,
            steer_center: actuator.cmd_center,
        };
        stack.speed_driver.heartbeat_period = Duration::from_millis(self.safety.heartbeat_period_ms);
        stack.speed_driver.battery_query_period = Duration::from_millis(self.safety.battery_query_period_ms);
        if stack.speed_driver.heartbeat_period >= stack.safety.watchdog_period {
            return Err(ConfigError::Invalid("heartbeat period must be shorter than the watchdog".into()));
        }

        let p = &self.planner;
        let nav = &mut stack.nav;
        nav.min_turn_radius = match p.min_turn_radius_m {
            Some(r) => positive("min_turn_radius_m", r)?,
            None => sim.wheelbase / geometry.angle_left.min(-geometry.angle_right).tan(),
        };
        nav.follower.wheelbase = sim.wheelbase;
        nav.follower.max_wheel_angle = geometry.angle_left.min(-geometry.angle_right);
        nav.follower.cruise_speed = positive("cruise_speed_m_s", p.cruise_speed_m_s)?;
        nav.follower.creep_speed = positive("creep_speed_m_s", p.creep_speed_m_s)?.min(nav.follower.cruise_speed);
        nav.follower.lookahead = p.lookahead_m.map(|l| positive("lookahead_m", l)).transpose()?;
        nav.follower.abort_cross_track = positive("abort_cross_track_m", p.abort_cross_track_m)?;
        nav.retry_budget = p.retry_budget;
        nav.oscillation_limit = p.oscillation_limit.max(1);
        nav.approach_radius = positive("approach_radius_m", p.approach_radius_m)?;
        nav.time_budget = Duration::from_secs_f64(positive("time_budget_s", p.time_budget_s)?);
        self.tolerance()?;
        Ok(stack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_stack() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg.stack_config().unwrap(), StackConfig::default());
        assert_eq!(cfg.link(Endpoint::SpeedController).baud, 112_000);
    }

    #[test]
    fn default_round_trips_through_toml() {
        let text = Config::default().to_toml();
        assert_eq!(Config::parse(&text).unwrap(), Config::default());
    }

    #[test]
    fn overrides_and_units() {
        let cfg = Config::parse(
            "[link]\nbaud = 115200\n[sim]\nwheelbase_m = 1.2\ninitial_heading_deg = 90\n\
             [speed]\ndrive_mode = \"high\"\ndial = 1.0\n[planner]\nmin_turn_radius_m = 2.5\n",
        )
        .unwrap();
        let s = cfg.stack_config().unwrap();
        assert_eq!(cfg.link(Endpoint::SteeringController).baud, 115_200);
        assert_eq!(s.sim.wheelbase, 1.2);
        assert!((s.sim.initial_pose.heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((s.sim.speed_cal.max_forward_speed - 8.0 * 0.44704).abs() < 1e-12);
        assert_eq!(s.nav.min_turn_radius, 2.5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::parse("[sim]\nwheelbase = 1.0\n").is_err());
        assert!(Config::parse("[sim]\ndt_s = 0\n").unwrap().stack_config().is_err());
        assert!(Config::parse("[geometry]\ny0_mm = 10\n").unwrap().stack_config().is_err());
        assert!(Config::parse("[safety]\nheartbeat_period_ms = 150\n").unwrap().stack_config().is_err());
    }
}
