//! Pure-pursuit tracking of a sampled Dubins path.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use super::dubins::DubinsPath;
use crate::drivebywire::DIAL_FIVE_SPEED;
use crate::pose::Pose2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalTolerance {
    /// m.
    pub position: f64,
    /// rad.
    pub heading: f64,
}

impl Default for GoalTolerance {
    fn default() -> Self {
        Self { position: 0.150, heading: 0.15 }
    }
}

impl GoalTolerance {
    pub fn new(position: f64, heading: f64) -> Option<Self> {
        (position > 0.0 && heading > 0.0).then_some(Self { position, heading })
    }

    pub fn reached(&self, pose: &Pose2D, goal: &Pose2D) -> bool {
        pose.distance(goal) < self.position && pose.heading_error(goal) < self.heading
    }

    /// Lookahead matched to the tolerance: twice the position tolerance,
    /// kept within [0.3, 1.5] m.
    pub fn default_lookahead(&self) -> f64 {
        (2.0 * self.position).clamp(0.3, 1.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerConfig {
    /// Overrides the tolerance-derived lookahead when set.
    pub lookahead: Option<f64>,
    pub cruise_speed: f64,
    pub creep_speed: f64,
    /// Remaining path length over which speed ramps down to creep.
    pub slow_radius: f64,
    pub abort_cross_track: f64,
    /// Wheel angle lag, rad, at which speed drops to its floor.
    pub lag_tolerance: f64,
    /// Speed floor while the wheels catch up, as a fraction of the ramped speed.
    pub min_speed_factor: f64,
    pub wheelbase: f64,
    pub max_wheel_angle: f64,
    pub sample_spacing: f64,
}

impl Default for FollowerConfig {
    fn default() -> Self {
        Self {
            lookahead: None,
            cruise_speed: DIAL_FIVE_SPEED,
            creep_speed: 0.05,
            slow_radius: 0.5,
            abort_cross_track: 0.75,
            lag_tolerance: 0.3,
            min_speed_factor: 0.1,
            wheelbase: 1.0,
            max_wheel_angle: FRAC_PI_4,
            sample_spacing: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FollowFailure {
    CrossTrack { error: f64 },
    Overshoot { along: f64 },
}

impl std::fmt::Display for FollowFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FollowFailure::CrossTrack { error } => write!(f, "cross-track error {error:.3} m"),
            FollowFailure::Overshoot { along } => write!(f, "passed the goal by {along:.3} m"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FollowStatus {
    Running,
    Success,
    Failure(FollowFailure),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowCommand {
    /// m/s.
    pub speed: f64,
    /// rad.
    pub wheel_angle: f64,
    pub status: FollowStatus,
}

impl FollowCommand {
    pub fn stop(status: FollowStatus) -> Self {
        Self { speed: 0.0, wheel_angle: 0.0, status }
    }
}

/// How far ahead of the last match the nearest-sample search looks, m.
const SEARCH_WINDOW: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct Follower {
    path: DubinsPath,
    goal: Pose2D,
    tol: GoalTolerance,
    cfg: FollowerConfig,
    lookahead: f64,
    /// Path samples followed by a straight run-out past the goal.
    track: Vec<Pose2D>,
    goal_index: usize,
    progress: usize,
}

impl Follower {
    pub fn new(path: DubinsPath, tol: GoalTolerance, cfg: FollowerConfig) -> Self {
        let lookahead = cfg.lookahead.unwrap_or_else(|| tol.default_lookahead());
        let ds = cfg.sample_spacing;
        let mut track = path.sample(ds);
        let goal = *track.last().expect("a path has at least one sample");
        let goal_index = track.len() - 1;
        let (s, c) = goal.heading.sin_cos();
        let runout = ((lookahead * 2.0) / ds).ceil() as usize;
        track.extend((1..=runout).map(|k| {
            let d = k as f64 * ds;
            Pose2D { x: goal.x + d * c, y: goal.y + d * s, heading: goal.heading }
        }));
        Self { path, goal, tol, cfg, lookahead, track, goal_index, progress: 0 }
    }

    pub fn path(&self) -> &DubinsPath {
        &self.path
    }

    pub fn goal(&self) -> Pose2D {
        self.goal
    }

    pub fn lookahead(&self) -> f64 {
        self.lookahead
    }

    /// Signed distance past the goal along the goal heading.
    fn along_goal(&self, pose: &Pose2D) -> f64 {
        self.goal.to_local(pose.x, pose.y).0
    }

    /// One control tick. `steer_angle` is the measured wheel angle, used to
    /// slow down while the actuator catches up.
    pub fn tick(&mut self, pose: Pose2D, steer_angle: f64) -> FollowCommand {
        if self.tol.reached(&pose, &self.goal) {
            return FollowCommand::stop(FollowStatus::Success);
        }

        let ds = self.cfg.sample_spacing;
        let window = (SEARCH_WINDOW / ds).ceil() as usize;
        let end = (self.progress + window).min(self.track.len() - 1);
        let (nearest, cross) = (self.progress..=end)
            .map(|i| (i, pose.distance(&self.track[i])))
            .fold((self.progress, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best });
        self.progress = nearest;

        if cross > self.cfg.abort_cross_track {
            return FollowCommand::stop(FollowStatus::Failure(FollowFailure::CrossTrack { error: cross }));
        }
        let along = self.along_goal(&pose);
        if self.progress >= self.goal_index && along > self.tol.position {
            return FollowCommand::stop(FollowStatus::Failure(FollowFailure::Overshoot { along }));
        }

        let target = self.track[self.progress..]
            .iter()
            .find(|p| pose.distance(p) >= self.lookahead)
            .copied()
            .unwrap_or(*self.track.last().expect("track is never empty"));
        let (fwd, left) = pose.to_local(target.x, target.y);
        let dist = fwd.hypot(left).max(1e-6);
        let curvature = 2.0 * left / (dist * dist);
        let wheel_angle = (self.cfg.wheelbase * curvature)
            .atan()
            .clamp(-self.cfg.max_wheel_angle, self.cfg.max_wheel_angle);

        let remaining = (self.goal_index.saturating_sub(self.progress)) as f64 * ds;
        let remaining = remaining.max(-along);
        let ramp = (remaining / self.cfg.slow_radius).clamp(0.0, 1.0);
        let mut speed = self.cfg.creep_speed + (self.cfg.cruise_speed - self.cfg.creep_speed) * ramp;
        let lag = (wheel_angle - steer_angle).abs() / self.cfg.lag_tolerance;
        speed *= (1.0 - lag).clamp(self.cfg.min_speed_factor, 1.0);
        FollowCommand { speed: speed.max(0.0), wheel_angle, status: FollowStatus::Running }
    }
}
