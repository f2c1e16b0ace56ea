use std::f64::consts::FRAC_PI_4;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::dubins::DubinsPath;
use super::follow::{FollowCommand, FollowStatus, Follower, FollowerConfig, GoalTolerance};
use crate::pose::Pose2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavConfig {
    pub follower: FollowerConfig,
    /// m. Defaults to wheelbase / tan(max wheel angle).
    pub min_turn_radius: f64,
    pub retry_budget: u32,
    /// Approaches that leave the goal region without success before giving up.
    pub oscillation_limit: u32,
    pub approach_radius: f64,
    #[serde(with = "crate::safety::duration_millis")]
    pub time_budget: Duration,
}

impl Default for NavConfig {
    fn default() -> Self {
        let follower = FollowerConfig::default();
        Self {
            min_turn_radius: follower.wheelbase / FRAC_PI_4.tan(),
            follower,
            retry_budget: 3,
            oscillation_limit: 3,
            approach_radius: 0.5,
            time_budget: Duration::from_secs(180),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AbortReason {
    RetriesExhausted(String),
    Oscillation { approaches: u32 },
    TimeBudget,
    Preempted,
    Cancelled,
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AbortReason::RetriesExhausted(last) => write!(f, "retries exhausted ({last})"),
            AbortReason::Oscillation { approaches } => write!(f, "oscillating about goal ({approaches} approaches)"),
            AbortReason::TimeBudget => write!(f, "time budget exceeded"),
            AbortReason::Preempted => write!(f, "preempted by a new goal"),
            AbortReason::Cancelled => write!(f, "cancelled"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NavStatus {
    Idle,
    Active,
    Succeeded,
    Aborted(AbortReason),
}

impl NavStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, NavStatus::Succeeded | NavStatus::Aborted(_))
    }

    pub fn label(&self) -> String {
        match self {
            NavStatus::Idle => "IDLE".into(),
            NavStatus::Active => "ACTIVE".into(),
            NavStatus::Succeeded => "SUCCESS".into(),
            NavStatus::Aborted(r) => format!("ABORTED: {r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavCommand {
    pub speed: f64,
    pub wheel_angle: f64,
}

impl NavCommand {
    pub const STOP: NavCommand = NavCommand { speed: 0.0, wheel_angle: 0.0 };
}

#[derive(Debug, Clone)]
struct Goal {
    pose: Pose2D,
    tol: GoalTolerance,
    started: Duration,
}

/// Goal-level supervision around a [`Follower`]: replanning, preemption,
/// oscillation and time limits.
#[derive(Debug, Clone)]
pub struct Navigator {
    cfg: NavConfig,
    goal: Option<Goal>,
    follower: Option<Follower>,
    status: NavStatus,
    retries: u32,
    approaches: u32,
    inside: bool,
    path_version: u64,
}

impl Navigator {
    pub fn new(cfg: NavConfig) -> Self {
        Self {
            cfg,
            goal: None,
            follower: None,
            status: NavStatus::Idle,
            retries: 0,
            approaches: 0,
            inside: false,
            path_version: 0,
        }
    }

    pub fn config(&self) -> &NavConfig {
        &self.cfg
    }

    pub fn status(&self) -> &NavStatus {
        &self.status
    }

    pub fn goal(&self) -> Option<(Pose2D, GoalTolerance)> {
        self.goal.as_ref().map(|g| (g.pose, g.tol))
    }

    pub fn path(&self) -> Option<&DubinsPath> {
        self.follower.as_ref().map(Follower::path)
    }

    /// Bumped on every plan and replan.
    pub fn path_version(&self) -> u64 {
        self.path_version
    }

    pub fn retries(&self) -> u32 {
        self.retries
    }

    pub fn approaches(&self) -> u32 {
        self.approaches
    }

    pub fn is_active(&self) -> bool {
        self.status == NavStatus::Active
    }

    /// Starts a new goal, replacing any active one at once.
    pub fn goto(&mut self, goal: Pose2D, tol: GoalTolerance, pose: Pose2D, now: Duration) {
        self.goal = Some(Goal { pose: goal, tol, started: now });
        self.retries = 0;
        self.approaches = 0;
        self.inside = false;
        self.status = NavStatus::Active;
        self.plan(pose);
    }

    pub fn cancel(&mut self) {
        if self.is_active() {
            self.abort(AbortReason::Cancelled);
        }
    }

    fn plan(&mut self, pose: Pose2D) {
        let goal = self.goal.as_ref().expect("plan needs a goal");
        let path = DubinsPath::shortest(pose, goal.pose, self.cfg.min_turn_radius);
        self.follower = Some(Follower::new(path, goal.tol, self.cfg.follower));
        self.path_version += 1;
    }

    fn abort(&mut self, reason: AbortReason) {
        self.status = NavStatus::Aborted(reason);
        self.follower = None;
    }

    pub fn tick(&mut self, pose: Pose2D, steer_angle: f64, now: Duration) -> NavCommand {
        if !self.is_active() {
            return NavCommand::STOP;
        }
        let goal = self.goal.clone().expect("active navigation has a goal");

        if now.saturating_sub(goal.started) > self.cfg.time_budget {
            self.abort(AbortReason::TimeBudget);
            return NavCommand::STOP;
        }

        let near = pose.distance(&goal.pose) < self.cfg.approach_radius;
        if self.inside && !near {
            self.approaches += 1;
        }
        self.inside = near;
        if self.approaches >= self.cfg.oscillation_limit {
            self.abort(AbortReason::Oscillation { approaches: self.approaches });
            return NavCommand::STOP;
        }

        let follower = self.follower.as_mut().expect("active navigation has a follower");
        let FollowCommand { speed, wheel_angle, status } = follower.tick(pose, steer_angle);
        match status {
            FollowStatus::Running => NavCommand { speed, wheel_angle },
            FollowStatus::Success => {
                self.status = NavStatus::Succeeded;
                self.follower = None;
                NavCommand::STOP
            }
            FollowStatus::Failure(why) => {
                self.retries += 1;
                if self.retries > self.cfg.retry_budget {
                    self.abort(AbortReason::RetriesExhausted(why.to_string()));
                } else {
                    self.plan(pose);
                }
                NavCommand::STOP
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_radius_is_one_wheelbase() {
        assert!((NavConfig::default().min_turn_radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn idle_until_goal() {
        let mut nav = Navigator::new(NavConfig::default());
        assert_eq!(nav.tick(Pose2D::default(), 0.0, Duration::ZERO), NavCommand::STOP);
        assert_eq!(nav.status(), &NavStatus::Idle);
    }

    #[test]
    fn new_goal_preempts() {
        let mut nav = Navigator::new(NavConfig::default());
        let p = Pose2D::default();
        nav.goto(Pose2D::new(3.0, 0.0, 0.0), GoalTolerance::default(), p, Duration::ZERO);
        let v1 = nav.path_version();
        nav.goto(Pose2D::new(0.0, 3.0, 1.0), GoalTolerance::default(), p, Duration::from_millis(20));
        assert_eq!(nav.path_version(), v1 + 1);
        assert_eq!(nav.goal().unwrap().0, Pose2D::new(0.0, 3.0, 1.0));
        assert!(nav.is_active());
    }

    #[test]
    fn succeeds_at_goal() {
        let mut nav = Navigator::new(NavConfig::default());
        let g = Pose2D::new(1.0, 0.0, 0.0);
        nav.goto(g, GoalTolerance::default(), Pose2D::default(), Duration::ZERO);
        let cmd = nav.tick(Pose2D::new(0.95, 0.01, 0.02), 0.0, Duration::from_secs(5));
        assert_eq!(cmd, NavCommand::STOP);
        assert_eq!(nav.status(), &NavStatus::Succeeded);
    }

    #[test]
    fn time_budget_aborts() {
        let mut nav = Navigator::new(NavConfig::default());
        nav.goto(Pose2D::new(5.0, 0.0, 0.0), GoalTolerance::default(), Pose2D::default(), Duration::ZERO);
        nav.tick(Pose2D::default(), 0.0, Duration::from_secs(181));
        assert_eq!(nav.status(), &NavStatus::Aborted(AbortReason::TimeBudget));
    }
}
