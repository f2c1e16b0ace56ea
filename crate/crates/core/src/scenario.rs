//! Timed operator scripts for reproducible runs.
//!
//! ```text
//! # seconds  action
//! 0.0  dmh press
//! 0.0  ignition
//! 0.5  speed 0.2          # m/s on /speedcmd_meterssec
//! 0.5  steer -0.1         # rad on /wheelAngleCmd
//! 2.0  heartbeat off      # test mode: the speed driver stops heartbeating
//! 2.5  heartbeat on
//! 3.0  joy 0 1            # stick x, y
//! 3.0  mode autonomous    # or teleop
//! 4.0  goto 3 0 0 0.15 0.15   # x m, y m, heading deg, [tol m, tol rad]
//! 9.0  cancel
//! 9.0  fuse
//! 9.5  dmh release
//! 10.0 end
//! ```
//!
//! Events at the same time apply in file order. Without an `end` line the
//! run stops one second after the last event.

use std::time::Duration;

use crate::bus::{ControlMode, GoalRequest, JoystickSample, OperatorEvent};
use crate::planner::GoalTolerance;
use crate::pose::Pose2D;
use crate::stack::Stack;
use crate::telemetry::TelemetryRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Operator(OperatorEvent),
    Speed(f64),
    Steer(f64),
    Joystick(JoystickSample),
    Goto(GoalRequest),
    Heartbeat(bool),
    End,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub events: Vec<(Duration, Action)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

fn parse_action(words: &[&str]) -> Result<Action, String> {
    let num = |i: usize| -> Result<f64, String> {
        words
            .get(i)
            .ok_or_else(|| format!("`{}` needs more arguments", words[0]))?
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("bad number `{}`", words[i]))
    };
    let arity = |n: &[usize]| {
        if n.contains(&words.len()) {
            Ok(())
        } else {
            Err(format!("wrong number of arguments for `{}`", words[0]))
        }
    };
    Ok(match words {
        ["dmh", "press"] => Action::Operator(OperatorEvent::DmhPress),
        ["dmh", "release"] => Action::Operator(OperatorEvent::DmhRelease),
        ["ignition"] => Action::Operator(OperatorEvent::Ignition),
        ["fuse"] => Action::Operator(OperatorEvent::BlowFuse),
        ["cancel"] => Action::Operator(OperatorEvent::CancelGoal),
        ["mode", "teleop"] => Action::Operator(OperatorEvent::SetMode(ControlMode::Teleop)),
        ["mode", "autonomous" | "auto"] => Action::Operator(OperatorEvent::SetMode(ControlMode::Autonomous)),
        ["heartbeat", "on"] => Action::Heartbeat(true),
        ["heartbeat", "off"] => Action::Heartbeat(false),
        ["end"] => Action::End,
        ["speed", ..] => {
            arity(&[2])?;
            Action::Speed(num(1)?)
        }
        ["steer", ..] => {
            arity(&[2])?;
            Action::Steer(num(1)?)
        }
        ["joy", ..] => {
            arity(&[3])?;
            Action::Joystick(JoystickSample::new(num(1)?, num(2)?))
        }
        ["goto", ..] => {
            arity(&[4, 6])?;
            let tol = if words.len() == 6 {
                GoalTolerance::new(num(4)?, num(5)?).ok_or("tolerances must be positive")?
            } else {
                GoalTolerance::default()
            };
            Action::Goto(GoalRequest { pose: Pose2D::new(num(1)?, num(2)?, num(3)?.to_radians()), tol })
        }
        _ => return Err(format!("unknown action `{}`", words.join(" "))),
    })
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut events = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ScenarioError { line: i + 1, message };
            let mut words = line.split_whitespace();
            let t: f64 = words
                .next()
                .and_then(|w| w.parse().ok())
                .filter(|t: &f64| t.is_finite() && *t >= 0.0)
                .ok_or_else(|| err("expected a time in seconds".into()))?;
            let words: Vec<&str> = words.collect();
            if words.is_empty() {
                return Err(err("missing action".into()));
            }
            events.push((Duration::from_secs_f64(t), parse_action(&words).map_err(err)?));
        }
        events.sort_by_key(|(t, _)| *t);
        Ok(Self { events })
    }

    pub fn end(&self) -> Duration {
        self.events
            .iter()
            .find(|(_, a)| *a == Action::End)
            .map(|(t, _)| *t)
            .unwrap_or_else(|| self.events.last().map_or(Duration::ZERO, |(t, _)| *t) + Duration::from_secs(1))
    }

    /// True when the script blows the fuse or silences the heartbeat.
    pub fn injects_faults(&self) -> bool {
        self.events
            .iter()
            .any(|(_, a)| matches!(a, Action::Operator(OperatorEvent::BlowFuse) | Action::Heartbeat(false)))
    }

    /// Runs the script on `stack`, passing every telemetry record to `sink`.
    pub fn run(&self, stack: &mut Stack, mut sink: impl FnMut(&TelemetryRecord)) {
        let end = self.end();
        let mut next = 0;
        while stack.now() < end {
            while next < self.events.len() && self.events[next].0 <= stack.now() {
                apply(stack, self.events[next].1);
                next += 1;
            }
            for rec in stack.tick() {
                sink(&rec);
            }
        }
    }
}

pub fn apply(stack: &mut Stack, action: Action) {
    match action {
        Action::Operator(ev) => stack.operator(ev),
        Action::Speed(v) => {
            let a = stack.steer_driver().target();
            stack.command(v, a);
        }
        Action::Steer(a) => {
            let v = stack.speed_driver().target();
            stack.command(v, a);
        }
        Action::Joystick(s) => stack.joystick(s),
        Action::Goto(g) => stack.goto(g),
        Action::Heartbeat(on) => stack.speed_driver().set_heartbeats(on),
        Action::End => {}
    }
}
