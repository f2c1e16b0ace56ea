//! Quick end-to-end checks of a configuration, run by `podcar selftest`.

use std::time::Duration;

use crate::bus::GoalRequest;
use crate::planner::{GoalTolerance, NavStatus};
use crate::pose::Pose2D;
use crate::safety::{Event, EventKind, Mode, SafetyState};
use crate::scenario::Scenario;
use crate::stack::{Stack, StackConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name, passed, detail: detail.into() }
}

pub fn run(cfg: &StackConfig) -> Vec<Check> {
    let mut out = Vec::new();
    let act = &cfg.sim.actuator;
    let cal = &cfg.sim.speed_cal;

    out.push(match (
        act.angle_to_command(act.angle_max_right),
        act.angle_to_command(0.0),
        act.angle_to_command(act.angle_max_left),
    ) {
        (Ok(r), Ok(c), Ok(l)) => check("steering anchors", (r, c, l) == (2500, 1900, 1000), format!("{r} {c} {l}")),
        other => check("steering anchors", false, format!("{other:?}")),
    });

    out.push(match cfg.sim.geometry.validate(act.stroke_max) {
        Ok(()) => check("steering geometry", true, "monotone and inside the stroke"),
        Err(e) => check("steering geometry", false, e.to_string()),
    });

    let volts: Vec<f64> = [0, 80, 132, 170, 201, 240, 255]
        .iter()
        .map(|&b| cal.command_to_voltage(b, cal.v_supply_nominal).unwrap_or(f64::NAN))
        .collect();
    let table = [0.0, 0.9, 1.5, 1.9, 2.3, 2.7, 3.0];
    let worst = volts.iter().zip(table).map(|(v, t)| (v - t).abs()).fold(0.0, f64::max);
    out.push(check("speed voltages", worst <= 0.15, format!("worst deviation {worst:.3} V")));

    let bad: Vec<i64> = (0..=255i64)
        .filter(|&b| {
            let s = SafetyState { mode: Mode::IgnitionPending, dmh_pressed: true, ..SafetyState::default() };
            let (next, _) =
                crate::safety::step(&s, &Event::new(Duration::ZERO, EventKind::IgnitionRequest(b)), &cfg.safety, cal);
            (next.mode == Mode::Armed) != cal.in_ignition_dead_zone(b)
        })
        .collect();
    out.push(check("ignition gating", bad.is_empty(), format!("{} bytes misgated", bad.len())));

    let mut stack = Stack::new(*cfg);
    let script = Scenario::parse("0 dmh press\n0 ignition\n0.2 speed 0.2\n2 heartbeat off\n3 end\n")
        .expect("built-in scenario parses");
    let mut neutral_at = None;
    script.run(&mut stack, |r| {
        if neutral_at.is_none() && r.t > 2.0 && r.speed_cmd == crate::safety::NEUTRAL_SPEED {
            neutral_at = Some(r.t);
        }
    });
    let ok = stack.safety_mode() == Mode::Fault && neutral_at.is_some_and(|t| t <= 2.0 + 0.12 + 0.1);
    out.push(check("heartbeat watchdog", ok, format!("neutral at {neutral_at:?} s, mode {:?}", stack.safety_mode())));

    let mut stack = Stack::new(*cfg);
    let armed = stack.arm(10);
    let goal = GoalRequest { pose: Pose2D::new(1.0, 0.0, 0.0), tol: GoalTolerance::default() };
    stack.run_goal(goal, Duration::from_secs(60));
    let p = stack.pose();
    out.push(check(
        "one metre goal",
        armed && stack.nav_status() == &NavStatus::Succeeded,
        format!("{} at {:.3} m / {:.3} rad", stack.nav_status().label(), p.distance(&goal.pose), p.heading_error(&goal.pose)),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configuration_passes() {
        for c in run(&StackConfig::default()) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
