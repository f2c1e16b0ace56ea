//! In-process publish/subscribe bus with typed topics.
//!
//! Every topic is registered with a payload kind; a publish whose payload
//! does not match is rejected before any subscriber sees it. Each subscriber
//! owns an unbounded FIFO, so delivery is ordered per topic and lossless for
//! as long as the receiver lives.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::planner::GoalTolerance;
use crate::pose::Pose2D;
use crate::telemetry::TelemetryRecord;

/// Desired speed, m/s.
pub const SPEED_CMD: &str = "/speedcmd_meterssec";
/// Desired front wheel angle, rad.
pub const WHEEL_ANGLE_CMD: &str = "/wheelAngleCmd";
pub const JOYSTICK: &str = "/joy";
pub const GOAL: &str = "/goal";
pub const OPERATOR: &str = "/operator";
pub const TELEMETRY: &str = "/telemetry";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Teleop,
    #[serde(alias = "auto")]
    Autonomous,
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlMode::Teleop => "teleop",
            ControlMode::Autonomous => "autonomous",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OperatorEvent {
    DmhPress,
    DmhRelease,
    Ignition,
    SetMode(ControlMode),
    CancelGoal,
    /// Test-mode fault injection.
    BlowFuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JoystickSample {
    pub x: f64,
    pub y: f64,
}

impl JoystickSample {
    /// Clamps both axes to [-1, 1]; non-finite axes read as centred.
    pub fn new(x: f64, y: f64) -> Self {
        let axis = |a: f64| if a.is_finite() { a.clamp(-1.0, 1.0) } else { 0.0 };
        Self { x: axis(x), y: axis(y) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRequest {
    pub pose: Pose2D,
    pub tol: GoalTolerance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Scalar(f64),
    Pose(Pose2D),
    Joystick(JoystickSample),
    Goal(GoalRequest),
    Operator(OperatorEvent),
    Telemetry(Box<TelemetryRecord>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PayloadKind {
    Scalar,
    Pose,
    Joystick,
    Goal,
    Operator,
    Telemetry,
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Scalar(_) => PayloadKind::Scalar,
            Payload::Pose(_) => PayloadKind::Pose,
            Payload::Joystick(_) => PayloadKind::Joystick,
            Payload::Goal(_) => PayloadKind::Goal,
            Payload::Operator(_) => PayloadKind::Operator,
            Payload::Telemetry(_) => PayloadKind::Telemetry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMessage {
    pub topic: String,
    pub payload: Payload,
    pub stamp: Duration,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BusError {
    #[error("unknown topic {0}")]
    UnknownTopic(String),
    #[error("topic {topic} carries {expected:?}, got {got:?}")]
    SchemaMismatch { topic: String, expected: PayloadKind, got: PayloadKind },
    #[error("topic {0} is already registered with another payload kind")]
    Conflict(String),
}

#[derive(Debug)]
struct Topic {
    kind: PayloadKind,
    subscribers: Vec<Sender<TopicMessage>>,
    published: u64,
}

#[derive(Debug, Default)]
pub struct Bus {
    topics: BTreeMap<String, Topic>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bus with the vehicle's standard topics registered.
    pub fn standard() -> Self {
        let mut bus = Self::new();
        for (name, kind) in [
            (SPEED_CMD, PayloadKind::Scalar),
            (WHEEL_ANGLE_CMD, PayloadKind::Scalar),
            (JOYSTICK, PayloadKind::Joystick),
            (GOAL, PayloadKind::Goal),
            (OPERATOR, PayloadKind::Operator),
            (TELEMETRY, PayloadKind::Telemetry),
        ] {
            bus.register(name, kind).expect("standard topics are distinct");
        }
        bus
    }

    /// Idempotent for the same kind.
    pub fn register(&mut self, topic: &str, kind: PayloadKind) -> Result<(), BusError> {
        match self.topics.get(topic) {
            Some(t) if t.kind == kind => Ok(()),
            Some(_) => Err(BusError::Conflict(topic.to_string())),
            None => {
                self.topics.insert(topic.to_string(), Topic { kind, subscribers: Vec::new(), published: 0 });
                Ok(())
            }
        }
    }

    pub fn kind_of(&self, topic: &str) -> Option<PayloadKind> {
        self.topics.get(topic).map(|t| t.kind)
    }

    pub fn subscribe(&mut self, topic: &str) -> Result<Receiver<TopicMessage>, BusError> {
        let t = self.topics.get_mut(topic).ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        let (tx, rx) = channel();
        t.subscribers.push(tx);
        Ok(rx)
    }

    /// Delivers to every live subscriber and returns how many received it.
    /// Dropped receivers are pruned.
    pub fn publish(&mut self, topic: &str, payload: Payload, stamp: Duration) -> Result<usize, BusError> {
        let t = self.topics.get_mut(topic).ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        if payload.kind() != t.kind {
            return Err(BusError::SchemaMismatch { topic: topic.to_string(), expected: t.kind, got: payload.kind() });
        }
        t.published += 1;
        let msg = TopicMessage { topic: topic.to_string(), payload, stamp };
        t.subscribers.retain(|s| s.send(msg.clone()).is_ok());
        Ok(t.subscribers.len())
    }

    pub fn published(&self, topic: &str) -> u64 {
        self.topics.get(topic).map_or(0, |t| t.published)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speed_topic_delivers_scalar() {
        let mut bus = Bus::standard();
        let rx = bus.subscribe(SPEED_CMD).unwrap();
        bus.publish(SPEED_CMD, Payload::Scalar(0.2), Duration::ZERO).unwrap();
        assert_eq!(rx.try_recv().unwrap().payload, Payload::Scalar(0.2));
    }

    #[test]
    fn wrong_shape_is_rejected_without_side_effects() {
        let mut bus = Bus::standard();
        let rx = bus.subscribe(WHEEL_ANGLE_CMD).unwrap();
        let err = bus.publish(WHEEL_ANGLE_CMD, Payload::Pose(Pose2D::default()), Duration::ZERO);
        assert!(matches!(err, Err(BusError::SchemaMismatch { .. })));
        assert!(rx.try_recv().is_err());
        assert_eq!(bus.published(WHEEL_ANGLE_CMD), 0);
        assert!(matches!(bus.publish("/nope", Payload::Scalar(1.0), Duration::ZERO), Err(BusError::UnknownTopic(_))));
    }

    #[test]
    fn fan_out_is_ordered() {
        let mut bus = Bus::standard();
        let a = bus.subscribe(SPEED_CMD).unwrap();
        let b = bus.subscribe(SPEED_CMD).unwrap();
        for i in 0..100 {
            bus.publish(SPEED_CMD, Payload::Scalar(i as f64), Duration::from_millis(i)).unwrap();
        }
        let xs: Vec<_> = a.try_iter().collect();
        let ys: Vec<_> = b.try_iter().collect();
        assert_eq!(xs.len(), 100);
        assert_eq!(xs, ys);
        assert!(xs.windows(2).all(|w| w[0].stamp < w[1].stamp));
    }

    #[test]
    fn dropped_subscribers_are_pruned() {
        let mut bus = Bus::standard();
        let keep = bus.subscribe(SPEED_CMD).unwrap();
        drop(bus.subscribe(SPEED_CMD).unwrap());
        assert_eq!(bus.publish(SPEED_CMD, Payload::Scalar(0.0), Duration::ZERO), Ok(1));
        assert!(keep.try_recv().is_ok());
    }

    #[test]
    fn joystick_axes_clamp() {
        assert_eq!(JoystickSample::new(2.0, -3.0), JoystickSample { x: 1.0, y: -1.0 });
        assert_eq!(JoystickSample::new(f64::NAN, 0.5), JoystickSample { x: 0.0, y: 0.5 });
    }
}
