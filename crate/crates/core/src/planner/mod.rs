//! Goal-directed driving: Dubins planning, pure-pursuit following and goal supervision.

pub mod dubins;
pub mod follow;
pub mod navigate;

pub use dubins::{DubinsPath, PathKind, Segment};
pub use follow::{FollowCommand, FollowFailure, FollowStatus, Follower, FollowerConfig, GoalTolerance};
pub use navigate::{AbortReason, NavCommand, NavConfig, NavStatus, Navigator};
