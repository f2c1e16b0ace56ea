//! Shortest forward-only paths under a minimum turning radius.
//!
//! Six words cover every optimum: `LSL RSR LSR RSL RLR LRL`. Each is solved in
//! closed form in a frame where the start sits at the origin, the goal on the
//! positive x axis and lengths are scaled by the radius.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pose::Pose2D;
use crate::quant::normalize_angle;

/// Poses closer than this (metres and radians) are treated as coincident.
pub const COINCIDENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathKind {
    LSL,
    RSR,
    LSR,
    RSL,
    RLR,
    LRL,
}

impl PathKind {
    /// Tie-break order.
    pub const ALL: [PathKind; 6] =
        [PathKind::LSL, PathKind::RSR, PathKind::LSR, PathKind::RSL, PathKind::RLR, PathKind::LRL];

    pub fn segments(self) -> [Segment; 3] {
        use Segment::*;
        match self {
            PathKind::LSL => [Left, Straight, Left],
            PathKind::RSR => [Right, Straight, Right],
            PathKind::LSR => [Left, Straight, Right],
            PathKind::RSL => [Right, Straight, Left],
            PathKind::RLR => [Right, Left, Right],
            PathKind::LRL => [Left, Right, Left],
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Left,
    Straight,
    Right,
}

impl Segment {
    /// Pose after driving `length` metres of this segment.
    pub fn advance(self, p: Pose2D, length: f64, radius: f64) -> Pose2D {
        let h = p.heading;
        match self {
            Segment::Straight => Pose2D { x: p.x + length * h.cos(), y: p.y + length * h.sin(), heading: h },
            Segment::Left => {
                let h2 = h + length / radius;
                Pose2D {
                    x: p.x + radius * (h2.sin() - h.sin()),
                    y: p.y + radius * (h.cos() - h2.cos()),
                    heading: normalize_angle(h2),
                }
            }
            Segment::Right => {
                let h2 = h - length / radius;
                Pose2D {
                    x: p.x + radius * (h.sin() - h2.sin()),
                    y: p.y + radius * (h2.cos() - h.cos()),
                    heading: normalize_angle(h2),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DubinsPath {
    pub start: Pose2D,
    pub kind: PathKind,
    /// Segment lengths in metres.
    pub segments: [f64; 3],
    pub radius: f64,
    pub total_length: f64,
}

/// Reduces to [0, 2pi), snapping values within rounding of 2pi to zero.
fn mod2pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if TAU - r < 1e-12 {
        0.0
    } else {
        r
    }
}

/// Normalized problem: start at origin facing `alpha`, goal at `(d, 0)`
/// facing `beta`, unit radius.
#[derive(Debug, Clone, Copy)]
struct Normalized {
    alpha: f64,
    beta: f64,
    d: f64,
}

impl Normalized {
    fn new(start: &Pose2D, goal: &Pose2D, radius: f64) -> Self {
        let (dx, dy) = (goal.x - start.x, goal.y - start.y);
        let d = dx.hypot(dy) / radius;
        let theta = if d > 0.0 { mod2pi(dy.atan2(dx)) } else { 0.0 };
        Self { alpha: mod2pi(start.heading - theta), beta: mod2pi(goal.heading - theta), d }
    }

    /// `[t, p, q]` in units of the radius, if the word is feasible.
    fn solve(&self, kind: PathKind) -> Option<[f64; 3]> {
        let Normalized { alpha: a, beta: b, d } = *self;
        let (sa, ca, sb, cb) = (a.sin(), a.cos(), b.sin(), b.cos());
        let cab = (a - b).cos();
        match kind {
            PathKind::LSL => {
                let p2 = 2.0 + d * d - 2.0 * cab + 2.0 * d * (sa - sb);
                if p2 < 0.0 {
                    return None;
                }
                let tmp = (cb - ca).atan2(d + sa - sb);
                Some([mod2pi(tmp - a), p2.sqrt(), mod2pi(b - tmp)])
            }
            PathKind::RSR => {
                let p2 = 2.0 + d * d - 2.0 * cab + 2.0 * d * (sb - sa);
                if p2 < 0.0 {
                    return None;
                }
                let tmp = (ca - cb).atan2(d - sa + sb);
                Some([mod2pi(a - tmp), p2.sqrt(), mod2pi(tmp - b)])
            }
            PathKind::LSR => {
                let p2 = -2.0 + d * d + 2.0 * cab + 2.0 * d * (sa + sb);
                if p2 < 0.0 {
                    return None;
                }
                let p = p2.sqrt();
                let tmp = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
                Some([mod2pi(tmp - a), p, mod2pi(tmp - b)])
            }
            PathKind::RSL => {
                let p2 = -2.0 + d * d + 2.0 * cab - 2.0 * d * (sa + sb);
                if p2 < 0.0 {
                    return None;
                }
                let p = p2.sqrt();
                let tmp = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
                Some([mod2pi(a - tmp), p, mod2pi(b - tmp)])
            }
            PathKind::RLR => {
                let c = (6.0 - d * d + 2.0 * cab + 2.0 * d * (sa - sb)) / 8.0;
                if c.abs() > 1.0 {
                    return None;
                }
                let p = mod2pi(TAU - c.acos());
                let t = mod2pi(a - (ca - cb).atan2(d - sa + sb) + p / 2.0);
                Some([t, p, mod2pi(a - b - t + p)])
            }
            PathKind::LRL => {
                let c = (6.0 - d * d + 2.0 * cab + 2.0 * d * (sb - sa)) / 8.0;
                if c.abs() > 1.0 {
                    return None;
                }
                let p = mod2pi(TAU - c.acos());
                let t = mod2pi(-a - (ca - cb).atan2(d + sa - sb) + p / 2.0);
                Some([t, p, mod2pi(b - a - t + p)])
            }
        }
    }
}

impl DubinsPath {
    /// The path of one word, if feasible.
    pub fn of_kind(start: Pose2D, goal: Pose2D, radius: f64, kind: PathKind) -> Option<DubinsPath> {
        let params = Normalized::new(&start, &goal, radius).solve(kind)?;
        let segments = params.map(|v| v * radius);
        Some(DubinsPath { start, kind, segments, radius, total_length: segments.iter().sum() })
    }

    /// Evaluates all six words and keeps the shortest; exact ties go to the
    /// earlier word in [`PathKind::ALL`].
    ///
    /// # Panics
    ///
    /// If `radius` is not positive and finite.
    pub fn shortest(start: Pose2D, goal: Pose2D, radius: f64) -> DubinsPath {
        assert!(radius > 0.0 && radius.is_finite(), "turning radius must be positive");
        if start.distance(&goal) < COINCIDENT_EPS && start.heading_error(&goal) < COINCIDENT_EPS {
            return DubinsPath { start, kind: PathKind::LSL, segments: [0.0; 3], radius, total_length: 0.0 };
        }
        let norm = Normalized::new(&start, &goal, radius);
        let mut best: Option<DubinsPath> = None;
        for kind in PathKind::ALL {
            let Some(params) = norm.solve(kind) else { continue };
            let segments = params.map(|v| v * radius);
            let total_length = segments.iter().sum::<f64>();
            let tie_eps = 1e-10 * total_length.max(1.0);
            if best.is_none_or(|b| total_length < b.total_length - tie_eps) {
                best = Some(DubinsPath { start, kind, segments, radius, total_length });
            }
        }
        best.expect("LSL or RSR is feasible for any pair of poses")
    }

    /// Pose at arc length `s` (clamped to the path).
    pub fn pose_at(&self, s: f64) -> Pose2D {
        let mut remaining = s.clamp(0.0, self.total_length);
        let mut pose = self.start;
        for (seg, len) in self.kind.segments().into_iter().zip(self.segments) {
            let run = remaining.min(len);
            pose = seg.advance(pose, run, self.radius);
            remaining -= run;
            if remaining <= 0.0 {
                break;
            }
        }
        pose
    }

    pub fn end(&self) -> Pose2D {
        let mut pose = self.start;
        for (seg, len) in self.kind.segments().into_iter().zip(self.segments) {
            pose = seg.advance(pose, len, self.radius);
        }
        pose
    }

    /// Poses every `ds` metres from the start, ending exactly at the end.
    pub fn sample(&self, ds: f64) -> Vec<Pose2D> {
        assert!(ds > 0.0, "sample spacing must be positive");
        let n = (self.total_length / ds + 1e-9).floor() as usize;
        let mut out: Vec<Pose2D> = (0..=n).map(|k| self.pose_at((k as f64 * ds).min(self.total_length))).collect();
        if self.total_length - n as f64 * ds > 1e-9 {
            out.push(self.end());
        } else if let Some(last) = out.last_mut() {
            *last = self.end();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn collinear_goal_is_a_straight_lsl() {
        let p = DubinsPath::shortest(Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(10.0, 0.0, 0.0), 1.0);
        assert_eq!(p.kind, PathKind::LSL);
        assert!((p.total_length - 10.0).abs() < 1e-12);
        assert_eq!(p.sample(1.0).len(), 11);
    }

    #[test]
    fn coincident_poses_give_empty_path() {
        let a = Pose2D::new(1.0, 2.0, 0.3);
        let p = DubinsPath::shortest(a, a, 1.0);
        assert_eq!(p.total_length, 0.0);
        assert_eq!(p.sample(0.1), vec![a]);
    }

    #[test]
    fn in_place_turn_uses_three_arcs() {
        let p = DubinsPath::shortest(Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(0.0, 0.0, PI), 1.0);
        assert!(matches!(p.kind, PathKind::RLR | PathKind::LRL));
        assert!((p.total_length - 7.0 * PI / 3.0).abs() < 1e-9);
        assert!(p.total_length >= PI);
    }

    #[test]
    fn endpoints_match() {
        let s = Pose2D::new(1.0, -2.0, 0.4);
        let g = Pose2D::new(-3.0, 5.0, -2.5);
        for kind in PathKind::ALL {
            if let Some(p) = DubinsPath::of_kind(s, g, 1.3, kind) {
                let e = p.end();
                assert!(e.distance(&g) < 1e-9, "{kind}: {e:?}");
                assert!(e.heading_error(&g) < 1e-9);
            }
        }
    }
}
