//! Quantization helpers shared by every place a command is rounded.

/// Round half away from zero. Used for every command quantization.
pub fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}

/// Moves `from` toward `to` by at most `max_step`, never overshooting and
/// never exceeding `max_step` after floating-point rounding.
pub fn step_toward(from: f64, to: f64, max_step: f64) -> f64 {
    let delta = (to - from).clamp(-max_step, max_step);
    let mut next = from + delta;
    while (next - from).abs() > max_step {
        next = if next > from { next.next_down() } else { next.next_up() };
    }
    next
}

/// Wraps an angle into (-pi, pi]. Angles already inside are returned
/// bit-for-bit.
pub fn normalize_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}
