//! Coordinates on the unit torus `[0, 1)`.

use std::f64::consts::TAU;

/// Maps `x` into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let y = x - x.floor();
    // x = -1e-18 gives floor -1 and y = 1.0 in floating point.
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Minimal signed representative of `x` in `[-1/2, 1/2)`.
#[inline]
pub fn signed(x: f64) -> f64 {
    let y = x - (x + 0.5).floor();
    if y >= 0.5 {
        y - 1.0
    } else {
        y
    }
}

/// Arc length travelled from `from` to `to` in the positive direction, in `[0, 1)`.
#[inline]
pub fn d_dir(from: f64, to: f64) -> f64 {
    if to >= from {
        to - from
    } else {
        to + 1.0 - from
    }
}

/// Weighted circular mean of points on the torus; `None` when the resultant vanishes.
pub fn circular_mean<I>(points: I) -> Option<f64>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let (mut c, mut s, mut total) = (0.0, 0.0, 0.0);
    for (x, weight) in points {
        c += weight * (TAU * x).cos();
        s += weight * (TAU * x).sin();
        total += weight.abs();
    }
    if c.hypot(s) <= 1e-12 * total {
        return None;
    }
    Some(wrap(s.atan2(c) / TAU))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_and_signed() {
        assert_eq!(wrap(1.25), 0.25);
        assert_eq!(wrap(-0.25), 0.75);
        assert_eq!(wrap(-1e-18), 0.0);
        assert_eq!(signed(0.5), -0.5);
        assert_eq!(signed(-0.5), -0.5);
        assert!((signed(0.7) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn directed_distance() {
        assert!((d_dir(0.2, 0.5) - 0.3).abs() < 1e-15);
        assert!((d_dir(0.9, 0.2) - 0.3).abs() < 1e-15);
        assert_eq!(d_dir(0.4, 0.4), 0.0);
    }

    #[test]
    fn circular_mean_across_origin() {
        let m = circular_mean([(0.95, 1.0), (0.05, 1.0)]).unwrap();
        assert!(signed(m).abs() < 1e-12);
        assert!(circular_mean([(0.25, 1.0), (0.75, 1.0)]).is_none());
    }
}
