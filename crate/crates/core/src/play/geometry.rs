//! Court geometry and the shoulder-normal orientation feature. Units are feet.

use crate::error::{Error, Result};

pub const COURT_LENGTH: f64 = 94.0;
pub const COURT_WIDTH: f64 = 50.0;
pub const LEFT_BASKET: [f64; 2] = [5.25, 25.0];
pub const RIGHT_BASKET: [f64; 2] = [88.75, 25.0];
/// Basket attacked by the offense in generated plays.
pub const ATTACK_BASKET: [f64; 2] = RIGHT_BASKET;
pub const THREE_POINT_RADIUS: f64 = 23.75;
pub const THREE_POINT_CORNER: f64 = 22.0;

/// Minimum shoulder separation for a usable normal.
pub const SHOULDER_TOLERANCE: f64 = 1e-6;

/// Orientation used when no valid shoulder normal has been seen yet.
pub const FALLBACK_NORMAL: [f64; 2] = [0.0, 1.0];

/// Unit normal `R90 (uR - uL) / |uR - uL|` with `R90 = [[0, -1], [1, 0]]`.
pub fn shoulder_normal(left: [f64; 2], right: [f64; 2]) -> Result<[f64; 2]> {
    let w = [right[0] - left[0], right[1] - left[1]];
    let norm = w[0].hypot(w[1]);
    if !(norm > SHOULDER_TOLERANCE) {
        return Err(Error::DegeneratePose(norm));
    }
    Ok([-w[1] / norm, w[0] / norm])
}

/// Substitutes the last valid normal for degenerate poses.
#[derive(Debug, Clone, Copy)]
pub struct NormalTracker {
    last: [f64; 2],
}

impl Default for NormalTracker {
    fn default() -> Self {
        NormalTracker {
            last: FALLBACK_NORMAL,
        }
    }
}

impl NormalTracker {
    pub fn next(&mut self, left: [f64; 2], right: [f64; 2]) -> [f64; 2] {
        if let Ok(n) = shoulder_normal(left, right) {
            self.last = n;
        }
        self.last
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn clamp_to_court(p: [f64; 2], margin: f64) -> [f64; 2] {
    [
        p[0].clamp(margin, COURT_LENGTH - margin),
        p[1].clamp(margin, COURT_WIDTH - margin),
    ]
}

pub fn in_court(p: [f64; 2]) -> bool {
    (0.0..=COURT_LENGTH).contains(&p[0]) && (0.0..=COURT_WIDTH).contains(&p[1])
}

/// Whether `p` is in the half containing `basket`.
pub fn in_half_of(p: [f64; 2], basket: [f64; 2]) -> bool {
    if basket[0] > COURT_LENGTH / 2.0 {
        p[0] >= COURT_LENGTH / 2.0
    } else {
        p[0] <= COURT_LENGTH / 2.0
    }
}

/// Whether `p` is beyond the three-point line of `basket`: straight corner
/// lines 22 ft from the basket's long axis up to where they meet the 23.75 ft arc.
pub fn beyond_arc(p: [f64; 2], basket: [f64; 2]) -> bool {
    let dy = (p[1] - basket[1]).abs();
    // along-court distance from the basket toward midcourt
    let toward_mid = if basket[0] > COURT_LENGTH / 2.0 {
        basket[0] - p[0]
    } else {
        p[0] - basket[0]
    };
    let corner_depth = (THREE_POINT_RADIUS.powi(2) - THREE_POINT_CORNER.powi(2)).sqrt();
    if toward_mid <= corner_depth {
        dy >= THREE_POINT_CORNER
    } else {
        dist(p, basket) >= THREE_POINT_RADIUS
    }
}

/// Sign of the cross product `(b - a) x (p - a)`: which side of the directed
/// line a→b the point `p` lies on (0 when on the line).
pub fn side_of_line(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> i8 {
    let c = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if c > 0.0 {
        1
    } else if c < 0.0 {
        -1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rot(p: [f64; 2], c: [f64; 2], th: f64) -> [f64; 2] {
        let (s, co) = th.sin_cos();
        let (x, y) = (p[0] - c[0], p[1] - c[1]);
        [c[0] + co * x - s * y, c[1] + s * x + co * y]
    }

    #[test]
    fn normal_examples() {
        assert_eq!(shoulder_normal([0.0, 0.0], [1.0, 0.0]).unwrap(), [0.0, 1.0]);
        let n = shoulder_normal([0.0, 0.0], [0.0, 2.0]).unwrap();
        assert_eq!(n, [-1.0, 0.0]);
        assert!(matches!(
            shoulder_normal([1.0, 1.0], [1.0, 1.0]),
            Err(Error::DegeneratePose(_))
        ));
    }

    #[test]
    fn tracker_substitutes_last_valid() {
        let mut t = NormalTracker::default();
        assert_eq!(t.next([0.0, 0.0], [0.0, 0.0]), FALLBACK_NORMAL);
        let n = t.next([0.0, 0.0], [0.0, 1.0]);
        assert_eq!(t.next([3.0, 3.0], [3.0, 3.0]), n);
    }

    #[test]
    fn arc_geometry() {
        let b = RIGHT_BASKET;
        assert!(!beyond_arc([b[0] - 10.0, 25.0], b));
        assert!(beyond_arc([b[0] - 24.0, 25.0], b));
        // corner: 22.5 ft off-axis near the baseline is a three
        assert!(beyond_arc([b[0] - 2.0, 25.0 + 22.5], b));
        assert!(!beyond_arc([b[0] - 2.0, 25.0 + 21.5], b));
        // left basket mirrors
        assert!(beyond_arc([LEFT_BASKET[0] + 24.0, 25.0], LEFT_BASKET));
    }

    proptest! {
        #[test]
        fn normal_is_unit_and_orthogonal(
            lx in -50.0..50.0f64, ly in -50.0..50.0f64,
            dx in -3.0..3.0f64, dy in -3.0..3.0f64,
        ) {
            prop_assume!(dx.hypot(dy) > 1e-3);
            let n = shoulder_normal([lx, ly], [lx + dx, ly + dy]).unwrap();
            prop_assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-9);
            prop_assert!((n[0] * dx + n[1] * dy).abs() < 1e-9);
        }

        #[test]
        fn normal_rotates_with_shoulders(
            lx in -50.0..50.0f64, ly in -50.0..50.0f64,
            dx in -3.0..3.0f64, dy in -3.0..3.0f64,
            cx in -20.0..20.0f64, cy in -20.0..20.0f64,
            th in -7.0..7.0f64,
        ) {
            prop_assume!(dx.hypot(dy) > 1e-3);
            let l = [lx, ly];
            let r = [lx + dx, ly + dy];
            let n = shoulder_normal(l, r).unwrap();
            let nr = shoulder_normal(rot(l, [cx, cy], th), rot(r, [cx, cy], th)).unwrap();
            let expect = rot(n, [0.0, 0.0], th);
            prop_assert!((nr[0] - expect[0]).abs() < 1e-6 && (nr[1] - expect[1]).abs() < 1e-6);
        }

        #[test]
        fn normal_ignores_translation_and_scale(
            lx in -50.0..50.0f64, ly in -50.0..50.0f64,
            dx in -3.0..3.0f64, dy in -3.0..3.0f64,
            tx in -20.0..20.0f64, ty in -20.0..20.0f64,
            k in 0.01..100.0f64,
        ) {
            prop_assume!(dx.hypot(dy) > 1e-3);
            let n = shoulder_normal([lx, ly], [lx + dx, ly + dy]).unwrap();
            let m = shoulder_normal(
                [k * lx + tx, k * ly + ty],
                [k * (lx + dx) + tx, k * (ly + dy) + ty],
            ).unwrap();
            prop_assert!((n[0] - m[0]).abs() < 1e-9 && (n[1] - m[1]).abs() < 1e-9);
        }
    }
}
