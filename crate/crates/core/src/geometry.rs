//! Planar geometry helpers: angles, polylines and oriented boxes.

use std::f64::consts::PI;

pub type Point = [f64; 2];

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Closest point on segment `ab` to `p`, as (parameter in [0,1], distance).
pub fn project_on_segment(p: Point, a: Point, b: Point) -> (f64, f64) {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len2 = dx * dx + dy * dy;
    let t = if len2 <= f64::EPSILON {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * dx, a[1] + t * dy];
    (t, dist(p, q))
}

/// Projection of a point onto a [`Polyline`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Euclidean distance from the query point to the foot point.
    pub distance: f64,
}

/// Piecewise-linear curve with cached cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point>,
    cum: Vec<f64>,
}

impl Polyline {
    /// Builds a polyline, dropping consecutive duplicate points.
    pub fn new(points: &[Point]) -> Self {
        let mut pts: Vec<Point> = Vec::with_capacity(points.len());
        for &p in points {
            if pts.last().is_none_or(|&q| dist(p, q) > 1e-9) {
                pts.push(p);
            }
        }
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        for (i, p) in pts.iter().enumerate() {
            if i > 0 {
                acc += dist(pts[i - 1], *p);
            }
            cum.push(acc);
        }
        Self { points: pts, cum }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    /// Global projection over every segment. Ties resolve to the earliest segment.
    pub fn project(&self, p: Point) -> Option<Projection> {
        self.project_window(p, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Projection restricted to segments overlapping the arc-length window `[s_lo, s_hi]`.
    pub fn project_window(&self, p: Point, s_lo: f64, s_hi: f64) -> Option<Projection> {
        match self.points.len() {
            0 => None,
            1 => Some(Projection {
                s: 0.0,
                distance: dist(p, self.points[0]),
            }),
            _ => {
                let mut best: Option<Projection> = None;
                for i in 0..self.points.len() - 1 {
                    if self.cum[i + 1] < s_lo || self.cum[i] > s_hi {
                        continue;
                    }
                    let (t, d) = project_on_segment(p, self.points[i], self.points[i + 1]);
                    if best.is_none_or(|b| d < b.distance) {
                        let s = self.cum[i] + t * (self.cum[i + 1] - self.cum[i]);
                        best = Some(Projection { s, distance: d });
                    }
                }
                best
            }
        }
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len();
        match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Point at arc length `s`; extrapolates linearly past either end.
    pub fn point_at(&self, s: f64) -> Point {
        if self.points.len() == 1 {
            return self.points[0];
        }
        let i = self.segment_at(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let seg = self.cum[i + 1] - self.cum[i];
        let t = (s - self.cum[i]) / seg;
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    /// Tangent heading of the segment containing `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        if self.points.len() == 1 {
            return 0.0;
        }
        let i = self.segment_at(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        (b[1] - a[1]).atan2(b[0] - a[0])
    }
}

/// Oriented rectangle given by center, heading and full length/width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Point,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Point, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            length,
            width,
        }
    }

    fn axes(&self) -> [Point; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Point; 4] {
        let [u, v] = self.axes();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let c = self.center;
        let at = |a: f64, b: f64| [c[0] + a * u[0] + b * v[0], c[1] + a * u[1] + b * v[1]];
        [at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)]
    }

    /// Separating-axis overlap test. Touching boxes count as overlapping.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let ca = self.corners();
        let cb = other.corners();
        for axis in self.axes().into_iter().chain(other.axes()) {
            let (amin, amax) = extent(&ca, axis);
            let (bmin, bmax) = extent(&cb, axis);
            if amax < bmin || bmax < amin {
                return false;
            }
        }
        true
    }

    /// Minimum Euclidean distance between the two rectangles; 0 when they overlap.
    pub fn distance(&self, other: &OrientedBox) -> f64 {
        if self.overlaps(other) {
            return 0.0;
        }
        let ca = self.corners();
        let cb = other.corners();
        let mut best = f64::INFINITY;
        for (pts, poly) in [(&ca, &cb), (&cb, &ca)] {
            for &p in pts.iter() {
                for i in 0..4 {
                    let (_, d) = project_on_segment(p, poly[i], poly[(i + 1) % 4]);
                    best = best.min(d);
                }
            }
        }
        best
    }
}

fn extent(corners: &[Point; 4], axis: Point) -> (f64, f64) {
    corners
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let d = p[0] * axis[0] + p[1] * axis[1];
            (lo.min(d), hi.max(d))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(2.5 * PI) - 0.5 * PI).abs() < 1e-12);
        assert_eq!(normalize_angle(0.3), 0.3);
    }

    #[test]
    fn polyline_projection_and_sampling() {
        let line = Polyline::new(&[[0.0, 0.0], [10.0, 0.0], [10.0, 0.0], [10.0, 10.0]]);
        assert_eq!(line.len(), 3);
        assert_eq!(line.length(), 20.0);
        let p = line.project([4.0, 3.0]).unwrap();
        assert_eq!(p.s, 4.0);
        assert_eq!(p.distance, 3.0);
        assert_eq!(line.point_at(15.0), [10.0, 5.0]);
        assert_eq!(line.point_at(25.0), [10.0, 15.0]);
        assert!((line.heading_at(12.0) - PI / 2.0).abs() < 1e-12);
        // window excludes the first leg
        let w = line.project_window([4.0, 3.0], 12.0, 20.0).unwrap();
        assert!(w.s >= 10.0);
    }

    #[test]
    fn box_distance_axis_aligned() {
        let a = OrientedBox::new([0.0, 0.0], 0.0, 4.0, 2.0);
        let b = OrientedBox::new([7.0, 0.0], 0.0, 4.0, 2.0);
        assert!((a.distance(&b) - 3.0).abs() < 1e-12);
        let c = OrientedBox::new([3.0, 0.5], 0.3, 4.0, 2.0);
        assert!(a.overlaps(&c));
        assert_eq!(a.distance(&c), 0.0);
    }

    #[test]
    fn overlap_grid_has_no_false_negatives() {
        // Axis-aligned boxes overlap iff both center gaps are within the half-extent sums.
        let a = OrientedBox::new([0.0, 0.0], 0.0, 4.0, 2.0);
        for i in -12..=12 {
            for j in -8..=8 {
                let cx = i as f64 * 0.5;
                let cy = j as f64 * 0.25;
                let b = OrientedBox::new([cx, cy], 0.0, 3.0, 1.0);
                let expect = cx.abs() <= 3.5 && cy.abs() <= 1.5;
                assert_eq!(a.overlaps(&b), expect, "cx={cx} cy={cy}");
                assert_eq!(b.overlaps(&a), expect);
            }
        }
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric(
            ax in -5.0..5.0f64, ay in -5.0..5.0f64, ah in -3.2..3.2f64,
            bx in -5.0..5.0f64, by in -5.0..5.0f64, bh in -3.2..3.2f64,
        ) {
            let a = OrientedBox::new([ax, ay], ah, 4.8, 1.9);
            let b = OrientedBox::new([bx, by], bh, 0.8, 0.8);
            prop_assert_eq!(a.overlaps(&b), b.overlaps(&a));
            let d1 = a.distance(&b);
            let d2 = b.distance(&a);
            prop_assert!((d1 - d2).abs() < 1e-9);
        }

        #[test]
        fn normalized_angle_is_equivalent(a in -100.0..100.0f64) {
            let n = normalize_angle(a);
            prop_assert!(n > -PI && n <= PI);
            prop_assert!(((n - a) / (2.0 * PI)).round() * 2.0 * PI - (n - a) < 1e-9);
            prop_assert!((n.sin() - a.sin()).abs() < 1e-9 && (n.cos() - a.cos()).abs() < 1e-9);
        }
    }
}
