//! Planar geometry: route polylines with arc-length projection, and oriented
//! rectangles for footprint overlap.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the closest point along the polyline.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Caller guarantees at least two points and no zero-length segments.
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            cumulative.push(acc);
        }
        Self { points, cumulative }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    /// Closest point on the polyline (ties resolved toward the earliest segment).
    pub fn project(&self, x: f64, y: f64) -> Projection {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..self.segment_count() {
            let (ax, ay) = self.points[i];
            let (bx, by) = self.points[i + 1];
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0);
            let (px, py) = (ax + t * dx, ay + t * dy);
            let dist2 = (x - px).powi(2) + (y - py).powi(2);
            if dist2 < best.0 - 1e-12 {
                let len = len2.sqrt();
                let cross = dx * (y - ay) - dy * (x - ax);
                best = (dist2, self.cumulative[i] + t * len, cross.signum() * dist2.sqrt());
            }
        }
        Projection {
            s: best.1,
            lateral: best.2,
        }
    }

    /// Position and tangent heading at arc length `s`; extrapolates past either end.
    pub fn pose_at(&self, s: f64) -> (f64, f64, f64) {
        let n = self.segment_count();
        let mut i = 0;
        while i + 1 < n && s > self.cumulative[i + 1] {
            i += 1;
        }
        let (ax, ay) = self.points[i];
        let (bx, by) = self.points[i + 1];
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / len;
        let heading = (by - ay).atan2(bx - ax);
        (ax + t * (bx - ax), ay + t * (by - ay), heading)
    }

    /// World coordinates of a route-frame point (arc length, lateral offset).
    pub fn to_world(&self, s: f64, lateral: f64) -> (f64, f64, f64) {
        let (x, y, h) = self.pose_at(s);
        (x - lateral * h.sin(), y + lateral * h.cos(), h)
    }
}

/// Rectangle centred at (cx, cy) with its length axis along `heading`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| (self.cx + u * c - v * s, self.cy + u * s + v * c))
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        [(c, s), (-s, c)]
    }

    /// Separating-axis overlap test; touching edges count as overlap.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let a = self.corners();
        let b = other.corners();
        for (ax, ay) in self.axes().into_iter().chain(other.axes()) {
            let proj = |pts: &[(f64, f64); 4]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, y)| {
                    let p = x * ax + y * ay;
                    (lo.min(p), hi.max(p))
                })
            };
            let (alo, ahi) = proj(&a);
            let (blo, bhi) = proj(&b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
        true
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.length / 2.0 && v.abs() <= self.width / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_on_straight_line() {
        let line = Polyline::new(vec![(0.0, 0.0), (100.0, 0.0)]);
        let p = line.project(50.0, 2.0);
        assert!((p.s - 50.0).abs() < 1e-12);
        assert!((p.lateral - 2.0).abs() < 1e-12);
        assert!(line.project(30.0, -1.5).lateral < 0.0);
        assert_eq!(line.project(-10.0, 0.0).s, 0.0);
        assert_eq!(line.project(120.0, 0.0).s, 100.0);
    }

    #[test]
    fn projection_on_corner() {
        let line = Polyline::new(vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)]);
        assert!((line.length() - 20.0).abs() < 1e-12);
        let p = line.project(11.0, 5.0);
        assert!((p.s - 15.0).abs() < 1e-12);
        assert!((p.lateral + 1.0).abs() < 1e-12);
        let (x, y, h) = line.to_world(15.0, 1.0);
        assert!((x - 9.0).abs() < 1e-12 && (y - 5.0).abs() < 1e-12);
        assert!((h - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rect_overlap_basic() {
        let a = OrientedRect { cx: 0.0, cy: 0.0, heading: 0.0, length: 4.0, width: 2.0 };
        let mut b = a;
        b.cx = 3.9;
        assert!(a.overlaps(&b));
        b.cx = 4.1;
        assert!(!a.overlaps(&b));
        b.heading = std::f64::consts::FRAC_PI_4;
        b.cx = 3.5;
        assert!(a.overlaps(&b));
        assert!(a.contains(1.9, 0.9));
        assert!(!a.contains(2.1, 0.0));
    }
}
