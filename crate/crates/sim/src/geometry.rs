//! Planar geometry: vectors, polylines with arclength, boxes and ray casts.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// World point expressed in a frame at `origin` with heading `yaw`
/// (x forward, y left).
pub fn to_local(p: Vec2, origin: Vec2, yaw: f64) -> Vec2 {
    (p - origin).rotate(-yaw)
}

pub fn to_world(p: Vec2, origin: Vec2, yaw: f64) -> Vec2 {
    p.rotate(yaw) + origin
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi);
    r - std::f64::consts::PI
}

/// Closest point on segment `ab` to `p`, as the segment parameter in `[0, 1]`.
pub fn segment_param(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let len2 = d.dot(d);
    if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(d) / len2).clamp(0.0, 1.0)
    }
}

/// Polyline with cumulative arclength.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub points: Vec<Vec2>,
    pub cum: Vec<f64>,
}

/// Result of projecting a point onto a polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub s: f64,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub lateral: f64,
}

impl Polyline {
    /// Panics on fewer than two points.
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(points.len() >= 2, "polyline needs two points");
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in points.windows(2) {
            acc += (w[1] - w[0]).norm();
            cum.push(acc);
        }
        Polyline { points, cum }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().expect("non-empty")
    }

    fn segment_at(&self, s: f64) -> usize {
        match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        }
    }

    /// Point at arclength `s`. Beyond either end the first/last segment
    /// is extended straight.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let i = if s <= 0.0 { 0 } else { self.segment_at(s) };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cum[i + 1] - self.cum[i];
        if seg == 0.0 {
            return a;
        }
        a + (b - a) * ((s - self.cum[i]) / seg)
    }

    /// Direction of travel at arclength `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s.clamp(0.0, self.length()));
        let d = self.points[i + 1] - self.points[i];
        d.y.atan2(d.x)
    }

    /// Projection restricted to segments overlapping `[s_lo, s_hi]`.
    pub fn project_window(&self, p: Vec2, s_lo: f64, s_hi: f64) -> Projection {
        let lo = self.segment_at(s_lo.max(0.0));
        let hi = self.segment_at(s_hi.min(self.length()));
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in lo..=hi {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let t = segment_param(p, a, b);
            let q = a + (b - a) * t;
            let d = (p - q).norm();
            if d < best.0 {
                let side = (b - a).cross(p - a);
                best = (d, self.cum[i] + t * (self.cum[i + 1] - self.cum[i]), d.copysign(side));
            }
        }
        // past the final point, progress continues along the extended last segment
        let last = self.points.len() - 2;
        if hi == last {
            let (a, b) = (self.points[last], self.points[last + 1]);
            let dir = (b - a) * (1.0 / (b - a).norm());
            let along = (p - b).dot(dir);
            if along > 0.0 {
                let lateral = dir.cross(p - b);
                if lateral.abs() <= best.0 {
                    best = (lateral.abs(), self.length() + along, lateral);
                }
            }
        }
        Projection {
            s: best.1,
            lateral: best.2,
        }
    }

    pub fn project(&self, p: Vec2) -> Projection {
        self.project_window(p, 0.0, self.length())
    }

    /// Smallest distance from `p` to the polyline.
    pub fn distance(&self, p: Vec2) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let t = segment_param(p, w[0], w[1]);
                (p - (w[0] + (w[1] - w[0]) * t)).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            self.min,
            Vec2::new(self.max.x, self.min.y),
            self.max,
            Vec2::new(self.min.x, self.max.y),
        ]
    }

    pub fn distance(&self, p: Vec2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx.hypot(dy)
    }

    pub fn as_obb(&self) -> Obb {
        Obb {
            center: self.center(),
            half: (self.max - self.min) * 0.5,
            yaw: 0.0,
        }
    }
}

/// Oriented rectangle with half extents along its own x/y axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub half: Vec2,
    pub yaw: f64,
}

impl Obb {
    pub fn corners(&self) -> [Vec2; 4] {
        let (hx, hy) = (self.half.x, self.half.y);
        [(hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy)]
            .map(|(x, y)| to_world(Vec2::new(x, y), self.center, self.yaw))
    }

    fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.yaw);
        [u, u.perp()]
    }

    /// Separating-axis overlap test; touching counts as overlap.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let (ca, cb) = (self.corners(), other.corners());
        self.axes().into_iter().chain(other.axes()).all(|axis| {
            let span = |cs: &[Vec2; 4]| {
                cs.iter()
                    .map(|c| c.dot(axis))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            };
            let (a, b) = (span(&ca), span(&cb));
            a.0 <= b.1 && b.0 <= a.1
        })
    }

    pub fn overlaps_circle(&self, c: Vec2, r: f64) -> bool {
        self.distance(c) <= r
    }

    /// Distance from `p` to the rectangle, zero inside.
    pub fn distance(&self, p: Vec2) -> f64 {
        let local = to_local(p, self.center, self.yaw);
        let q = Vec2::new(local.x.clamp(-self.half.x, self.half.x), local.y.clamp(-self.half.y, self.half.y));
        (local - q).norm()
    }

    /// Ray entry distance, `None` on a miss or when the origin is inside.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let o = to_local(origin, self.center, self.yaw);
        let d = dir.rotate(-self.yaw);
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for (oc, dc, h) in [(o.x, d.x, self.half.x), (o.y, d.y, self.half.y)] {
            if dc.abs() < 1e-12 {
                if oc.abs() > h {
                    return None;
                }
            } else {
                let (a, b) = ((-h - oc) / dc, (h - oc) / dc);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

/// Ray entry distance into a circle.
pub fn ray_circle(origin: Vec2, dir: Vec2, center: Vec2, r: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.dot(oc) - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then_some(t)
}

/// Proper intersection of segments `ab` and `cd`.
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn straight(len: f64) -> Polyline {
        Polyline::new((0..=(len as usize)).map(|i| Vec2::new(i as f64, 0.0)).collect())
    }

    #[test]
    fn arclength_and_extension() {
        let p = straight(10.0);
        assert_eq!(p.length(), 10.0);
        assert_eq!(p.point_at(3.5), Vec2::new(3.5, 0.0));
        assert_eq!(p.point_at(12.0), Vec2::new(12.0, 0.0));
        let pr = p.project(Vec2::new(4.2, -1.5));
        assert!((pr.s - 4.2).abs() < 1e-12 && (pr.lateral + 1.5).abs() < 1e-12);
        let past = p.project(Vec2::new(13.0, 0.5));
        assert!((past.s - 13.0).abs() < 1e-12 && (past.lateral - 0.5).abs() < 1e-12);
    }

    #[test]
    fn obb_overlap_and_rays() {
        let a = Obb { center: Vec2::new(0.0, 0.0), half: Vec2::new(2.0, 1.0), yaw: 0.0 };
        let b = Obb { center: Vec2::new(3.9, 0.0), half: Vec2::new(2.0, 1.0), yaw: 0.3 };
        let c = Obb { center: Vec2::new(6.5, 0.0), half: Vec2::new(2.0, 1.0), yaw: 0.0 };
        assert!(a.overlaps(&b));
        assert!(!a.overlaps(&c));
        assert_eq!(c.ray_hit(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)), Some(4.5));
        assert_eq!(c.ray_hit(Vec2::new(0.0, 0.0), Vec2::new(-1.0, 0.0)), None);
        assert!(a.overlaps_circle(Vec2::new(2.2, 0.0), 0.3));
        assert!(!a.overlaps_circle(Vec2::new(2.4, 0.0), 0.3));
        let t = ray_circle(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(5.0, 0.0), 0.5).unwrap();
        assert!((t - 4.5).abs() < 1e-12);
    }

    #[test]
    fn crossing_segments() {
        let o = Vec2::new(0.0, 0.0);
        assert!(segments_intersect(o, Vec2::new(2.0, 2.0), Vec2::new(0.0, 2.0), Vec2::new(2.0, 0.0)));
        assert!(!segments_intersect(o, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 1.0)));
    }

    proptest! {
        #[test]
        fn frame_round_trip(x in -50.0f64..50.0, y in -50.0f64..50.0, ox in -9.0f64..9.0, yaw in -4.0f64..4.0) {
            let p = Vec2::new(x, y);
            let o = Vec2::new(ox, -ox);
            let back = to_world(to_local(p, o, yaw), o, yaw);
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn wrap_angle_range(a in -100.0f64..100.0) {
            let w = wrap_angle(a);
            prop_assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&w));
            prop_assert!(((a - w) / std::f64::consts::TAU - ((a - w) / std::f64::consts::TAU).round()).abs() < 1e-9);
        }
    }
}
