//! Plan-view geometry primitives shared by the scene generator and the
//! ray tracer.

use serde::{Deserialize, Serialize};

pub const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        self.sub(o).norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn plan(self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub const fn new(a: Point2, b: Point2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    pub fn is_axis_aligned(&self) -> bool {
        (self.a.x - self.b.x).abs() < EPS || (self.a.y - self.b.y).abs() < EPS
    }

    /// Unit normal (left-hand of a→b).
    pub fn normal(&self) -> Point2 {
        let d = self.b.sub(self.a);
        let n = Point2::new(-d.y, d.x);
        n.scale(1.0 / n.norm())
    }

    /// Mirror image of `p` across the infinite line through this segment.
    pub fn mirror(&self, p: Point2) -> Point2 {
        let n = self.normal();
        let dist = p.sub(self.a).dot(n);
        p.sub(n.scale(2.0 * dist))
    }

    /// Intersection parameters `(t, u)` of `p + t (q - p)` with `a + u (b - a)`,
    /// or `None` for parallel lines.
    pub fn intersect_params(&self, p: Point2, q: Point2) -> Option<(f64, f64)> {
        let r = q.sub(p);
        let s = self.b.sub(self.a);
        let denom = r.cross(s);
        if denom.abs() < 1e-15 * (r.norm() * s.norm()).max(1e-300) {
            return None;
        }
        let ap = self.a.sub(p);
        let t = ap.cross(s) / denom;
        let u = ap.cross(r) / denom;
        Some((t, u))
    }

    /// True when the open segment `p → q` (endpoints excluded by `tol`
    /// metres) crosses or touches this segment.
    pub fn blocks(&self, p: Point2, q: Point2, tol: f64) -> bool {
        let len = p.dist(q);
        if len < tol {
            return false;
        }
        match self.intersect_params(p, q) {
            Some((t, u)) => {
                let wall_len = self.length();
                let t_tol = tol / len;
                let u_tol = tol / wall_len;
                t > t_tol && t < 1.0 - t_tol && u >= -u_tol && u <= 1.0 + u_tol
            }
            None => false,
        }
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1: x0.max(x1),
            y1: y0.max(y1),
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2 {
        Point2::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        p.x >= self.x0 - tol && p.x <= self.x1 + tol && p.y >= self.y0 - tol && p.y <= self.y1 + tol
    }

    pub fn contains_strict(&self, p: Point2) -> bool {
        p.x > self.x0 && p.x < self.x1 && p.y > self.y0 && p.y < self.y1
    }

    pub fn contains_rect(&self, r: &Rect, tol: f64) -> bool {
        r.x0 >= self.x0 - tol && r.x1 <= self.x1 + tol && r.y0 >= self.y0 - tol && r.y1 <= self.y1 + tol
    }

    /// Counter-clockwise corner list starting at `(x0, y0)`.
    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(self.x0, self.y0),
            Point2::new(self.x1, self.y0),
            Point2::new(self.x1, self.y1),
            Point2::new(self.x0, self.y1),
        ]
    }

    pub fn edges(&self) -> [Segment; 4] {
        let c = self.corners();
        [
            Segment::new(c[0], c[1]),
            Segment::new(c[1], c[2]),
            Segment::new(c[2], c[3]),
            Segment::new(c[3], c[0]),
        ]
    }

    /// Whether an axis-aligned segment passes through the open interior.
    pub fn segment_enters_interior(&self, s: &Segment) -> bool {
        let (sx0, sx1) = (s.a.x.min(s.b.x), s.a.x.max(s.b.x));
        let (sy0, sy1) = (s.a.y.min(s.b.y), s.a.y.max(s.b.y));
        if (sx1 - sx0).abs() < EPS {
            sx0 > self.x0 + EPS && sx0 < self.x1 - EPS && sy1 > self.y0 + EPS && sy0 < self.y1 - EPS
        } else if (sy1 - sy0).abs() < EPS {
            sy0 > self.y0 + EPS && sy0 < self.y1 - EPS && sx1 > self.x0 + EPS && sx0 < self.x1 - EPS
        } else {
            // general segment: sample densely
            let n = 256;
            (0..=n).any(|i| {
                let t = i as f64 / n as f64;
                self.contains_strict(s.a.add(s.b.sub(s.a).scale(t)))
            })
        }
    }
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum();
    0.5 * twice.abs()
}

/// Even-odd point-in-polygon test; points on the boundary count as inside.
pub fn polygon_contains(poly: &[Point2], p: Point2, tol: f64) -> bool {
    let n = poly.len();
    for i in 0..n {
        let e = Segment::new(poly[i], poly[(i + 1) % n]);
        let d = e.b.sub(e.a);
        let len = d.norm();
        if len > 0.0 {
            let t = (p.sub(e.a).dot(d) / (len * len)).clamp(0.0, 1.0);
            if e.a.add(d.scale(t)).dist(p) <= tol {
                return true;
            }
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.y > p.y) != (pj.y > p.y) && p.x < (pj.x - pi.x) * (p.y - pi.y) / (pj.y - pi.y) + pi.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}
