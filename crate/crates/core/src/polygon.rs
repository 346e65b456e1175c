//! Convex polygon intersection by half-plane intersection.
//!
//! Both inputs are turned into the half-planes of their edges, sorted by
//! edge angle, and intersected with the usual deque sweep. A
//! [`ConvexPolygon`] keeps its sorted half-planes, so intersecting two of
//! them is a linear merge followed by the sweep.
//! Parallel edges of the two polygons (shared or coincident sides) are merged
//! by keeping the more restrictive one, which is what makes identical and
//! concentric inputs well-behaved.

use std::collections::VecDeque;

pub type Point = [f64; 2];

#[inline]
fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

/// Shoelace area, positive for counter-clockwise vertex order.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * acc
}

/// Directed edge line; the kept side is on the left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfPlane {
    p: Point,
    // unit direction
    d: Point,
    angle: f64,
}

impl HalfPlane {
    fn through(a: Point, b: Point) -> Option<Self> {
        let v = sub(b, a);
        let len = v[0].hypot(v[1]);
        if len == 0.0 || !len.is_finite() {
            return None;
        }
        let d = [v[0] / len, v[1] / len];
        Some(Self {
            p: a,
            d,
            angle: d[1].atan2(d[0]),
        })
    }

    #[inline]
    fn shifted(mut self, off: Point) -> Self {
        self.p = [self.p[0] + off[0], self.p[1] + off[1]];
        self
    }

    #[inline]
    fn outside(&self, pt: Point, eps: f64) -> bool {
        cross(self.d, sub(pt, self.p)) < -eps
    }

    fn intersect(&self, other: &HalfPlane) -> Point {
        let denom = cross(other.d, self.d);
        let t = cross(other.d, sub(other.p, self.p)) / denom;
        [self.p[0] + t * self.d[0], self.p[1] + t * self.d[1]]
    }
}

const PARALLEL_EPS: f64 = 1e-12;

/// A convex polygon stored as its edge half-planes sorted by angle, so that
/// repeated intersections skip the sort.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexPolygon {
    planes: Vec<HalfPlane>,
    /// Largest absolute coordinate, for the tolerance.
    extent: f64,
}

impl ConvexPolygon {
    /// From counter-clockwise vertices.
    pub fn new(vertices: &[Point]) -> Self {
        let n = vertices.len();
        let mut planes: Vec<HalfPlane> = if n < 3 {
            Vec::new()
        } else {
            (0..n)
                .filter_map(|i| HalfPlane::through(vertices[i], vertices[(i + 1) % n]))
                .collect()
        };
        planes.sort_by(|a, b| a.angle.total_cmp(&b.angle));
        let extent = vertices
            .iter()
            .flat_map(|v| [v[0].abs(), v[1].abs()])
            .fold(0.0_f64, f64::max);
        Self { planes, extent }
    }

    /// Vertices of `self ∩ (other + offset)`, counter-clockwise; empty when
    /// the overlap has no positive area.
    pub fn intersect_shifted(&self, other: &ConvexPolygon, offset: Point) -> Vec<Point> {
        if self.planes.len() < 3 || other.planes.len() < 3 {
            return Vec::new();
        }
        let shift = offset[0].abs().max(offset[1].abs());
        let scale = self.extent.max(other.extent + shift).max(f64::MIN_POSITIVE);
        let eps = 1e-12 * scale;
        let (a, b) = (&self.planes, &other.planes);
        let (mut i, mut j) = (0, 0);
        let merged = std::iter::from_fn(|| {
            let take_a = match (a.get(i), b.get(j)) {
                (Some(x), Some(y)) => x.angle <= y.angle,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => return None,
            };
            if take_a {
                i += 1;
                Some(a[i - 1])
            } else {
                j += 1;
                Some(b[j - 1].shifted(offset))
            }
        });
        sweep(merged, a.len() + b.len(), eps)
    }

    pub fn intersection_area_shifted(&self, other: &ConvexPolygon, offset: Point) -> f64 {
        signed_area(&self.intersect_shifted(other, offset)).max(0.0)
    }
}

/// Deque sweep over half-planes sorted by angle.
fn sweep(planes: impl Iterator<Item = HalfPlane>, cap: usize, eps: f64) -> Vec<Point> {
    let mut dq: VecDeque<HalfPlane> = VecDeque::with_capacity(cap);
    for h in planes {
        while dq.len() > 1 && h.outside(dq[dq.len() - 1].intersect(&dq[dq.len() - 2]), eps) {
            dq.pop_back();
        }
        while dq.len() > 1 && h.outside(dq[0].intersect(&dq[1]), eps) {
            dq.pop_front();
        }
        if let Some(back) = dq.back() {
            if cross(h.d, back.d).abs() < PARALLEL_EPS {
                if h.d[0] * back.d[0] + h.d[1] * back.d[1] < 0.0 {
                    // opposite parallel sides met: nothing left between them
                    return Vec::new();
                }
                if h.outside(back.p, eps) {
                    dq.pop_back();
                } else {
                    continue;
                }
            }
        }
        dq.push_back(h);
    }
    while dq.len() > 2 && dq[0].outside(dq[dq.len() - 1].intersect(&dq[dq.len() - 2]), eps) {
        dq.pop_back();
    }
    while dq.len() > 2 && dq[dq.len() - 1].outside(dq[0].intersect(&dq[1]), eps) {
        dq.pop_front();
    }
    if dq.len() < 3 {
        return Vec::new();
    }
    let n = dq.len();
    (0..n).map(|i| dq[i].intersect(&dq[(i + 1) % n])).collect()
}

/// Intersection of two convex polygons given in counter-clockwise order.
///
/// Returns the vertices of the intersection (counter-clockwise), or an empty
/// vector when the polygons do not overlap in a region of positive area.
pub fn convex_intersection(p: &[Point], q: &[Point]) -> Vec<Point> {
    ConvexPolygon::new(p).intersect_shifted(&ConvexPolygon::new(q), [0.0, 0.0])
}

/// Area of the intersection of two counter-clockwise convex polygons.
pub fn convex_intersection_area(p: &[Point], q: &[Point]) -> f64 {
    signed_area(&convex_intersection(p, q)).max(0.0)
}
