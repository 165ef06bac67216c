//! Planar geometry helpers: points, segments, disk sampling, and a uniform
//! grid for fast segment-crossing and radius queries.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A point in the deployment plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Samples a point uniformly over a disk. The square root on the radial
/// draw keeps the density uniform in area rather than in radius.
pub fn sample_in_disk<R: Rng>(rng: &mut R, center: Point, radius: f64) -> Point {
    let r = radius * rng.gen::<f64>().sqrt();
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    Point::new(center.x + r * theta.cos(), center.y + r * theta.sin())
}

/// Proper segment intersection test (shared endpoints count as crossing).
pub fn segments_cross(a1: Point, a2: Point, b1: Point, b2: Point) -> bool {
    fn orient(p: Point, q: Point, r: Point) -> f64 {
        (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x)
    }
    let d1 = orient(b1, b2, a1);
    let d2 = orient(b1, b2, a2);
    let d3 = orient(a1, a2, b1);
    let d4 = orient(a1, a2, b2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    // Collinear overlap is treated as a single crossing.
    fn on_segment(p: Point, q: Point, r: Point) -> bool {
        q.x <= p.x.max(r.x) && q.x >= p.x.min(r.x) && q.y <= p.y.max(r.y) && q.y >= p.y.min(r.y)
    }
    (d1 == 0.0 && on_segment(b1, a1, b2))
        || (d2 == 0.0 && on_segment(b1, a2, b2))
        || (d3 == 0.0 && on_segment(a1, b1, a2))
        || (d4 == 0.0 && on_segment(a1, b2, a2))
}

/// Uniform spatial hash over indexed items, used for radius queries on
/// access points and corridor queries on wall segments.
#[derive(Debug, Clone)]
pub struct UniformGrid {
    cell: f64,
    // (cx, cy) -> item indices; kept sorted for deterministic iteration.
    buckets: std::collections::BTreeMap<(i64, i64), Vec<usize>>,
}

impl UniformGrid {
    pub fn new(cell: f64) -> Self {
        UniformGrid {
            cell,
            buckets: std::collections::BTreeMap::new(),
        }
    }

    fn key(&self, p: Point) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    pub fn insert_point(&mut self, idx: usize, p: Point) {
        self.buckets.entry(self.key(p)).or_default().push(idx);
    }

    /// Registers a segment in every cell its bounding box overlaps.
    pub fn insert_segment(&mut self, idx: usize, a: Point, b: Point) {
        let (ka, kb) = (self.key(a), self.key(b));
        for cx in ka.0.min(kb.0)..=ka.0.max(kb.0) {
            for cy in ka.1.min(kb.1)..=ka.1.max(kb.1) {
                let bucket = self.buckets.entry((cx, cy)).or_default();
                if bucket.last() != Some(&idx) {
                    bucket.push(idx);
                }
            }
        }
    }

    /// Candidate item indices within `radius` of `p` (superset; caller
    /// must re-check exact distances). Deduplicated and sorted.
    pub fn query_radius(&self, p: Point, radius: f64) -> Vec<usize> {
        let lo = self.key(Point::new(p.x - radius, p.y - radius));
        let hi = self.key(Point::new(p.x + radius, p.y + radius));
        let mut out = Vec::new();
        for cx in lo.0..=hi.0 {
            for cy in lo.1..=hi.1 {
                if let Some(bucket) = self.buckets.get(&(cx, cy)) {
                    out.extend_from_slice(bucket);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Candidate item indices in cells along the corridor of segment `a`-`b`.
    pub fn query_segment(&self, a: Point, b: Point) -> Vec<usize> {
        let (ka, kb) = (self.key(a), self.key(b));
        let mut out = Vec::new();
        for cx in ka.0.min(kb.0) - 1..=ka.0.max(kb.0) + 1 {
            for cy in ka.1.min(kb.1) - 1..=ka.1.max(kb.1) + 1 {
                if let Some(bucket) = self.buckets.get(&(cx, cy)) {
                    out.extend_from_slice(bucket);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}
