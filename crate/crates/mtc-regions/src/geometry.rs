//! Planar geometry primitives.
//!
//! Coordinates are meters in an arbitrary local projection; all math is
//! f64. The module provides exactly what the tessellation layer needs:
//! shoelace areas, polygon/rect intersection areas (Sutherland–Hodgman
//! clipping), point-in-polygon tests, collinear segment overlap (for
//! rook-style adjacency), centroids, and a half-plane Voronoi partition
//! used by the synthetic city generator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric tolerance in meters. Coordinates that differ by less than
/// this are treated as coincident; overlaps shorter than this are
/// treated as point contact.
pub const GEOM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product `self × o`.
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist2(self, o: Point) -> f64 {
        let d = self.sub(o);
        d.dot(d)
    }
}

/// Axis-aligned rectangle, `min` inclusive corner to `max` corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        if !(min_x < max_x && min_y < max_y) {
            return Err(Error::Geometry(format!(
                "degenerate rect [{min_x},{min_y}]..[{max_x},{max_y}]"
            )));
        }
        Ok(Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn area(&self) -> f64 {
        (self.max_x - self.min_x) * (self.max_y - self.min_y)
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    /// Counter-clockwise ring of the four corners (no closing duplicate).
    pub fn ring(&self) -> Vec<Point> {
        vec![
            Point::new(self.min_x, self.min_y),
            Point::new(self.max_x, self.min_y),
            Point::new(self.max_x, self.max_y),
            Point::new(self.min_x, self.max_y),
        ]
    }
}

/// Signed shoelace area of a ring (counter-clockwise is positive).
/// Rings are stored without a closing duplicate vertex.
pub fn ring_area_signed(ring: &[Point]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..ring.len() {
        let a = ring[i];
        let b = ring[(i + 1) % ring.len()];
        acc += a.cross(b);
    }
    0.5 * acc
}

/// Area-weighted centroid of a ring (undefined for zero-area rings).
fn ring_centroid_weighted(ring: &[Point]) -> (f64, Point) {
    let mut a = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..ring.len() {
        let p = ring[i];
        let q = ring[(i + 1) % ring.len()];
        let w = p.cross(q);
        a += w;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    a *= 0.5;
    if a.abs() < f64::EPSILON {
        (0.0, Point::new(0.0, 0.0))
    } else {
        (a, Point::new(cx / (6.0 * a), cy / (6.0 * a)))
    }
}

fn reverse_ring(ring: &mut [Point]) {
    ring.reverse();
}

/// Simple polygon with optional holes. Construction normalizes
/// orientation (outer counter-clockwise, holes clockwise) so that the
/// signed areas of all rings sum to the net enclosed area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub outer: Vec<Point>,
    pub holes: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn new(mut outer: Vec<Point>, mut holes: Vec<Vec<Point>>) -> Result<Self> {
        strip_closing_duplicate(&mut outer);
        if outer.len() < 3 {
            return Err(Error::Geometry(format!(
                "outer ring has {} distinct vertices, need at least 3",
                outer.len()
            )));
        }
        let a = ring_area_signed(&outer);
        if a.abs() < GEOM_EPS * GEOM_EPS {
            return Err(Error::Geometry("outer ring has zero area".into()));
        }
        if a < 0.0 {
            reverse_ring(&mut outer);
        }
        for hole in holes.iter_mut() {
            strip_closing_duplicate(hole);
            if hole.len() < 3 {
                return Err(Error::Geometry("hole ring has fewer than 3 vertices".into()));
            }
            if ring_area_signed(hole) > 0.0 {
                reverse_ring(hole);
            }
        }
        Ok(Polygon { outer, holes })
    }

    /// Net enclosed area (outer minus holes).
    pub fn area(&self) -> f64 {
        let mut a = ring_area_signed(&self.outer);
        for h in &self.holes {
            a += ring_area_signed(h); // holes are clockwise: negative
        }
        a
    }

    /// All rings, outer first.
    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.outer.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    pub fn bbox(&self) -> Rect {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for p in &self.outer {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }
}

fn strip_closing_duplicate(ring: &mut Vec<Point>) {
    while ring.len() >= 2 {
        let first = ring[0];
        let last = ring[ring.len() - 1];
        if (first.x - last.x).abs() < GEOM_EPS && (first.y - last.y).abs() < GEOM_EPS {
            ring.pop();
        } else {
            break;
        }
    }
}

/// Net area of a multipolygon.
pub fn multi_area(polys: &[Polygon]) -> f64 {
    polys.iter().map(|p| p.area()).sum()
}

/// Area-weighted centroid of a multipolygon (holes subtract).
pub fn multi_centroid(polys: &[Polygon]) -> Point {
    let mut wsum = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for poly in polys {
        for ring in poly.rings() {
            let (w, c) = ring_centroid_weighted(ring);
            wsum += w;
            cx += w * c.x;
            cy += w * c.y;
        }
    }
    if wsum.abs() < f64::EPSILON {
        // Degenerate; fall back to the mean of outer vertices.
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0, 0.0);
        for poly in polys {
            for p in &poly.outer {
                sx += p.x;
                sy += p.y;
                n += 1;
            }
        }
        return Point::new(sx / n.max(1) as f64, sy / n.max(1) as f64);
    }
    Point::new(cx / wsum, cy / wsum)
}

// ----- clipping ---------------------------------------------------------

/// Clip a ring against the half-plane `n·p <= c` (Sutherland–Hodgman
/// step). Works for non-convex subjects; the output may contain
/// degenerate edges along the clip line but its signed area equals the
/// area of the true intersection, which is all we rely on.
fn clip_ring_halfplane(ring: &[Point], n: Point, c: f64) -> Vec<Point> {
    let mut out = Vec::with_capacity(ring.len() + 4);
    if ring.is_empty() {
        return out;
    }
    let side = |p: Point| n.dot(p) - c; // <= 0 is inside
    for i in 0..ring.len() {
        let s = ring[i];
        let e = ring[(i + 1) % ring.len()];
        let fs = side(s);
        let fe = side(e);
        let s_in = fs <= 0.0;
        let e_in = fe <= 0.0;
        if s_in {
            out.push(s);
        }
        if s_in != e_in {
            let t = fs / (fs - fe);
            out.push(Point::new(s.x + t * (e.x - s.x), s.y + t * (e.y - s.y)));
        }
    }
    out
}

/// Clip a ring to an axis-aligned rect. Orientation is preserved.
pub fn clip_ring_to_rect(ring: &[Point], rect: &Rect) -> Vec<Point> {
    let mut cur = clip_ring_halfplane(ring, Point::new(-1.0, 0.0), -rect.min_x);
    cur = clip_ring_halfplane(&cur, Point::new(1.0, 0.0), rect.max_x);
    cur = clip_ring_halfplane(&cur, Point::new(0.0, -1.0), -rect.min_y);
    cur = clip_ring_halfplane(&cur, Point::new(0.0, 1.0), rect.max_y);
    cur
}

/// Area of the intersection between a polygon (with holes) and a rect.
///
/// Because rings are orientation-normalized (outer CCW, holes CW) and
/// clipping preserves orientation, summing signed clipped areas yields
/// the net intersection area directly.
pub fn intersection_area_polygon_rect(poly: &Polygon, rect: &Rect) -> f64 {
    let bb = poly.bbox();
    if bb.min_x >= rect.max_x
        || bb.max_x <= rect.min_x
        || bb.min_y >= rect.max_y
        || bb.max_y <= rect.min_y
    {
        return 0.0;
    }
    let mut area = 0.0;
    for ring in poly.rings() {
        let clipped = clip_ring_to_rect(ring, rect);
        area += ring_area_signed(&clipped);
    }
    area.max(0.0)
}

/// Intersection area between a multipolygon and a rect.
pub fn intersection_area_multi_rect(polys: &[Polygon], rect: &Rect) -> f64 {
    polys
        .iter()
        .map(|p| intersection_area_polygon_rect(p, rect))
        .sum()
}

// ----- point location ---------------------------------------------------

/// Even-odd crossing test. Points exactly on the boundary resolve
/// deterministically (half-open edge rule) but callers should not rely
/// on which side they land.
pub fn point_in_ring(p: Point, ring: &[Point]) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let t = (p.y - a.y) / (b.y - a.y);
            let x = a.x + t * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn point_in_polygon(p: Point, poly: &Polygon) -> bool {
    if !point_in_ring(p, &poly.outer) {
        return false;
    }
    for h in &poly.holes {
        if point_in_ring(p, h) {
            return false;
        }
    }
    true
}

pub fn point_in_multi(p: Point, polys: &[Polygon]) -> bool {
    polys.iter().any(|poly| point_in_polygon(p, poly))
}

// ----- segment overlap (adjacency support) ------------------------------

/// Length of the collinear overlap between segments `a` and `b`.
///
/// Returns 0 unless both endpoints of `b` lie within `tol` of the line
/// through `a` and the projected intervals overlap. Corner contact
/// (overlap of length <= tol) counts as 0.
pub fn segment_overlap_length(a1: Point, a2: Point, b1: Point, b2: Point, tol: f64) -> f64 {
    let d = a2.sub(a1);
    let len = d.norm();
    if len < tol {
        return 0.0;
    }
    let u = Point::new(d.x / len, d.y / len);
    let nrm = Point::new(-u.y, u.x);
    if nrm.dot(b1.sub(a1)).abs() > tol || nrm.dot(b2.sub(a1)).abs() > tol {
        return 0.0;
    }
    let t1 = u.dot(b1.sub(a1));
    let t2 = u.dot(b2.sub(a1));
    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
    let overlap = hi.min(len) - lo.max(0.0);
    if overlap > tol { overlap } else { 0.0 }
}

fn segments_of(polys: &[Polygon]) -> Vec<(Point, Point)> {
    let mut segs = Vec::new();
    for poly in polys {
        for ring in poly.rings() {
            for i in 0..ring.len() {
                segs.push((ring[i], ring[(i + 1) % ring.len()]));
            }
        }
    }
    segs
}

/// Total length of shared (collinear, overlapping) boundary between two
/// multipolygons. Used for rook-style adjacency: a positive shared
/// length means the regions touch along an edge, not just at a corner.
pub fn shared_boundary_length(a: &[Polygon], b: &[Polygon], tol: f64) -> f64 {
    let segs_a = segments_of(a);
    let segs_b = segments_of(b);
    let mut total = 0.0;
    for &(a1, a2) in &segs_a {
        let (alo_x, ahi_x) = (a1.x.min(a2.x) - tol, a1.x.max(a2.x) + tol);
        let (alo_y, ahi_y) = (a1.y.min(a2.y) - tol, a1.y.max(a2.y) + tol);
        for &(b1, b2) in &segs_b {
            // bbox prefilter
            if b1.x.max(b2.x) < alo_x
                || b1.x.min(b2.x) > ahi_x
                || b1.y.max(b2.y) < alo_y
                || b1.y.min(b2.y) > ahi_y
            {
                continue;
            }
            total += segment_overlap_length(a1, a2, b1, b2, tol);
        }
    }
    total
}

// ----- Voronoi ----------------------------------------------------------

/// Voronoi partition of `frame` induced by `seeds`, computed by clipping
/// the frame against the perpendicular-bisector half-plane of every
/// other seed. Returns one convex ring per seed, in seed order. Cells
/// jointly cover the frame and overlap only on boundaries.
pub fn voronoi_cells(seeds: &[Point], frame: &Rect) -> Result<Vec<Vec<Point>>> {
    if seeds.len() < 2 {
        return Err(Error::Geometry(format!(
            "voronoi needs at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    for (i, a) in seeds.iter().enumerate() {
        for b in seeds.iter().skip(i + 1) {
            if a.dist2(*b) < GEOM_EPS * GEOM_EPS {
                return Err(Error::Geometry(format!(
                    "voronoi seeds at ({}, {}) coincide",
                    a.x, a.y
                )));
            }
        }
    }
    let mut cells = Vec::with_capacity(seeds.len());
    for (i, &si) in seeds.iter().enumerate() {
        let mut cell = frame.ring();
        for (j, &sj) in seeds.iter().enumerate() {
            if i == j || cell.is_empty() {
                continue;
            }
            // keep points p with |p - si|^2 <= |p - sj|^2, i.e.
            // (sj - si)·p <= (|sj|^2 - |si|^2) / 2
            let n = sj.sub(si);
            let c = 0.5 * (sj.dot(sj) - si.dot(si));
            cell = clip_ring_halfplane(&cell, n, c);
        }
        if ring_area_signed(&cell).abs() < GEOM_EPS * GEOM_EPS {
            return Err(Error::Geometry(format!(
                "voronoi cell {i} degenerated to zero area"
            )));
        }
        cells.push(cell);
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn square(cx: f64, cy: f64, half: f64) -> Vec<Point> {
        vec![
            Point::new(cx - half, cy - half),
            Point::new(cx + half, cy - half),
            Point::new(cx + half, cy + half),
            Point::new(cx - half, cy + half),
        ]
    }

    #[test]
    fn shoelace_signs() {
        let ccw = square(0.0, 0.0, 1.0);
        assert!((ring_area_signed(&ccw) - 4.0).abs() < 1e-12);
        let mut cw = ccw.clone();
        cw.reverse();
        assert!((ring_area_signed(&cw) + 4.0).abs() < 1e-12);
    }

    #[test]
    fn polygon_with_hole_area() {
        let poly = Polygon::new(square(0.0, 0.0, 2.0), vec![square(0.0, 0.0, 1.0)]).unwrap();
        assert!(
            (poly.area() - (16.0 - 4.0)).abs() < 1e-9,
            "outer minus hole, got {}",
            poly.area()
        );
    }

    #[test]
    fn polygon_orientation_normalized_on_construction() {
        let mut cw_outer = square(0.0, 0.0, 1.0);
        cw_outer.reverse();
        let mut ccw_hole = square(0.0, 0.0, 0.5);
        let poly = Polygon::new(cw_outer, vec![std::mem::take(&mut ccw_hole)]).unwrap();
        assert!(ring_area_signed(&poly.outer) > 0.0);
        assert!(ring_area_signed(&poly.holes[0]) < 0.0);
    }

    #[test]
    fn clip_square_to_offset_rect() {
        // unit-area overlap between [0,2]^2 polygon and [1,3]^2 rect
        let poly = Polygon::new(
            vec![
                Point::new(0.0, 0.0),
                Point::new(2.0, 0.0),
                Point::new(2.0, 2.0),
                Point::new(0.0, 2.0),
            ],
            vec![],
        )
        .unwrap();
        let rect = Rect::new(1.0, 1.0, 3.0, 3.0).unwrap();
        let a = intersection_area_polygon_rect(&poly, &rect);
        assert!((a - 1.0).abs() < 1e-9, "expected 1.0, got {a}");
    }

    #[test]
    fn clip_disjoint_is_zero() {
        let poly = Polygon::new(square(0.0, 0.0, 1.0), vec![]).unwrap();
        let rect = Rect::new(5.0, 5.0, 6.0, 6.0).unwrap();
        assert_eq!(intersection_area_polygon_rect(&poly, &rect), 0.0);
    }

    #[test]
    fn clip_contained_rect_equals_rect_area() {
        let poly = Polygon::new(square(0.0, 0.0, 10.0), vec![]).unwrap();
        let rect = Rect::new(-1.0, -1.0, 1.0, 1.0).unwrap();
        let a = intersection_area_polygon_rect(&poly, &rect);
        assert!((a - rect.area()).abs() < 1e-9);
    }

    #[test]
    fn clip_respects_holes() {
        // rect sits entirely inside the hole -> zero intersection
        let poly = Polygon::new(square(0.0, 0.0, 4.0), vec![square(0.0, 0.0, 2.0)]).unwrap();
        let rect = Rect::new(-1.0, -1.0, 1.0, 1.0).unwrap();
        let a = intersection_area_polygon_rect(&poly, &rect);
        assert!(a.abs() < 1e-9, "hole interior must not count, got {a}");

        // rect straddles the hole boundary: half in ring material
        let rect2 = Rect::new(1.0, -1.0, 3.0, 1.0).unwrap();
        let a2 = intersection_area_polygon_rect(&poly, &rect2);
        assert!((a2 - 2.0).abs() < 1e-9, "expected 2.0, got {a2}");
    }

    /// Monte-Carlo oracle: estimate the intersection area by sampling
    /// points in the rect and testing polygon membership.
    fn mc_intersection_area(poly: &Polygon, rect: &Rect, n: usize, seed: u64) -> f64 {
        let mut rng = crate::rng::substream(seed, "geom/mc-oracle");
        let mut hits = 0usize;
        for _ in 0..n {
            let p = Point::new(
                rng.random_range(rect.min_x..rect.max_x),
                rng.random_range(rect.min_y..rect.max_y),
            );
            if point_in_polygon(p, poly) {
                hits += 1;
            }
        }
        rect.area() * hits as f64 / n as f64
    }

    #[test]
    fn clip_area_matches_monte_carlo_oracle() {
        // irregular non-convex polygon with a hole
        let outer = vec![
            Point::new(0.0, 0.0),
            Point::new(6.0, 0.0),
            Point::new(6.0, 2.0),
            Point::new(3.0, 2.0),
            Point::new(3.0, 4.0),
            Point::new(6.0, 4.0),
            Point::new(6.0, 6.0),
            Point::new(0.0, 6.0),
        ];
        let poly = Polygon::new(outer, vec![square(1.5, 1.5, 0.8)]).unwrap();
        let rects = [
            Rect::new(-1.0, -1.0, 2.0, 2.0).unwrap(),
            Rect::new(2.0, 1.0, 7.0, 5.0).unwrap(),
            Rect::new(0.5, 0.5, 5.5, 5.5).unwrap(),
        ];
        for (i, rect) in rects.iter().enumerate() {
            let exact = intersection_area_polygon_rect(&poly, rect);
            let approx = mc_intersection_area(&poly, rect, 200_000, 7 + i as u64);
            // MC standard error ~ area/sqrt(n); allow 4 sigma-ish slack
            let tol = 4.0 * rect.area() / (200_000f64).sqrt();
            assert!(
                (exact - approx).abs() < tol,
                "rect {i}: clip={exact} mc={approx} tol={tol}"
            );
        }
    }

    #[test]
    fn segment_overlap_cases() {
        let a1 = Point::new(0.0, 0.0);
        let a2 = Point::new(4.0, 0.0);
        // full overlap
        let l = segment_overlap_length(a1, a2, Point::new(1.0, 0.0), Point::new(3.0, 0.0), 1e-6);
        assert!((l - 2.0).abs() < 1e-9);
        // reversed direction still overlaps
        let l = segment_overlap_length(a1, a2, Point::new(3.0, 0.0), Point::new(1.0, 0.0), 1e-6);
        assert!((l - 2.0).abs() < 1e-9);
        // corner contact only
        let l = segment_overlap_length(a1, a2, Point::new(4.0, 0.0), Point::new(6.0, 0.0), 1e-6);
        assert_eq!(l, 0.0);
        // parallel but offset
        let l = segment_overlap_length(a1, a2, Point::new(1.0, 0.5), Point::new(3.0, 0.5), 1e-6);
        assert_eq!(l, 0.0);
        // crossing, not collinear
        let l = segment_overlap_length(a1, a2, Point::new(2.0, -1.0), Point::new(2.0, 1.0), 1e-6);
        assert_eq!(l, 0.0);
        // tiny perturbation within tolerance still counts
        let l = segment_overlap_length(
            a1,
            a2,
            Point::new(1.0, 1e-9),
            Point::new(3.0, -1e-9),
            1e-6,
        );
        assert!((l - 2.0).abs() < 1e-6);
    }

    #[test]
    fn shared_boundary_of_adjacent_squares() {
        let a = vec![Polygon::new(square(0.0, 0.0, 1.0), vec![]).unwrap()];
        let b = vec![Polygon::new(square(2.0, 0.0, 1.0), vec![]).unwrap()];
        let l = shared_boundary_length(&a, &b, 1e-6);
        assert!((l - 2.0).abs() < 1e-9, "shared edge length 2, got {l}");
        // diagonal neighbor: corner contact only
        let c = vec![Polygon::new(square(2.0, 2.0, 1.0), vec![]).unwrap()];
        assert_eq!(shared_boundary_length(&a, &c, 1e-6), 0.0);
    }

    #[test]
    fn voronoi_cells_cover_frame() {
        let frame = Rect::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let seeds = vec![
            Point::new(2.0, 2.0),
            Point::new(8.0, 3.0),
            Point::new(5.0, 8.0),
            Point::new(1.0, 9.0),
        ];
        let cells = voronoi_cells(&seeds, &frame).unwrap();
        assert_eq!(cells.len(), 4);
        let total: f64 = cells.iter().map(|c| ring_area_signed(c).abs()).sum();
        assert!(
            (total - frame.area()).abs() < 1e-6,
            "cells must tile the frame: {total} vs {}",
            frame.area()
        );
        // every point strictly inside a cell is nearest to its own seed
        let mut rng = crate::rng::substream(3, "geom/voronoi-check");
        for _ in 0..2000 {
            let p = Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
            let nearest = (0..seeds.len())
                .min_by(|&i, &j| {
                    seeds[i]
                        .dist2(p)
                        .partial_cmp(&seeds[j].dist2(p))
                        .unwrap()
                })
                .unwrap();
            for (i, cell) in cells.iter().enumerate() {
                if point_in_ring(p, cell) && i != nearest {
                    // allow boundary ambiguity only
                    let d_i = seeds[i].dist2(p).sqrt();
                    let d_n = seeds[nearest].dist2(p).sqrt();
                    assert!(
                        (d_i - d_n).abs() < 1e-6,
                        "point in cell {i} but nearest seed is {nearest}"
                    );
                }
            }
        }
    }

    #[test]
    fn centroid_of_square_is_center() {
        let polys = vec![Polygon::new(square(3.0, -2.0, 1.5), vec![]).unwrap()];
        let c = multi_centroid(&polys);
        assert!((c.x - 3.0).abs() < 1e-9 && (c.y + 2.0).abs() < 1e-9);
    }
}
