//! Polygonal workspace: points, obstacles, and the distance / collision
//! queries that bubble generation and trajectory validation run against.
//!
//! Obstacles are closed sets, so touching an obstacle boundary counts as a
//! collision. The rectangular workspace boundary behaves like an obstacle
//! for clearance purposes.

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has non-finite coordinates")]
    NonFinite,
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("polygon is self-intersecting (edges {0} and {1})")]
    SelfIntersecting(usize, usize),
    #[error("workspace bounds are empty or inverted")]
    InvalidBounds,
    #[error("point ({x}, {y}) lies outside the workspace bounds")]
    OutOfBounds { x: f64, y: f64 },
}

/// A point (or vector) in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[T; 2]", into = "[T; 2]")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Point2<T: Scalar> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> From<[T; 2]> for Point2<T> {
    fn from(v: [T; 2]) -> Self {
        Point2 { x: v[0], y: v[1] }
    }
}

impl<T: Scalar> From<Point2<T>> for [T; 2] {
    fn from(p: Point2<T>) -> Self {
        [p.x, p.y]
    }
}

impl<T: Scalar> Point2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Point2 { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Point2 { x: T::zero(), y: T::zero() }
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    /// Counter-clockwise rotation by 90 degrees.
    #[inline]
    pub fn perp(self) -> Self {
        Point2 { x: -self.y, y: self.x }
    }

    /// Unit vector in the same direction, `None` for (near) zero vectors.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::geom_eps() && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    #[inline]
    pub fn lerp(self, o: Self, t: T) -> Self {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Scalar> Add for Point2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Point2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> Mul<T> for Point2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Point2::new(self.x * s, self.y * s)
    }
}

impl<T: Scalar> Div<T> for Point2<T> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        Point2::new(self.x / s, self.y / s)
    }
}

impl<T: Scalar> Neg for Point2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Point2::new(-self.x, -self.y)
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T: Scalar> {
    pub min: Point2<T>,
    pub max: Point2<T>,
}

impl<T: Scalar> Aabb<T> {
    pub fn new(min: Point2<T>, max: Point2<T>) -> Result<Self, GeometryError> {
        if !(min.is_finite() && max.is_finite()) || !(min.x < max.x && min.y < max.y) {
            return Err(GeometryError::InvalidBounds);
        }
        Ok(Aabb { min, max })
    }

    fn around(points: &[Point2<T>]) -> Self {
        let mut min = points[0];
        let mut max = points[0];
        for p in &points[1..] {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Aabb { min, max }
    }

    /// Closed containment.
    #[inline]
    pub fn contains(&self, p: Point2<T>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Euclidean distance from `p` to the box (zero inside).
    #[inline]
    pub fn distance_outside(&self, p: Point2<T>) -> T {
        let dx = (self.min.x - p.x).max(T::zero()).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(T::zero()).max(p.y - self.max.y);
        dx.hypot(dy)
    }

    /// Distance from an interior point to the box boundary, and which side
    /// attains it (0: x-min, 1: x-max, 2: y-min, 3: y-max).
    pub fn distance_inside(&self, p: Point2<T>) -> (T, usize) {
        let candidates = [p.x - self.min.x, self.max.x - p.x, p.y - self.min.y, self.max.y - p.y];
        let mut best = (candidates[0], 0);
        for (i, &d) in candidates.iter().enumerate().skip(1) {
            if d < best.0 {
                best = (d, i);
            }
        }
        best
    }

    pub fn width(&self) -> T {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> T {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2<T> {
        (self.min + self.max) * T::lit(0.5)
    }
}

/// Which part of a polygon edge realizes a distance query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// The closest point is interior to the edge.
    Edge,
    /// The closest point is the given vertex.
    Vertex(usize),
}

/// Closest point on a segment `[a, b]` to `p` and its parameter in `[0, 1]`.
#[inline]
pub fn closest_point_on_segment<T: Scalar>(p: Point2<T>, a: Point2<T>, b: Point2<T>) -> (Point2<T>, T) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= T::zero() {
        return (a, T::zero());
    }
    let t = ((p - a).dot(ab) / len2).max(T::zero()).min(T::one());
    (a + ab * t, t)
}

#[inline]
pub fn point_segment_distance<T: Scalar>(p: Point2<T>, a: Point2<T>, b: Point2<T>) -> T {
    closest_point_on_segment(p, a, b).0.distance(p)
}

/// Closed segment intersection test with the geometric tolerance.
pub fn segments_intersect<T: Scalar>(a: Point2<T>, b: Point2<T>, c: Point2<T>, d: Point2<T>) -> bool {
    let eps = T::geom_eps();
    let o1 = (b - a).cross(c - a);
    let o2 = (b - a).cross(d - a);
    let o3 = (d - c).cross(a - c);
    let o4 = (d - c).cross(b - c);
    let proper = ((o1 > T::zero() && o2 < T::zero()) || (o1 < T::zero() && o2 > T::zero()))
        && ((o3 > T::zero() && o4 < T::zero()) || (o3 < T::zero() && o4 > T::zero()));
    if proper {
        return true;
    }
    point_segment_distance(a, c, d) <= eps
        || point_segment_distance(b, c, d) <= eps
        || point_segment_distance(c, a, b) <= eps
        || point_segment_distance(d, a, b) <= eps
}

/// Distance between segments `[a, b]` and `[c, d]`.
pub fn segment_distance<T: Scalar>(a: Point2<T>, b: Point2<T>, c: Point2<T>, d: Point2<T>) -> T {
    if segments_intersect(a, b, c, d) {
        return T::zero();
    }
    point_segment_distance(a, c, d).min(point_segment_distance(b, c, d)).min(point_segment_distance(c, a, b)).min(point_segment_distance(d, a, b))
}

/// Simple polygon with counter-clockwise vertex order.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon<T: Scalar> {
    vertices: Vec<Point2<T>>,
    bbox: Aabb<T>,
}

impl<T: Scalar> Polygon<T> {
    /// Validates the vertex list. Clockwise input is reversed.
    pub fn new(mut vertices: Vec<Point2<T>>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let area = signed_area(&vertices);
        if area.abs() <= T::geom_eps() {
            return Err(GeometryError::ZeroArea);
        }
        if area < T::zero() {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent edges share a vertex
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(GeometryError::SelfIntersecting(i, j));
                }
            }
        }
        let bbox = Aabb::around(&vertices);
        Ok(Polygon { vertices, bbox })
    }

    /// Axis-aligned rectangle from two opposite corners.
    pub fn rectangle(min: Point2<T>, max: Point2<T>) -> Result<Self, GeometryError> {
        Polygon::new(vec![min, Point2::new(max.x, min.y), max, Point2::new(min.x, max.y)])
    }

    pub fn vertices(&self) -> &[Point2<T>] {
        &self.vertices
    }

    pub fn bbox(&self) -> &Aabb<T> {
        &self.bbox
    }

    /// Edges as `(start, end)` pairs in vertex order.
    pub fn edges(&self) -> impl Iterator<Item = (Point2<T>, Point2<T>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> T {
        signed_area(&self.vertices)
    }

    pub fn centroid(&self) -> Point2<T> {
        let n = self.vertices.len();
        let mut cx = T::zero();
        let mut cy = T::zero();
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.cross(q);
            cx = cx + (p.x + q.x) * w;
            cy = cy + (p.y + q.y) * w;
        }
        let six_a = T::lit(6.0) * self.area();
        Point2::new(cx / six_a, cy / six_a)
    }

    /// Closest boundary point: `(distance, edge index, point, kind)`.
    /// Ties keep the lowest edge index.
    pub fn closest_boundary_point(&self, p: Point2<T>) -> (T, usize, Point2<T>, FeatureKind) {
        let n = self.vertices.len();
        let mut best = (T::infinity(), 0, p, FeatureKind::Edge);
        for (j, (a, b)) in self.edges().enumerate() {
            let (c, t) = closest_point_on_segment(p, a, b);
            let d = c.distance(p);
            if d < best.0 - T::geom_eps() || (best.0.is_infinite() && d.is_finite()) {
                let kind = if t <= T::zero() {
                    FeatureKind::Vertex(j)
                } else if t >= T::one() {
                    FeatureKind::Vertex((j + 1) % n)
                } else {
                    FeatureKind::Edge
                };
                best = (d, j, c, kind);
            }
        }
        best
    }

    pub fn boundary_distance(&self, p: Point2<T>) -> T {
        self.edges().map(|(a, b)| point_segment_distance(p, a, b)).fold(T::infinity(), T::min)
    }

    /// Closed containment: boundary points count as inside.
    pub fn contains(&self, p: Point2<T>) -> bool {
        if self.bbox.distance_outside(p) > T::geom_eps() {
            return false;
        }
        if self.boundary_distance(p) <= T::geom_eps() {
            return true;
        }
        // crossing number
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if x > p.x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Closed test: does segment `[a, b]` touch the polygon?
    pub fn intersects_segment(&self, a: Point2<T>, b: Point2<T>) -> bool {
        let seg_box = Aabb::around(&[a, b]);
        let eps = T::geom_eps();
        if seg_box.min.x > self.bbox.max.x + eps
            || seg_box.max.x < self.bbox.min.x - eps
            || seg_box.min.y > self.bbox.max.y + eps
            || seg_box.max.y < self.bbox.min.y - eps
        {
            return false;
        }
        if self.contains(a) || self.contains(b) {
            return true;
        }
        self.edges().any(|(c, d)| segments_intersect(a, b, c, d))
    }

    /// Mirror image about the x-axis (vertex order is re-oriented).
    pub fn mirrored_x(&self) -> Self {
        let v = self.vertices.iter().map(|p| Point2::new(p.x, -p.y)).collect();
        Polygon::new(v).expect("mirror of a valid polygon is valid")
    }
}

fn signed_area<T: Scalar>(v: &[Point2<T>]) -> T {
    let n = v.len();
    let mut s = T::zero();
    for i in 0..n {
        s = s + v[i].cross(v[(i + 1) % n]);
    }
    s * T::lit(0.5)
}

/// Ordered list of obstacles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObstacleSet<T: Scalar> {
    pub obstacles: Vec<Polygon<T>>,
}

impl<T: Scalar> ObstacleSet<T> {
    pub fn new(obstacles: Vec<Polygon<T>>) -> Self {
        ObstacleSet { obstacles }
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Polygon<T>> {
        self.obstacles.iter()
    }
}

/// Where the nearest obstacle feature lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Obstacle {
        index: usize,
        edge: usize,
    },
    /// Workspace boundary side (0: x-min, 1: x-max, 2: y-min, 3: y-max).
    Boundary {
        side: usize,
    },
}

/// Result of a nearest-feature query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestFeature<T: Scalar> {
    pub distance: T,
    /// Closest point on the feature.
    pub point: Point2<T>,
    pub source: FeatureSource,
    pub kind: FeatureKind,
    /// True when the query point lies inside the obstacle.
    pub inside: bool,
}

/// Bounded planar workspace with polygonal obstacles. Immutable after
/// construction; all queries take `&self`.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace<T: Scalar> {
    bounds: Aabb<T>,
    obstacles: ObstacleSet<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(bounds: Aabb<T>, obstacles: ObstacleSet<T>) -> Self {
        Workspace { bounds, obstacles }
    }

    pub fn empty(bounds: Aabb<T>) -> Self {
        Workspace { bounds, obstacles: ObstacleSet::default() }
    }

    pub fn bounds(&self) -> &Aabb<T> {
        &self.bounds
    }

    pub fn obstacles(&self) -> &ObstacleSet<T> {
        &self.obstacles
    }

    fn check_bounds(&self, p: Point2<T>) -> Result<(), GeometryError> {
        if p.is_finite() && self.bounds.contains(p) {
            Ok(())
        } else {
            Err(GeometryError::OutOfBounds { x: p.x.to_f64_lossy(), y: p.y.to_f64_lossy() })
        }
    }

    /// Clearance of `p`: the smaller of the distance to the nearest obstacle
    /// boundary and the distance to the workspace boundary. Zero inside an
    /// obstacle.
    pub fn distance_to_obstacles(&self, p: Point2<T>) -> Result<T, GeometryError> {
        self.check_bounds(p)?;
        let mut best = self.bounds.distance_inside(p).0;
        for poly in self.obstacles.iter() {
            if poly.bbox().distance_outside(p) >= best {
                continue;
            }
            if poly.contains(p) {
                return Ok(T::zero());
            }
            best = best.min(poly.boundary_distance(p));
        }
        Ok(best)
    }

    /// The feature realizing [`Workspace::distance_to_obstacles`]. Ties go to
    /// the lowest obstacle index, then the lowest edge index; the workspace
    /// boundary loses ties against obstacles.
    pub fn nearest_feature(&self, p: Point2<T>) -> Result<NearestFeature<T>, GeometryError> {
        self.check_bounds(p)?;
        let eps = T::geom_eps();
        let mut best: Option<NearestFeature<T>> = None;
        for (index, poly) in self.obstacles.iter().enumerate() {
            if let Some(b) = &best {
                if poly.bbox().distance_outside(p) > b.distance + eps {
                    continue;
                }
            }
            let (d, edge, point, kind) = poly.closest_boundary_point(p);
            let inside = poly.contains(p);
            let cand = NearestFeature { distance: if inside { T::zero() } else { d }, point, source: FeatureSource::Obstacle { index, edge }, kind, inside };
            match &best {
                Some(b) if !(cand.distance < b.distance - eps) => {}
                _ => best = Some(cand),
            }
        }
        let (bd, side) = self.bounds.distance_inside(p);
        let replace = match &best {
            Some(b) => bd < b.distance - eps,
            None => true,
        };
        if replace {
            let point = match side {
                0 => Point2::new(self.bounds.min.x, p.y),
                1 => Point2::new(self.bounds.max.x, p.y),
                2 => Point2::new(p.x, self.bounds.min.y),
                _ => Point2::new(p.x, self.bounds.max.y),
            };
            best = Some(NearestFeature { distance: bd, point, source: FeatureSource::Boundary { side }, kind: FeatureKind::Edge, inside: false });
        }
        Ok(best.expect("at least the boundary is a candidate"))
    }

    /// True iff `p` is inside or on any obstacle, or outside the bounds.
    pub fn point_in_collision(&self, p: Point2<T>) -> bool {
        if !(p.is_finite() && self.bounds.contains(p)) {
            return true;
        }
        self.obstacles.iter().any(|poly| poly.contains(p))
    }

    /// True iff the closed segment `[a, b]` touches an obstacle or leaves the
    /// bounds.
    pub fn segment_in_collision(&self, a: Point2<T>, b: Point2<T>) -> bool {
        if self.point_in_collision(a) || self.point_in_collision(b) {
            return true;
        }
        self.obstacles.iter().any(|poly| poly.intersects_segment(a, b))
    }

    /// Smallest distance from segment `[a, b]` to any obstacle or to the
    /// workspace boundary; zero when the segment touches an obstacle.
    pub fn segment_clearance(&self, a: Point2<T>, b: Point2<T>) -> T {
        if self.segment_in_collision(a, b) {
            return T::zero();
        }
        let bd = self.bounds.distance_inside(a).0.min(self.bounds.distance_inside(b).0);
        self.obstacles.iter().flat_map(|poly| poly.edges()).map(|(c, d)| segment_distance(a, b, c, d)).fold(bd, T::min)
    }

    /// Mirror image about the x-axis.
    pub fn mirrored_x(&self) -> Self {
        let bounds = Aabb { min: Point2::new(self.bounds.min.x, -self.bounds.max.y), max: Point2::new(self.bounds.max.x, -self.bounds.min.y) };
        let obstacles = ObstacleSet::new(self.obstacles.iter().map(Polygon::mirrored_x).collect());
        Workspace { bounds, obstacles }
    }

    /// Moves a colliding point to a nearby free point, `margin` clear of the
    /// offending boundary. Free points are returned unchanged.
    pub fn project_to_free(&self, p: Point2<T>, margin: T) -> Point2<T> {
        let mut q = p;
        for _ in 0..16 {
            if !self.point_in_collision(q) {
                return q;
            }
            // clamp into the bounds first
            let b = &self.bounds;
            q.x = q.x.max(b.min.x + margin).min(b.max.x - margin);
            q.y = q.y.max(b.min.y + margin).min(b.max.y - margin);
            if let Some(poly) = self.obstacles.iter().find(|poly| poly.contains(q)) {
                let (_, edge, c, _) = poly.closest_boundary_point(q);
                let dir = (c - q).normalized().unwrap_or_else(|| {
                    // on the boundary: step along the outward edge normal
                    let v = poly.vertices();
                    let e = v[(edge + 1) % v.len()] - v[edge];
                    Point2::new(e.y, -e.x).normalized().unwrap_or(Point2::new(T::one(), T::zero()))
                });
                q = c + dir * margin;
            }
        }
        q
    }
}
