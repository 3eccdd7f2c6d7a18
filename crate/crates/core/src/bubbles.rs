//! Collision-free bubbles along a waypoint sequence.
//!
//! Each interior waypoint gets a disk of free space. Waypoints that sit close
//! to the previous bubble's center reuse that bubble; bubbles smaller than the
//! lower target radius are pushed away from the nearest obstacle feature.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Point2, Workspace};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BubbleError {
    #[error("bubble center ({x}, {y}) is in collision")]
    InfeasibleCenter { x: f64, y: f64 },
    #[error("waypoint {index} is in collision")]
    InfeasibleWaypoint { index: usize },
    #[error("invalid bubble bounds: need 0 < r_l <= r_u")]
    InvalidParams,
    #[error("need at least 3 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Bubble<T: Scalar> {
    pub center: Point2<T>,
    pub radius: T,
}

impl<T: Scalar> Bubble<T> {
    pub fn contains(&self, p: Point2<T>, tol: T) -> bool {
        p.distance(self.center) <= self.radius + tol
    }
}

/// Lower target radius `r_l` and hard cap `r_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleParams<T: Scalar> {
    pub r_l: T,
    pub r_u: T,
}

impl<T: Scalar> BubbleParams<T> {
    pub fn new(r_l: T, r_u: T) -> Result<Self, BubbleError> {
        if !(r_l > T::zero() && r_l <= r_u && r_u.is_finite()) {
            return Err(BubbleError::InvalidParams);
        }
        Ok(BubbleParams { r_l, r_u })
    }
}

/// How a bubble in a sequence was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BubbleOrigin {
    Generated,
    Reused,
    Translated,
}

/// One bubble per interior waypoint `1..=n-2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BubbleSequence<T: Scalar> {
    bubbles: Vec<Bubble<T>>,
    origins: Vec<BubbleOrigin>,
}

impl<T: Scalar> BubbleSequence<T> {
    /// Bubble of waypoint `k` (valid for `1 <= k <= n - 2`).
    pub fn get(&self, waypoint: usize) -> Option<&Bubble<T>> {
        waypoint.checked_sub(1).and_then(|i| self.bubbles.get(i))
    }

    pub fn origin(&self, waypoint: usize) -> Option<BubbleOrigin> {
        waypoint.checked_sub(1).and_then(|i| self.origins.get(i).copied())
    }

    /// `(waypoint index, bubble)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Bubble<T>)> {
        self.bubbles.iter().enumerate().map(|(i, b)| (i + 1, b))
    }

    pub fn len(&self) -> usize {
        self.bubbles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bubbles.is_empty()
    }

    pub fn bubbles(&self) -> &[Bubble<T>] {
        &self.bubbles
    }

    /// CSV with columns `index,center_x,center_y,radius`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["index", "center_x", "center_y", "radius"])?;
        for (k, b) in self.iter() {
            wtr.serialize((k, b.center.x.to_f64_lossy(), b.center.y.to_f64_lossy(), b.radius.to_f64_lossy()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn infeasible<T: Scalar>(p: Point2<T>) -> BubbleError {
    BubbleError::InfeasibleCenter { x: p.x.to_f64_lossy(), y: p.y.to_f64_lossy() }
}

/// Largest collision-free bubble centered at `p`, capped at `r_u`.
pub fn generate_bubble<T: Scalar>(p: Point2<T>, w: &Workspace<T>, params: &BubbleParams<T>) -> Result<Bubble<T>, BubbleError> {
    if w.point_in_collision(p) {
        return Err(infeasible(p));
    }
    let d = w.distance_to_obstacles(p)?;
    if d <= T::zero() {
        return Err(infeasible(p));
    }
    Ok(Bubble { center: p, radius: d.min(params.r_u) })
}

/// Clearance along the ray, or `None` once the ray leaves free space.
fn ray_clearance<T: Scalar>(w: &Workspace<T>, p: Point2<T>, cap: T) -> Option<T> {
    if w.point_in_collision(p) {
        return None;
    }
    match w.distance_to_obstacles(p) {
        Ok(d) if d > T::zero() => Some(d.min(cap)),
        _ => None,
    }
}

/// Moves a too-small bubble away from its nearest obstacle feature.
///
/// The center travels along the outward normal of the nearest edge (or away
/// from the nearest vertex) and stops at the first point where the clearance
/// reaches `r_l`. When no point of the ray (up to distance `r_u`, and only
/// while the ray stays in free space) reaches `r_l`, the best-clearance
/// center on the ray is returned.
pub fn translate_bubble<T: Scalar>(a: Point2<T>, r: T, w: &Workspace<T>, params: &BubbleParams<T>) -> Result<Bubble<T>, BubbleError> {
    let cap = params.r_u;
    let f0 = ray_clearance(w, a, cap).ok_or_else(|| infeasible(a))?;
    if f0 >= params.r_l {
        return Ok(Bubble { center: a, radius: f0 });
    }
    let feature = w.nearest_feature(a)?;
    let dir = match (a - feature.point).normalized() {
        Some(d) => d,
        None => return Ok(Bubble { center: a, radius: r.min(f0) }),
    };
    let at = |t: T| a + dir * t;
    let step_min = T::lit(1e-3) * params.r_l;

    let (mut best_t, mut best_f) = (T::zero(), f0);
    let (mut t, mut f) = (T::zero(), f0);
    while t < cap {
        // 1-Lipschitz clearance: nothing better than `best_f` within `best_f - f`
        let step = step_min.max(best_f - f);
        let t_next = (t + step).min(cap);
        if step > f && w.segment_in_collision(at(t), at(t_next)) {
            break;
        }
        let f_next = match ray_clearance(w, at(t_next), cap) {
            Some(v) => v,
            None => break,
        };
        if f_next >= params.r_l {
            let (mut lo, mut hi) = (t, t_next);
            let mut f_hi = f_next;
            for _ in 0..200 {
                if hi - lo <= T::geom_eps() * (T::one() + hi) {
                    break;
                }
                let mid = (lo + hi) * T::lit(0.5);
                match ray_clearance(w, at(mid), cap) {
                    Some(fm) if fm >= params.r_l => {
                        hi = mid;
                        f_hi = fm;
                    }
                    _ => lo = mid,
                }
            }
            return Ok(Bubble { center: at(hi), radius: f_hi });
        }
        if f_next > best_f {
            best_t = t_next;
            best_f = f_next;
        }
        t = t_next;
        f = f_next;
    }

    // golden-section refinement around the best sample
    let phi = T::lit(0.618_033_988_749_894_9);
    let mut lo = (best_t - step_min).max(T::zero());
    let mut hi = (best_t + step_min).min(t.max(best_t));
    let eval = |s: T| ray_clearance(w, at(s), cap).unwrap_or(T::zero());
    for _ in 0..80 {
        if hi - lo <= T::geom_eps() {
            break;
        }
        let x1 = hi - (hi - lo) * phi;
        let x2 = lo + (hi - lo) * phi;
        if eval(x1) >= eval(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
        let mid = (lo + hi) * T::lit(0.5);
        let fm = eval(mid);
        if fm > best_f {
            best_f = fm;
            best_t = mid;
        }
    }
    Ok(Bubble { center: at(best_t), radius: best_f })
}

/// Bubble generation over a whole waypoint sequence.
pub fn generate_bubbles<T: Scalar>(path: &[Point2<T>], w: &Workspace<T>, params: &BubbleParams<T>) -> Result<BubbleSequence<T>, BubbleError> {
    let n = path.len();
    if n < 3 {
        return Err(BubbleError::TooFewWaypoints(n));
    }
    let mut bubbles: Vec<Bubble<T>> = Vec::with_capacity(n - 2);
    let mut origins = Vec::with_capacity(n - 2);
    for (i, &p) in path.iter().enumerate().take(n - 1).skip(1) {
        if let Some(prev) = bubbles.last() {
            if p.distance(prev.center) < T::lit(0.5) * prev.radius {
                let prev = *prev;
                bubbles.push(prev);
                origins.push(BubbleOrigin::Reused);
                continue;
            }
        }
        let mut b = generate_bubble(p, w, params).map_err(|e| match e {
            BubbleError::InfeasibleCenter { .. } => BubbleError::InfeasibleWaypoint { index: i },
            other => other,
        })?;
        let mut origin = BubbleOrigin::Generated;
        if b.radius < params.r_l {
            b = translate_bubble(b.center, b.radius, w, params)?;
            origin = BubbleOrigin::Translated;
        }
        bubbles.push(b);
        origins.push(origin);
    }
    Ok(BubbleSequence { bubbles, origins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, ObstacleSet, Polygon};

    type P = Point2<f64>;

    fn bounds() -> Aabb<f64> {
        Aabb::new(P::new(-50.0, -50.0), P::new(50.0, 50.0)).unwrap()
    }

    fn params(r_l: f64, r_u: f64) -> BubbleParams<f64> {
        BubbleParams::new(r_l, r_u).unwrap()
    }

    /// Disk freeness by dense ring sampling, used to bisect the free radius.
    fn disk_free(w: &Workspace<f64>, c: P, r: f64) -> bool {
        if w.point_in_collision(c) {
            return false;
        }
        (1..=60).all(|ring| {
            let rr = r * ring as f64 / 60.0;
            (0..720).all(|i| {
                let th = i as f64 / 720.0 * std::f64::consts::TAU;
                !w.point_in_collision(c + P::new(th.cos(), th.sin()) * rr)
            })
        })
    }

    #[test]
    fn capped_in_open_space() {
        let w = Workspace::empty(bounds());
        let b = generate_bubble(P::new(1.0, 2.0), &w, &params(1.0, 10.0)).unwrap();
        assert_eq!(b, Bubble { center: P::new(1.0, 2.0), radius: 10.0 });
    }

    #[test]
    fn radius_equals_clearance_and_matches_bisection() {
        let rect = Polygon::rectangle(P::new(2.0, -1.0), P::new(3.0, 1.0)).unwrap();
        let w = Workspace::new(bounds(), ObstacleSet::new(vec![rect]));
        let b = generate_bubble(P::new(0.0, 0.0), &w, &params(1.0, 10.0)).unwrap();
        assert_eq!(b.radius, 2.0);
        let (mut lo, mut hi) = (0.0, 10.0);
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if disk_free(&w, b.center, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((b.radius - lo).abs() < 1e-5);
    }

    #[test]
    fn center_in_obstacle_is_error() {
        let rect = Polygon::rectangle(P::new(2.0, -1.0), P::new(3.0, 1.0)).unwrap();
        let w = Workspace::new(bounds(), ObstacleSet::new(vec![rect]));
        assert!(matches!(generate_bubble(P::new(2.5, 0.0), &w, &params(1.0, 10.0)), Err(BubbleError::InfeasibleCenter { .. })));
    }

    #[test]
    fn translate_away_from_half_plane() {
        let wall = Polygon::rectangle(P::new(1.0, -50.0), P::new(50.0, 50.0)).unwrap();
        let w = Workspace::new(bounds(), ObstacleSet::new(vec![wall]));
        let b = translate_bubble(P::new(0.6, 0.0), 0.4, &w, &params(1.0, 10.0)).unwrap();
        assert!(b.center.distance(P::new(0.0, 0.0)) < 1e-9, "{:?}", b);
        assert!((b.radius - 1.0).abs() < 1e-9);
        assert!(w.distance_to_obstacles(b.center).unwrap() >= b.radius - 1e-12);
    }

    #[test]
    fn translate_in_narrow_corridor_keeps_best_on_ray() {
        let lower = Polygon::rectangle(P::new(-40.0, -40.0), P::new(40.0, -0.6)).unwrap();
        let upper = Polygon::rectangle(P::new(-40.0, 0.6), P::new(40.0, 40.0)).unwrap();
        let w = Workspace::new(bounds(), ObstacleSet::new(vec![lower, upper]));
        let a = P::new(0.0, 0.0);
        let b = translate_bubble(a, 0.6, &w, &params(1.0, 10.0)).unwrap();
        assert!((b.radius - 0.6).abs() < 1e-9, "{:?}", b);
        // oracle: dense sampling along the normal ray
        let dir = (a - w.nearest_feature(a).unwrap().point).normalized().unwrap();
        let best = (0..=20_000)
            .map(|i| a + dir * (i as f64 * 1e-4))
            .filter(|p| !w.point_in_collision(*p))
            .map(|p| w.distance_to_obstacles(p).unwrap())
            .fold(0.0, f64::max);
        assert!((b.radius - best).abs() < 1e-4);
    }

    #[test]
    fn sequence_in_open_space_reuses_dense_runs() {
        let w = Workspace::empty(bounds());
        let path: Vec<P> = (0..30).map(|i| P::new(i as f64 * 0.5 - 7.0, 0.0)).collect();
        let seq = generate_bubbles(&path, &w, &params(1.0, 10.0)).unwrap();
        assert_eq!(seq.len(), 28);
        for (k, b) in seq.iter() {
            assert_eq!(b.radius, 10.0);
            match seq.origin(k).unwrap() {
                BubbleOrigin::Generated => assert_eq!(b.center, path[k]),
                BubbleOrigin::Reused => assert!(path[k].distance(b.center) < 5.0),
                BubbleOrigin::Translated => panic!("no translation in open space"),
            }
        }
        assert_eq!(seq.origin(2), Some(BubbleOrigin::Reused));
    }

    #[test]
    fn close_successor_copies_bubble() {
        let w = Workspace::empty(Aabb::new(P::new(-1.0, -1.0), P::new(10.0, 1.0)).unwrap());
        let path = vec![P::new(-0.5, 0.0), P::new(0.0, 0.0), P::new(0.3, 0.0), P::new(2.0, 0.0), P::new(3.0, 0.0)];
        let seq = generate_bubbles(&path, &w, &params(0.5, 10.0)).unwrap();
        assert_eq!(seq.get(1).unwrap().radius, 1.0);
        assert_eq!(seq.get(2), seq.get(1));
        assert_eq!(seq.origin(2), Some(BubbleOrigin::Reused));
    }

    #[test]
    fn waypoint_near_wall_is_translated() {
        let wall = Polygon::rectangle(P::new(-50.0, 0.4), P::new(50.0, 50.0)).unwrap();
        let w = Workspace::new(bounds(), ObstacleSet::new(vec![wall]));
        let path = vec![P::new(-5.0, -3.0), P::new(0.0, 0.0), P::new(5.0, -3.0)];
        let seq = generate_bubbles(&path, &w, &params(1.0, 10.0)).unwrap();
        let b = seq.get(1).unwrap();
        assert_eq!(seq.origin(1), Some(BubbleOrigin::Translated));
        assert!((b.radius - 1.0).abs() < 1e-9);
        assert!((0.4 - b.center.y - 1.0).abs() < 1e-9);
    }

    #[test]
    fn colliding_waypoint_reports_index() {
        let rect = Polygon::rectangle(P::new(2.0, -1.0), P::new(3.0, 1.0)).unwrap();
        let w = Workspace::new(bounds(), ObstacleSet::new(vec![rect]));
        let path = vec![P::new(0.0, 0.0), P::new(1.0, 0.0), P::new(2.5, 0.0), P::new(4.0, 0.0)];
        assert_eq!(generate_bubbles(&path, &w, &params(1.0, 10.0)).unwrap_err(), BubbleError::InfeasibleWaypoint { index: 2 });
    }

    #[test]
    fn csv_has_header_and_rows() {
        let w = Workspace::empty(bounds());
        let path = vec![P::new(0.0, 0.0), P::new(30.0, 0.0), P::new(40.0, 0.0)];
        let seq = generate_bubbles(&path, &w, &params(1.0, 10.0)).unwrap();
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "index,center_x,center_y,radius\n1,30.0,0.0,10.0\n");
    }
}
