//! Minimum-time speed profile along a fixed waypoint path.
//!
//! The program is written in the squared speed `b = v²`, which makes the
//! kinematics linear (`b_{k+1} − b_k = 2 a_k Δs_k`) and the friction circle
//! a second-order cone. Traversal time enters through an epigraph
//! `c_k ≥ 2Δs_k / (w_k + w_{k+1})` with `w_k ≤ √b_k`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::scalar::Scalar;
use crate::solver::{self, ConeProgram, ConstraintTag, SocConstraint, SolveStatus, SolverError, SolverSettings};
use crate::stretch::VehicleParams;
use crate::Point;

/// Speeds below this are treated as rest when a direction is needed.
pub const V_EPS: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpeedError {
    #[error("need at least 3 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoints {0} and {1} coincide")]
    DegeneratePath(usize, usize),
    #[error("speed program is infeasible (binding: {binding:?})")]
    Infeasible { binding: Vec<ConstraintTag> },
    #[error("speed solve stopped without converging ({0:?})")]
    NotConverged(SolveStatus),
    #[error("segment {0} has zero speed at both ends")]
    DegenerateProfile(usize),
    #[error("invalid boundary speed")]
    InvalidBoundary,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Discrete differential geometry of a waypoint sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGeometry<T: Scalar> {
    pub waypoints: Vec<Point2<T>>,
    /// Segment lengths, `n − 1` entries.
    pub ds: Vec<T>,
    /// Cumulative arc length, `s[0] = 0`.
    pub s: Vec<T>,
    pub tangents: Vec<Point2<T>>,
    /// Signed Menger curvature, zero at both endpoints.
    pub curvature: Vec<T>,
}

/// Signed curvature of the circle through `a`, `b`, `c` (positive for a
/// left turn).
pub fn menger_curvature<T: Scalar>(a: Point2<T>, b: Point2<T>, c: Point2<T>) -> T {
    let den = a.distance(b) * b.distance(c) * a.distance(c);
    if den <= T::zero() {
        return T::zero();
    }
    T::lit(2.0) * (b - a).cross(c - b) / den
}

impl<T: Scalar> PathGeometry<T> {
    pub fn new(waypoints: &[Point2<T>]) -> Result<Self, SpeedError> {
        let n = waypoints.len();
        if n < 3 {
            return Err(SpeedError::TooFewWaypoints(n));
        }
        let mut ds = Vec::with_capacity(n - 1);
        let mut s = vec![T::zero()];
        for k in 0..n - 1 {
            let l = waypoints[k].distance(waypoints[k + 1]);
            if !(l > T::geom_eps()) {
                return Err(SpeedError::DegeneratePath(k, k + 1));
            }
            ds.push(l);
            s.push(s[k] + l);
        }
        let tangents = (0..n)
            .map(|k| {
                let (i, j) = (k.saturating_sub(1), (k + 1).min(n - 1));
                let dir = waypoints[j] - waypoints[i];
                // central difference can cancel on a hairpin; fall back to the outgoing chord
                dir.normalized()
                    .or_else(|| (waypoints[(k + 1).min(n - 1)] - waypoints[k]).normalized())
                    .unwrap_or_else(|| (waypoints[k] - waypoints[k - 1]) / ds[k - 1])
            })
            .collect();
        let mut curvature = vec![T::zero(); n];
        for k in 1..n - 1 {
            curvature[k] = menger_curvature(waypoints[k - 1], waypoints[k], waypoints[k + 1]);
        }
        Ok(PathGeometry { waypoints: waypoints.to_vec(), ds, s, tangents, curvature })
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn length(&self) -> T {
        *self.s.last().expect("non-empty path")
    }
}

/// Speeds imposed at the first and last waypoint (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedBoundary {
    pub v_start: f64,
    pub v_end: f64,
}

impl Default for SpeedBoundary {
    fn default() -> Self {
        SpeedBoundary { v_start: 0.0, v_end: 0.0 }
    }
}

/// Result of speed planning on one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    /// Squared speed per waypoint.
    pub b: Vec<f64>,
    /// Tangential acceleration per segment.
    pub a: Vec<f64>,
    /// Cumulative arc length per waypoint.
    pub s: Vec<f64>,
    pub velocity: Vec<Point>,
    pub u_long: Vec<f64>,
    pub u_lat: Vec<f64>,
    pub traversal_time: f64,
    /// Epigraph objective reported by the solver (equals `traversal_time`
    /// up to solver tolerance; `None` for prescribed profiles).
    pub solver_objective: Option<f64>,
    pub iterations: usize,
    /// Raw solver variables for warm starting.
    #[serde(skip)]
    pub raw: Vec<f64>,
}

impl SpeedProfile {
    pub fn speed(&self, k: usize) -> f64 {
        self.b[k].max(0.0).sqrt()
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// CSV with columns `k,s,speed,u_long,u_lat`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["k", "s", "speed", "u_long", "u_lat"])?;
        for k in 0..self.len() {
            wtr.serialize((k, self.s[k], self.speed(k), self.u_long[k], self.u_lat[k]))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `Σ 2Δs_k / (√b_k + √b_{k+1})`. Zero-length segments contribute nothing;
/// a zero-speed segment of positive length is an error.
pub fn time_from_squared_speeds(ds: &[f64], b: &[f64]) -> Result<f64, SpeedError> {
    let mut t = 0.0;
    for (k, &l) in ds.iter().enumerate() {
        if l <= 0.0 {
            continue;
        }
        let v = b[k].max(0.0).sqrt() + b[k + 1].max(0.0).sqrt();
        if v <= 0.0 {
            return Err(SpeedError::DegenerateProfile(k));
        }
        t += 2.0 * l / v;
    }
    Ok(t)
}

// Variable layout, interleaved per waypoint so the KKT matrix is banded:
// b_k = 4k, w_k = 4k+1, and for segments a_k = 4k+2, c_k = 4k+3.
#[inline]
fn ib(k: usize) -> usize {
    4 * k
}
#[inline]
fn iw(k: usize) -> usize {
    4 * k + 1
}
#[inline]
fn ia(k: usize) -> usize {
    4 * k + 2
}
#[inline]
fn ic(k: usize) -> usize {
    4 * k + 3
}

fn n_vars(n: usize) -> usize {
    4 * n - 2
}

/// Builds the time-optimal program. The friction circle is imposed at
/// every waypoint against each adjacent segment's acceleration, which also
/// bounds the reported (averaged) longitudinal force.
pub fn build_speed_program(geom: &PathGeometry<f64>, params: &VehicleParams, boundary: SpeedBoundary) -> Result<ConeProgram, SpeedError> {
    let n = geom.len();
    if !(boundary.v_start >= 0.0 && boundary.v_end >= 0.0 && boundary.v_start.is_finite() && boundary.v_end.is_finite()) {
        return Err(SpeedError::InvalidBoundary);
    }
    let kappa_max = geom.curvature.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    if kappa_max > 1.0 / params.r_min_m * (1.0 + 1e-6) {
        log::warn!("path curvature {:.4} 1/m exceeds the turning limit {:.4} 1/m", kappa_max, 1.0 / params.r_min_m);
    }
    let mu_g = params.mu * params.g;
    let a_max = params.u_long_max_n / params.mass_kg;
    let mut p = ConeProgram::new(n_vars(n));

    for k in 0..n - 1 {
        p.add_linear(ic(k), 1.0);
        p.add_equality(vec![(ib(k + 1), 1.0), (ib(k), -1.0), (ia(k), -2.0 * geom.ds[k])], 0.0, ConstraintTag::new("kinematics", k));
        p.add_cone(SocConstraint::linear(vec![(ia(k), -1.0)], a_max, ConstraintTag::new("traction", k)));
        // c·σ ≥ 2Δs with σ = w_k + w_{k+1}
        p.add_cone(SocConstraint {
            a_rows: vec![vec![], vec![(ic(k), 1.0), (iw(k), -1.0), (iw(k + 1), -1.0)]],
            b: vec![2.0 * (2.0 * geom.ds[k]).sqrt(), 0.0],
            c: vec![(ic(k), 1.0), (iw(k), 1.0), (iw(k + 1), 1.0)],
            d: 0.0,
            tag: ConstraintTag::new("time", k),
        });
    }
    // the endpoint square roots are known; fixing them avoids a cone
    // touching its apex, whose multiplier is unbounded at rest
    p.add_equality(vec![(ib(0), 1.0)], boundary.v_start * boundary.v_start, ConstraintTag::new("start_speed", 0));
    p.add_equality(vec![(iw(0), 1.0)], boundary.v_start, ConstraintTag::new("start_speed", 0));
    p.add_equality(vec![(ib(n - 1), 1.0)], boundary.v_end * boundary.v_end, ConstraintTag::new("end_speed", n - 1));
    p.add_equality(vec![(iw(n - 1), 1.0)], boundary.v_end, ConstraintTag::new("end_speed", n - 1));
    for k in 0..n {
        if k == 0 || k == n - 1 {
            continue;
        }
        // w² ≤ b
        p.add_cone(SocConstraint {
            a_rows: vec![vec![(iw(k), 2.0)], vec![(ib(k), 1.0)]],
            b: vec![0.0, -1.0],
            c: vec![(ib(k), 1.0)],
            d: 1.0,
            tag: ConstraintTag::new("sqrt_speed", k),
        });
    }
    for k in 0..n {
        let kappa = geom.curvature[k];
        let segs = [k.checked_sub(1), (k < n - 1).then_some(k)];
        for j in segs.into_iter().flatten() {
            let mut rows = vec![vec![(ia(j), 1.0)]];
            if kappa != 0.0 {
                rows.push(vec![(ib(k), kappa)]);
            }
            let offs = vec![0.0; rows.len()];
            p.add_cone(SocConstraint::norm_bound(rows, offs, mu_g, ConstraintTag::new("friction", k)));
        }
    }
    Ok(p)
}

/// Assembles a profile from squared speeds. Accelerations are recovered
/// from the kinematics so that they are exactly consistent with `b`.
pub fn profile_from_squared_speeds(geom: &PathGeometry<f64>, params: &VehicleParams, b: Vec<f64>) -> Result<SpeedProfile, SpeedError> {
    let n = geom.len();
    let a: Vec<f64> = (0..n - 1).map(|k| (b[k + 1] - b[k]) / (2.0 * geom.ds[k])).collect();
    let u_long = (0..n)
        .map(|k| {
            let acc = match (k.checked_sub(1), (k < n - 1).then_some(k)) {
                (Some(i), Some(j)) => 0.5 * (a[i] + a[j]),
                (Some(i), None) => a[i],
                (None, Some(j)) => a[j],
                (None, None) => 0.0,
            };
            params.mass_kg * acc
        })
        .collect();
    let u_lat = (0..n).map(|k| params.mass_kg * geom.curvature[k] * b[k]).collect();
    let velocity = (0..n).map(|k| geom.tangents[k] * b[k].max(0.0).sqrt()).collect();
    let traversal_time = time_from_squared_speeds(&geom.ds, &b)?;
    Ok(SpeedProfile { b, a, s: geom.s.clone(), velocity, u_long, u_lat, traversal_time, solver_objective: None, iterations: 0, raw: Vec::new() })
}

/// Scales `b` down (when both boundary speeds are zero) so that friction
/// and traction hold exactly rather than to solver tolerance.
fn restore_feasibility(geom: &PathGeometry<f64>, params: &VehicleParams, b: &mut [f64]) {
    let n = b.len();
    let mu_g = params.mu * params.g;
    let a_max = params.u_long_max_n / params.mass_kg;
    let acc = |b: &[f64], j: usize| (b[j + 1] - b[j]) / (2.0 * geom.ds[j]);
    let mut ratio = 1.0f64;
    for k in 0..n {
        let lat = geom.curvature[k] * b[k];
        for j in [k.checked_sub(1), (k < n - 1).then_some(k)].into_iter().flatten() {
            let a = acc(b, j);
            ratio = ratio.max(a.hypot(lat) / mu_g);
            ratio = ratio.max(a / a_max);
        }
    }
    if ratio > 1.0 {
        for v in b.iter_mut() {
            *v /= ratio;
        }
    }
}

/// Minimum-time profile along `waypoints`.
pub fn optimize_speed(
    waypoints: &[Point],
    params: &VehicleParams,
    boundary: SpeedBoundary,
    settings: &SolverSettings,
    warm_start: Option<&SpeedProfile>,
) -> Result<SpeedProfile, SpeedError> {
    let geom = PathGeometry::new(waypoints)?;
    let program = build_speed_program(&geom, params, boundary)?;
    let warm = warm_start.map(|w| w.raw.as_slice()).filter(|w| w.len() == program.n_vars());
    let sol = solver::solve(&program, settings, warm)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::InfeasibleDetected => return Err(SpeedError::Infeasible { binding: sol.binding }),
        other => return Err(SpeedError::NotConverged(other)),
    }
    let n = geom.len();
    let mut b: Vec<f64> = (0..n).map(|k| sol.x[ib(k)].max(0.0)).collect();
    b[0] = boundary.v_start * boundary.v_start;
    b[n - 1] = boundary.v_end * boundary.v_end;
    if boundary.v_start == 0.0 && boundary.v_end == 0.0 {
        restore_feasibility(&geom, params, &mut b);
    }
    let mut profile = profile_from_squared_speeds(&geom, params, b)?;
    profile.solver_objective = Some(sol.objective_value);
    profile.iterations = sol.iterations;
    profile.raw = sol.x;
    Ok(profile)
}

/// Profile with the same speed `v` at every waypoint.
pub fn constant_speed_profile(waypoints: &[Point], params: &VehicleParams, v: f64) -> Result<SpeedProfile, SpeedError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(SpeedError::InvalidBoundary);
    }
    let geom = PathGeometry::new(waypoints)?;
    profile_from_squared_speeds(&geom, params, vec![v * v; geom.len()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m: f64, mu: f64, ratio: f64, r_min: f64) -> VehicleParams {
        VehicleParams::new(m, mu, 9.81, ratio * mu * m * 9.81, r_min).unwrap()
    }

    fn line(n: usize, length: f64) -> Vec<Point> {
        (0..n).map(|k| Point::new(length * k as f64 / (n - 1) as f64, 0.0)).collect()
    }

    #[test]
    fn collinear_points_have_zero_curvature() {
        let g = PathGeometry::new(&line(5, 4.0)).unwrap();
        assert!(g.curvature.iter().all(|&k| k == 0.0));
        assert_eq!(g.length(), 4.0);
    }

    #[test]
    fn cocircular_points_have_inverse_radius_curvature() {
        let pts: Vec<Point> = (0..40)
            .map(|k| {
                let th = k as f64 * 0.1;
                Point::new(5.0 * th.cos(), 5.0 * th.sin())
            })
            .collect();
        let g = PathGeometry::new(&pts).unwrap();
        assert_eq!(g.curvature[0], 0.0);
        for k in 1..39 {
            assert!((g.curvature[k] - 0.2).abs() < 1e-10);
        }
        let cw: Vec<Point> = pts.iter().map(|p| Point::new(p.x, -p.y)).collect();
        assert!((PathGeometry::new(&cw).unwrap().curvature[5] + 0.2).abs() < 1e-10);
    }

    #[test]
    fn right_angle_corner() {
        let g = PathGeometry::new(&[Point::new(1.0, 0.0), Point::new(0.0, 0.0), Point::new(0.0, 1.0)]).unwrap();
        assert!((g.curvature[1].abs() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn repeated_points_rejected() {
        let pts = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 0.0)];
        assert_eq!(PathGeometry::new(&pts), Err(SpeedError::DegeneratePath(1, 2)));
    }

    #[test]
    fn geometry_in_single_precision() {
        let pts: Vec<Point2<f32>> = (0..20)
            .map(|k| {
                let th = k as f32 * 0.1;
                Point2::new(5.0 * th.cos(), 5.0 * th.sin())
            })
            .collect();
        let g = PathGeometry::new(&pts).unwrap();
        assert!((g.curvature[7] - 0.2).abs() < 1e-4);
    }

    #[test]
    fn time_formula() {
        assert!((time_from_squared_speeds(&[3.0, 7.0], &[4.0, 4.0, 4.0]).unwrap() - 5.0).abs() < 1e-15);
        assert!((time_from_squared_speeds(&[2.0], &[0.0, 9.0]).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(time_from_squared_speeds(&[1.0, 1.0, 1.0], &[1.0, 0.0, 0.0, 1.0]), Err(SpeedError::DegenerateProfile(1)));
    }

    #[test]
    fn straight_rest_to_rest_matches_bang_bang() {
        let p = params(833.0, 0.8, 0.5, 4.0);
        let prof = optimize_speed(&line(101, 100.0), &p, SpeedBoundary::default(), &SolverSettings::default(), None).unwrap();
        let (a1, a2) = (p.u_long_max_n / p.mass_kg, p.mu * p.g);
        let t_star = (2.0 * 100.0 * (a1 + a2) / (a1 * a2)).sqrt();
        assert!((prof.traversal_time - t_star).abs() / t_star < 1e-3, "{} vs {}", prof.traversal_time, t_star);
        let obj = prof.solver_objective.unwrap();
        assert!((obj - prof.traversal_time).abs() / prof.traversal_time < 1e-5);
    }

    #[test]
    fn circle_reaches_steady_state_speed() {
        let r = 20.0;
        let pts: Vec<Point> = (0..120)
            .map(|k| {
                let th = k as f64 * 0.05;
                Point::new(r * th.cos(), r * th.sin())
            })
            .collect();
        let p = params(1000.0, 0.8, 0.5, 4.0);
        let v_ss = (p.mu * p.g * r).sqrt();
        let prof = optimize_speed(&pts, &p, SpeedBoundary::default(), &SolverSettings::default(), None).unwrap();
        let kappa = PathGeometry::new(&pts).unwrap().curvature[60];
        let v_disc = (p.mu * p.g / kappa).sqrt();
        assert!((prof.speed(60) - v_disc).abs() / v_disc < 1e-4, "{} vs {}", prof.speed(60), v_disc);
        assert!((v_disc - v_ss).abs() / v_ss < 1e-3);
    }

    #[test]
    fn constant_profile_on_short_line() {
        let p = params(1000.0, 0.8, 0.5, 4.0);
        let prof = constant_speed_profile(&line(11, 10.0), &p, 2.0).unwrap();
        assert!((prof.traversal_time - 5.0).abs() < 1e-12);
        assert!(prof.u_long.iter().all(|&u| u == 0.0));
        let bnd = SpeedBoundary { v_start: 2.0, v_end: 2.0 };
        let opt = optimize_speed(&line(11, 10.0), &p, bnd, &SolverSettings::default(), None).unwrap();
        assert!(opt.traversal_time <= 5.0 + 1e-6);
    }

    #[test]
    fn infeasible_boundary_speed() {
        // cannot brake from 30 m/s to rest in 1 m
        let p = params(1000.0, 0.8, 0.5, 4.0);
        let bnd = SpeedBoundary { v_start: 30.0, v_end: 0.0 };
        let r = optimize_speed(&line(5, 1.0), &p, bnd, &SolverSettings::default(), None);
        assert!(matches!(r, Err(SpeedError::Infeasible { .. })), "{r:?}");
    }

    #[test]
    fn csv_columns() {
        let p = params(1000.0, 0.8, 0.5, 4.0);
        let prof = constant_speed_profile(&line(3, 2.0), &p, 1.0).unwrap();
        let mut buf = Vec::new();
        prof.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("k,s,speed,u_long,u_lat"));
        assert_eq!(text.lines().nth(2), Some("1,1.0,1.0,0.0,0.0"));
    }
}
