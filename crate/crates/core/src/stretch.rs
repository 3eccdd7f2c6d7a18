//! Elastic stretching: move interior waypoints inside their bubbles to
//! minimize the total squared balance force `N_k = 2Q_k − Q_{k−1} − Q_{k+1}`
//! while keeping `‖N_k‖` under the friction and turning-radius bounds.
//!
//! Waypoints are 0-based here. `Q_0`, `Q_1`, `Q_{n−2}` and `Q_{n−1}` are
//! fixed by the endpoint and heading conditions; the free points
//! `Q_2..=Q_{n−3}` are parametrized as offsets from their bubble centers.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::{self, ConeProgram, ConstraintTag, SocConstraint, SolveStatus, SolverError, SolverSettings, SparseRow};
use crate::speed::V_EPS;
use crate::BubbleSequence;
use crate::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StretchError {
    #[error("vehicle parameters must be finite and strictly positive")]
    InvalidVehicle,
    #[error("longitudinal force {u_long} N exceeds the friction limit {limit} N")]
    Domain { u_long: f64, limit: f64 },
    #[error("need at least 4 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoints {0} and {1} coincide")]
    DegeneratePath(usize, usize),
    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("no bubble for waypoint {0}")]
    MissingBubble(usize),
    #[error("fixed waypoint violates {0:?}")]
    FixedPointViolation(ConstraintTag),
    #[error("stretch program is infeasible (binding: {binding:?})")]
    Infeasible { binding: Vec<ConstraintTag> },
    #[error("stretch solve stopped without converging ({0:?})")]
    NotConverged(SolveStatus),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Point-mass vehicle: mass, tire friction, traction cap and turning radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass_kg: f64,
    pub mu: f64,
    #[serde(default = "default_g")]
    pub g: f64,
    pub u_long_max_n: f64,
    pub r_min_m: f64,
}

fn default_g() -> f64 {
    9.81
}

impl VehicleParams {
    pub fn new(mass_kg: f64, mu: f64, g: f64, u_long_max_n: f64, r_min_m: f64) -> Result<Self, StretchError> {
        let v = VehicleParams { mass_kg, mu, g, u_long_max_n, r_min_m };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), StretchError> {
        let all = [self.mass_kg, self.mu, self.g, self.u_long_max_n, self.r_min_m];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(StretchError::InvalidVehicle);
        }
        if self.u_long_max_n > self.friction_force() {
            log::warn!("traction cap {} N exceeds the friction limit {} N", self.u_long_max_n, self.friction_force());
        }
        Ok(())
    }

    /// `μ m g`.
    pub fn friction_force(&self) -> f64 {
        self.mu * self.mass_kg * self.g
    }
}

/// Lateral acceleration left over by the longitudinal force:
/// `√((μg)² − (u_long/m)²)`.
pub fn alpha(u_long: f64, params: &VehicleParams) -> Result<f64, StretchError> {
    let mu_g = params.mu * params.g;
    let a = u_long / params.mass_kg;
    if a.abs() > mu_g * (1.0 + 1e-9) {
        return Err(StretchError::Domain { u_long, limit: params.friction_force() });
    }
    Ok((mu_g * mu_g - a * a).max(0.0).sqrt())
}

/// Bound on `‖N_k‖`: `min(d²/R_min, α (d/‖v‖)²)`, the friction term dropped
/// below [`V_EPS`].
pub fn balance_bound(d: f64, speed: f64, u_long: f64, params: &VehicleParams) -> Result<f64, StretchError> {
    let turn = d * d / params.r_min_m;
    if speed < V_EPS {
        return Ok(turn);
    }
    let fric = alpha(u_long, params)? * (d / speed).powi(2);
    Ok(turn.min(fric))
}

/// Waypoints with derived lengths and tangents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct ReferencePath {
    waypoints: Vec<Point>,
}

impl TryFrom<Vec<Point>> for ReferencePath {
    type Error = StretchError;
    fn try_from(v: Vec<Point>) -> Result<Self, StretchError> {
        ReferencePath::new(v)
    }
}

impl From<ReferencePath> for Vec<Point> {
    fn from(p: ReferencePath) -> Self {
        p.waypoints
    }
}

impl ReferencePath {
    pub fn new(waypoints: Vec<Point>) -> Result<Self, StretchError> {
        if waypoints.len() < 4 {
            return Err(StretchError::TooFewWaypoints(waypoints.len()));
        }
        for k in 0..waypoints.len() - 1 {
            if !(waypoints[k].distance(waypoints[k + 1]) > 1e-12) {
                return Err(StretchError::DegeneratePath(k, k + 1));
            }
        }
        Ok(ReferencePath { waypoints })
    }

    pub fn waypoints(&self) -> &[Point] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn segment_lengths(&self) -> Vec<f64> {
        self.waypoints.windows(2).map(|w| w[0].distance(w[1])).collect()
    }

    pub fn length(&self) -> f64 {
        self.segment_lengths().iter().sum()
    }

    /// Mean segment length.
    pub fn band_length(&self) -> f64 {
        self.length() / (self.len() - 1) as f64
    }

    /// Central-difference unit tangent (one-sided at the ends).
    pub fn tangent(&self, k: usize) -> Point {
        let n = self.len();
        let (i, j) = (k.saturating_sub(1), (k + 1).min(n - 1));
        (self.waypoints[j] - self.waypoints[i])
            .normalized()
            .or_else(|| (self.waypoints[(k + 1).min(n - 1)] - self.waypoints[k]).normalized())
            .unwrap_or_else(|| (self.waypoints[k] - self.waypoints[k - 1]).normalized().expect("distinct waypoints"))
    }
}

/// Balance force at interior waypoint `k`.
pub fn balance_force(q: &[Point], k: usize) -> Point {
    q[k] * 2.0 - q[k - 1] - q[k + 1]
}

/// `Σ ‖N_k‖²` over interior waypoints.
pub fn balance_objective(q: &[Point]) -> f64 {
    (1..q.len() - 1).map(|k| balance_force(q, k).norm_squared()).sum()
}

/// Everything one stretch needs. `velocities` and `u_long` are per
/// waypoint.
#[derive(Debug, Clone)]
pub struct StretchInput<'a> {
    pub path: &'a ReferencePath,
    pub bubbles: &'a BubbleSequence,
    pub velocities: &'a [Point],
    pub u_long: &'a [f64],
    pub params: VehicleParams,
    pub band_length: f64,
}

impl StretchInput<'_> {
    fn check(&self) -> Result<(), StretchError> {
        let n = self.path.len();
        if self.velocities.len() != n {
            return Err(StretchError::LengthMismatch { what: "velocities", got: self.velocities.len(), expected: n });
        }
        if self.u_long.len() != n {
            return Err(StretchError::LengthMismatch { what: "u_long", got: self.u_long.len(), expected: n });
        }
        if self.bubbles.len() != n - 2 {
            return Err(StretchError::LengthMismatch { what: "bubbles", got: self.bubbles.len(), expected: n - 2 });
        }
        if !(self.band_length > 0.0 && self.band_length.is_finite()) {
            return Err(StretchError::LengthMismatch { what: "band length", got: 0, expected: 1 });
        }
        self.params.validate()
    }

    /// Heading direction at waypoint `k`: the velocity direction, or the
    /// path tangent near rest.
    fn heading(&self, k: usize) -> Point {
        let v = self.velocities[k];
        if v.norm() >= V_EPS {
            v.normalized().unwrap_or_else(|| self.path.tangent(k))
        } else {
            self.path.tangent(k)
        }
    }

    /// The four fixed waypoints `(Q_0, Q_1, Q_{n−2}, Q_{n−1})`.
    pub fn anchors(&self) -> [Point; 4] {
        let p = self.path.waypoints();
        let n = p.len();
        let d = self.band_length;
        [p[0], p[0] + self.heading(0) * d, p[n - 1] - self.heading(n - 2) * d, p[n - 1]]
    }

    /// Balance bounds for waypoints `1..=n−2` (index 0 and `n−1` unused).
    pub fn bounds(&self) -> Result<Vec<f64>, StretchError> {
        let n = self.path.len();
        let mut out = vec![f64::INFINITY; n];
        for (k, slot) in out.iter_mut().enumerate().take(n - 1).skip(1) {
            *slot = balance_bound(self.band_length, self.velocities[k].norm(), self.u_long[k], &self.params)?;
        }
        Ok(out)
    }
}

/// Compiled stretch program and how to read waypoints back from it.
#[derive(Debug, Clone)]
pub struct StretchProgram {
    pub program: ConeProgram,
    /// Bubble center per waypoint for the free ones, `None` for anchors.
    centers: Vec<Option<Point>>,
    anchors: [Point; 4],
    pub bounds: Vec<f64>,
}

impl StretchProgram {
    /// Waypoints for a solver vector.
    pub fn waypoints(&self, x: &[f64]) -> Vec<Point> {
        let n = self.centers.len();
        (0..n)
            .map(|k| match k {
                0 => self.anchors[0],
                1 => self.anchors[1],
                _ if k == n - 2 => self.anchors[2],
                _ if k == n - 1 => self.anchors[3],
                _ => {
                    let c = self.centers[k].expect("free waypoint has a center");
                    Point::new(c.x + x[var(k)], c.y + x[var(k) + 1])
                }
            })
            .collect()
    }

    /// Solver vector placing free waypoints at `q` (for warm starts).
    pub fn variables_for(&self, q: &[Point]) -> Vec<f64> {
        let mut x = vec![0.0; self.program.n_vars()];
        for (k, c) in self.centers.iter().enumerate() {
            if let Some(c) = c {
                x[var(k)] = q[k].x - c.x;
                x[var(k) + 1] = q[k].y - c.y;
            }
        }
        x
    }
}

#[inline]
fn var(k: usize) -> usize {
    2 * (k - 2)
}

/// Affine expression `Q_k = M x + o` per coordinate.
fn point_expr(k: usize, centers: &[Option<Point>], anchors: &[Point; 4]) -> ([SparseRow; 2], Point) {
    let n = centers.len();
    match centers[k] {
        Some(c) => ([vec![(var(k), 1.0)], vec![(var(k) + 1, 1.0)]], c),
        None => {
            let a = match k {
                0 => anchors[0],
                1 => anchors[1],
                _ if k == n - 2 => anchors[2],
                _ => anchors[3],
            };
            ([vec![], vec![]], a)
        }
    }
}

fn combine(terms: &[(f64, &[SparseRow; 2], Point)]) -> (Vec<SparseRow>, Vec<f64>) {
    let mut rows = vec![Vec::new(), Vec::new()];
    let mut off = [0.0; 2];
    for &(w, r, o) in terms {
        for c in 0..2 {
            rows[c].extend(r[c].iter().map(|&(j, v)| (j, w * v)));
        }
        off[0] += w * o.x;
        off[1] += w * o.y;
    }
    (rows, off.to_vec())
}

pub fn build_stretch_program(input: &StretchInput) -> Result<StretchProgram, StretchError> {
    input.check()?;
    let n = input.path.len();
    let anchors = input.anchors();
    let bounds = input.bounds()?;
    let centers: Vec<Option<Point>> = (0..n)
        .map(|k| if (2..n - 2).contains(&k) { input.bubbles.get(k).map(|b| Some(b.center)).ok_or(StretchError::MissingBubble(k)) } else { Ok(None) })
        .collect::<Result<_, _>>()?;

    // the heading anchor next to the goal must sit in its own bubble
    let tag = ConstraintTag::new("ball", n - 2);
    let last = input.bubbles.get(n - 2).ok_or(StretchError::MissingBubble(n - 2))?;
    if !last.contains(anchors[2], 1e-9) {
        return Err(StretchError::FixedPointViolation(tag));
    }

    let n_free = n.saturating_sub(4);
    let mut program = ConeProgram::new(2 * n_free);
    for k in 1..n - 1 {
        let (r0, o0) = point_expr(k - 1, &centers, &anchors);
        let (r1, o1) = point_expr(k, &centers, &anchors);
        let (r2, o2) = point_expr(k + 1, &centers, &anchors);
        let (rows, offs) = combine(&[(2.0, &r1, o1), (-1.0, &r0, o0), (-1.0, &r2, o2)]);
        let tag = ConstraintTag::new("balance", k);
        if rows.iter().all(|r| r.is_empty()) {
            if offs[0].hypot(offs[1]) > bounds[k] * (1.0 + 1e-9) + 1e-12 {
                return Err(StretchError::FixedPointViolation(tag));
            }
            continue;
        }
        program.add_squared_norm(&rows, &offs, 1.0);
        program.add_cone(SocConstraint::norm_bound(rows, offs, bounds[k], tag));
    }
    for k in 2..n - 2 {
        let r = input.bubbles.get(k).expect("checked above").radius;
        let rows = vec![vec![(var(k), 1.0)], vec![(var(k) + 1, 1.0)]];
        program.add_cone(SocConstraint::norm_bound(rows, vec![0.0, 0.0], r, ConstraintTag::new("ball", k)));
    }
    Ok(StretchProgram { program, centers, anchors, bounds })
}

/// Output of one stretch.
#[derive(Debug, Clone, PartialEq)]
pub struct StretchOutput {
    pub waypoints: Vec<Point>,
    pub objective: f64,
    /// Bounds on `‖N_k‖` the solution was computed against.
    pub bounds: Vec<f64>,
    /// `bound − ‖N_k‖` per interior waypoint (index 0 and `n−1` unused).
    pub balance_slack: Vec<f64>,
    /// `r_k − ‖Q_k − A_k‖` per interior waypoint.
    pub ball_slack: Vec<f64>,
    pub iterations: usize,
    /// Factor applied to the balance bounds (1 unless relaxed).
    pub relaxation: f64,
}

impl StretchOutput {
    /// CSV with columns `k,x,y,balance_norm,balance_bound`; endpoints carry
    /// empty force columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        write_trajectory_csv(&self.waypoints, &self.bounds, out)
    }
}

pub fn write_trajectory_csv<W: Write>(q: &[Point], bounds: &[f64], out: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["k", "x", "y", "balance_norm", "balance_bound"])?;
    let n = q.len();
    for k in 0..n {
        let (norm, bound) = if k == 0 || k == n - 1 {
            (String::new(), String::new())
        } else {
            let b = bounds.get(k).copied().unwrap_or(f64::INFINITY);
            (balance_force(q, k).norm().to_string(), if b.is_finite() { b.to_string() } else { String::new() })
        };
        wtr.write_record([k.to_string(), q[k].x.to_string(), q[k].y.to_string(), norm, bound])?;
    }
    wtr.flush()?;
    Ok(())
}

fn solve_program(input: &StretchInput, scale: f64, settings: &SolverSettings) -> Result<StretchOutput, StretchError> {
    let mut sp = build_stretch_program(input)?;
    if scale != 1.0 {
        for b in sp.bounds.iter_mut() {
            *b *= scale;
        }
        sp.program.map_cones(|c| {
            if c.tag.kind == "balance" {
                c.d *= scale;
            }
        });
    }
    let warm = sp.variables_for(input.path.waypoints());
    let sol = solver::solve(&sp.program, settings, Some(&warm))?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::InfeasibleDetected => return Err(StretchError::Infeasible { binding: sol.binding }),
        other => return Err(StretchError::NotConverged(other)),
    }
    let q = sp.waypoints(&sol.x);
    let n = q.len();
    let mut balance_slack = vec![0.0; n];
    let mut ball_slack = vec![0.0; n];
    for k in 1..n - 1 {
        balance_slack[k] = sp.bounds[k] - balance_force(&q, k).norm();
        let b = input.bubbles.get(k).expect("bubble per interior waypoint");
        ball_slack[k] = b.radius - q[k].distance(b.center);
    }
    Ok(StretchOutput {
        objective: balance_objective(&q),
        waypoints: q,
        bounds: sp.bounds,
        balance_slack,
        ball_slack,
        iterations: sol.iterations,
        relaxation: scale,
    })
}

/// Factor applied to the balance bounds on the single retry.
pub const RELAXATION: f64 = 1.5;

/// Solves the stretch program. On infeasibility the balance bounds are
/// relaxed once by [`RELAXATION`]; the returned output records the factor
/// used. A second failure is returned as the error of the first attempt.
pub fn stretch(input: &StretchInput, settings: &SolverSettings) -> Result<StretchOutput, StretchError> {
    match solve_program(input, 1.0, settings) {
        Ok(out) => Ok(out),
        Err(e @ (StretchError::Infeasible { .. } | StretchError::FixedPointViolation(_) | StretchError::NotConverged(_))) => {
            log::warn!("stretch failed ({e}); retrying with balance bounds x{RELAXATION}");
            solve_program(input, RELAXATION, settings).map_err(|_| e)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubbles::generate_bubbles;
    use crate::geometry::Aabb;
    use crate::Workspace;
    use crate::{BubbleParams, BubbleSequence};

    fn vehicle(r_min: f64) -> VehicleParams {
        VehicleParams::new(833.0, 0.8, 9.81, 0.5 * 0.8 * 833.0 * 9.81, r_min).unwrap()
    }

    fn open(half: f64) -> Workspace {
        Workspace::empty(Aabb::new(Point::new(-half, -half), Point::new(half, half)).unwrap())
    }

    #[test]
    fn alpha_values() {
        let v = vehicle(5.0);
        assert!((alpha(0.0, &v).unwrap() - 7.848).abs() < 1e-12);
        assert!(alpha(v.friction_force(), &v).unwrap().abs() < 1e-6);
        let half = alpha(0.5 * v.friction_force(), &v).unwrap();
        assert!((half - 7.848 * 0.75f64.sqrt()).abs() < 1e-12);
        assert!(matches!(alpha(2.0 * v.friction_force(), &v), Err(StretchError::Domain { .. })));
    }

    #[test]
    fn balance_bound_branches() {
        let v = vehicle(5.0);
        assert!((balance_bound(1.0, 3.0, 0.0, &v).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(balance_bound(1.0, 0.0, 0.0, &v).unwrap(), 0.2);
        let fast = balance_bound(1.0, 100.0, 0.0, &v).unwrap();
        assert!((fast - 7.848e-4).abs() < 1e-15);
    }

    #[test]
    fn reference_path_validation() {
        assert!(matches!(ReferencePath::new(vec![Point::zero(); 3]), Err(StretchError::TooFewWaypoints(3))));
        let pts = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
        assert!(matches!(ReferencePath::new(pts), Err(StretchError::DegeneratePath(1, 2))));
        let p = ReferencePath::new((0..5).map(|k| Point::new(k as f64, 0.0)).collect()).unwrap();
        assert_eq!(p.band_length(), 1.0);
        assert_eq!(p.tangent(0), Point::new(1.0, 0.0));
    }

    fn straight_setup(n: usize) -> (ReferencePath, BubbleSequence) {
        let w = open(50.0);
        let pts: Vec<Point> = (0..n).map(|k| Point::new(k as f64 - 5.0, 0.3 * ((k * 7) % 3) as f64 - 0.3)).collect();
        // jitter interior points but keep the ends on the x-axis
        let mut pts = pts;
        pts[0].y = 0.0;
        pts[n - 1].y = 0.0;
        let path = ReferencePath::new(pts).unwrap();
        let bubbles = generate_bubbles(path.waypoints(), &w, &BubbleParams::new(1.0, 10.0).unwrap()).unwrap();
        (path, bubbles)
    }

    #[test]
    fn straight_line_has_zero_objective() {
        let n = 11;
        let (path, bubbles) = straight_setup(n);
        let vel = vec![Point::new(1.0, 0.0); n];
        let ul = vec![0.0; n];
        let input = StretchInput { path: &path, bubbles: &bubbles, velocities: &vel, u_long: &ul, params: vehicle(1e-3), band_length: 1.0 };
        // anchors are along the chord, so a straight evenly spaced line is optimal
        let out = stretch(&input, &SolverSettings::default()).unwrap();
        assert!(out.objective < 1e-10, "{}", out.objective);
        for (k, q) in out.waypoints.iter().enumerate() {
            assert!(q.y.abs() < 1e-5, "{k} {q:?}");
        }
    }

    #[test]
    fn fixed_anchor_outside_bubble_is_reported() {
        let n = 8;
        let (path, bubbles) = straight_setup(n);
        let vel = vec![Point::zero(); n];
        let ul = vec![0.0; n];
        let input = StretchInput { path: &path, bubbles: &bubbles, velocities: &vel, u_long: &ul, params: vehicle(5.0), band_length: 30.0 };
        let err = build_stretch_program(&input).unwrap_err();
        assert_eq!(err, StretchError::FixedPointViolation(ConstraintTag::new("ball", n - 2)));
    }

    #[test]
    fn csv_layout() {
        let q = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 1.0)];
        let mut buf = Vec::new();
        write_trajectory_csv(&q, &[f64::INFINITY, 0.5, f64::INFINITY], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,x,y,balance_norm,balance_bound");
        assert_eq!(lines[1], "0,0,0,,");
        assert_eq!(lines[2], "1,1,0,1,0.5");
    }
}
