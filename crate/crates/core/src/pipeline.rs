//! The outer smoothing loop: bubbles, stretch and speed planning in turn,
//! keeping the fastest trajectory seen so far.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bubbles::generate_bubbles;
use crate::solver::SolverSettings;
use crate::speed::{self, constant_speed_profile, optimize_speed, SpeedBoundary, SpeedError, SpeedProfile, V_EPS};
use crate::stretch::{self, balance_objective, StretchError, StretchInput};
use crate::{BubbleParams, BubbleSequence, Point, ReferencePath, VehicleParams, Workspace};

/// Clearance added when a colliding reference waypoint is moved to free
/// space.
pub const PROJECTION_MARGIN: f64 = 1e-3;
/// Cross products of unit headings below this give a straight segment.
pub const PARALLEL_EPS: f64 = 1e-9;
/// Arcs with a larger radius are emitted as lines.
pub const MAX_ARC_RADIUS: f64 = 1e6;
/// Collision samples per reconstructed segment.
pub const ARC_SAMPLES: usize = 50;

#[derive(Debug, Error)]
pub enum CesError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reference path: {0}")]
    Reference(#[from] StretchError),
    #[error("no feasible trajectory: {0}")]
    NoTrajectory(String),
}

fn default_max_iterations() -> usize {
    10
}

fn default_time_tolerance() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

/// Pipeline defaults tighten the solver so audits at `1e-6` have margin.
pub fn default_solver_settings() -> SolverSettings {
    SolverSettings { feas_tol: 1e-9, opt_tol: 1e-9, ..Default::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CesConfig {
    pub bubbles: BubbleParams,
    pub vehicle: VehicleParams,
    #[serde(default = "default_solver_settings")]
    pub solver: SolverSettings,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Wall-clock budget in seconds (`None`: unlimited).
    #[serde(default)]
    pub timeout_s: Option<f64>,
    /// Minimum relative improvement for an iteration to be accepted.
    #[serde(default = "default_time_tolerance")]
    pub time_tolerance: f64,
    /// Fixed speed (m/s) for every waypoint; disables speed planning.
    #[serde(default)]
    pub constant_speed: Option<f64>,
    #[serde(default)]
    pub boundary: SpeedBoundary,
    /// Plan speeds on the reference before the first stretch. When off,
    /// the first stretch sees the path at rest.
    #[serde(default = "default_true")]
    pub speed_first: bool,
}

impl CesConfig {
    pub fn new(bubbles: BubbleParams, vehicle: VehicleParams) -> Self {
        CesConfig {
            bubbles,
            vehicle,
            solver: default_solver_settings(),
            max_iterations: default_max_iterations(),
            timeout_s: None,
            time_tolerance: default_time_tolerance(),
            constant_speed: None,
            boundary: SpeedBoundary::default(),
            speed_first: true,
        }
    }

    pub fn validate(&self) -> Result<(), CesError> {
        BubbleParams::new(self.bubbles.r_l, self.bubbles.r_u).map_err(|e| CesError::Config(e.to_string()))?;
        self.vehicle.validate().map_err(|e| CesError::Config(e.to_string()))?;
        if self.max_iterations == 0 {
            return Err(CesError::Config("max_iterations must be at least 1".into()));
        }
        if !(self.time_tolerance > 0.0 && self.time_tolerance.is_finite()) {
            return Err(CesError::Config("time tolerance must be positive".into()));
        }
        if let Some(t) = self.timeout_s {
            if !(t > 0.0) {
                return Err(CesError::Config("timeout must be positive".into()));
            }
        }
        if let Some(v) = self.constant_speed {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CesError::Config("constant speed must be positive".into()));
            }
        }
        if !(self.solver.feas_tol > 0.0 && self.solver.opt_tol > 0.0) {
            return Err(CesError::Config("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Wall-clock seconds per phase of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub bubbles: f64,
    pub stretch: f64,
    pub speed: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.bubbles + self.stretch + self.speed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Band length used by this iteration's stretch.
    pub band_length: f64,
    /// Stretch objective `Σ‖N_k‖²` at the solution.
    pub objective: Option<f64>,
    pub traversal_time: Option<f64>,
    pub path_length: Option<f64>,
    /// Factor applied to the balance bounds (1 unless relaxed).
    pub relaxation: Option<f64>,
    pub accepted: bool,
    pub times: PhaseTimes,
    pub error: Option<String>,
}

/// Data the accepted stretch was solved against, kept for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct StretchRecord {
    pub bubbles: BubbleSequence,
    pub velocities: Vec<Point>,
    pub u_long: Vec<f64>,
    pub band_length: f64,
    pub bounds: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Line,
    Arc,
}

/// Piece of the continuous trajectory between two waypoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSegment {
    pub kind: SegmentKind,
    pub start: Point,
    pub end: Point,
    pub center: Option<Point>,
    /// Mean of the center's distances to both endpoints.
    pub radius: Option<f64>,
    pub heading_in: Point,
    pub heading_out: Point,
}

impl ArcSegment {
    /// Point at parameter `t ∈ [0, 1]`. Arcs interpolate angle and radius
    /// about the center, so both endpoints are met exactly.
    pub fn point_at(&self, t: f64) -> Point {
        match (self.kind, self.center) {
            (SegmentKind::Arc, Some(c)) => {
                let (u, v) = (self.start - c, self.end - c);
                let a0 = u.y.atan2(u.x);
                let sweep = u.cross(v).atan2(u.dot(v));
                let r = u.norm() + t * (v.norm() - u.norm());
                let a = a0 + t * sweep;
                Point::new(c.x + r * a.cos(), c.y + r * a.sin())
            }
            _ => self.start.lerp(self.end, t),
        }
    }

    pub fn length(&self) -> f64 {
        match (self.kind, self.center) {
            (SegmentKind::Arc, Some(c)) => {
                let (u, v) = (self.start - c, self.end - c);
                u.cross(v).atan2(u.dot(v)).abs() * self.radius.unwrap_or(0.0)
            }
            _ => self.start.distance(self.end),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CesResult {
    pub waypoints: Vec<Point>,
    pub profile: SpeedProfile,
    pub reference_profile: Option<SpeedProfile>,
    /// The stretch behind `waypoints`; `None` when the reference was kept.
    pub stretch: Option<StretchRecord>,
    pub history: Vec<IterationRecord>,
    pub initial_time: Option<f64>,
    pub final_time: f64,
    pub initial_length: f64,
    pub final_length: f64,
    pub arcs: Vec<ArcSegment>,
    pub warnings: Vec<String>,
}

impl CesResult {
    /// `(t_initial − t_final) / t_initial`, as a fraction.
    pub fn time_reduction(&self) -> Option<f64> {
        self.initial_time.map(|t0| (t0 - self.final_time) / t0)
    }

    pub fn length_reduction(&self) -> f64 {
        (self.initial_length - self.final_length) / self.initial_length
    }

    pub fn accepted_iterations(&self) -> usize {
        self.history.iter().filter(|h| h.accepted).count()
    }
}

/// `Σ 2‖Q_{k+1} − Q_k‖ / (√b_k + √b_{k+1})` on chord lengths.
pub fn traversal_time(q: &[Point], profile: &SpeedProfile) -> Result<f64, SpeedError> {
    if q.len() != profile.len() {
        return Err(SpeedError::TooFewWaypoints(q.len().min(profile.len())));
    }
    let ds: Vec<f64> = q.windows(2).map(|w| w[0].distance(w[1])).collect();
    speed::time_from_squared_speeds(&ds, &profile.b)
}

fn path_length(q: &[Point]) -> f64 {
    q.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Heading at waypoint `k`: the velocity direction, or the chord tangent
/// when nearly at rest.
fn heading(q: &[Point], v: &[Point], k: usize) -> Point {
    let n = q.len();
    if let Some(h) = v[k].normalized().filter(|_| v[k].norm() >= V_EPS) {
        return h;
    }
    let (i, j) = (k.saturating_sub(1), (k + 1).min(n - 1));
    (q[j] - q[i]).normalized().unwrap_or(Point::new(1.0, 0.0))
}

/// Circular arcs between consecutive waypoints, centered where the normals
/// to the two velocities meet. Collision problems are returned as warnings.
pub fn reconstruct_trajectory(q: &[Point], velocities: &[Point], w: Option<&Workspace>) -> (Vec<ArcSegment>, Vec<String>) {
    let mut arcs = Vec::with_capacity(q.len().saturating_sub(1));
    let mut warnings = Vec::new();
    if q.len() != velocities.len() {
        warnings.push(format!("reconstruction skipped: {} waypoints, {} velocities", q.len(), velocities.len()));
        return (arcs, warnings);
    }
    for k in 0..q.len().saturating_sub(1) {
        let (h0, h1) = (heading(q, velocities, k), heading(q, velocities, k + 1));
        let line = ArcSegment { kind: SegmentKind::Line, start: q[k], end: q[k + 1], center: None, radius: None, heading_in: h0, heading_out: h1 };
        let cross = h0.cross(h1);
        let seg = if cross.abs() < PARALLEL_EPS {
            line
        } else {
            // Q_k + s·n0 = Q_{k+1} + t·n1 with n = perp(h)
            let (n0, n1) = (h0.perp(), h1.perp());
            let d = q[k + 1] - q[k];
            let s = d.cross(n1) / n0.cross(n1);
            let c = q[k] + n0 * s;
            let r = 0.5 * (c.distance(q[k]) + c.distance(q[k + 1]));
            if !(r.is_finite() && r <= MAX_ARC_RADIUS) {
                line
            } else {
                ArcSegment { kind: SegmentKind::Arc, center: Some(c), radius: Some(r), ..line }
            }
        };
        if let Some(w) = w {
            let hit = (0..=ARC_SAMPLES).map(|i| seg.point_at(i as f64 / ARC_SAMPLES as f64)).find(|&p| w.point_in_collision(p));
            if let Some(p) = hit {
                warnings.push(format!("segment {k}: sample ({:.3}, {:.3}) in collision", p.x, p.y));
            }
        }
        arcs.push(seg);
    }
    (arcs, warnings)
}

struct Candidate {
    waypoints: Vec<Point>,
    profile: SpeedProfile,
    stretch: Option<StretchRecord>,
    /// Quantity compared between iterations: traversal time, or the shape
    /// objective in constant-speed mode.
    score: f64,
}

fn plan_speed(q: &[Point], cfg: &CesConfig, warm: Option<&SpeedProfile>) -> Result<SpeedProfile, SpeedError> {
    match cfg.constant_speed {
        Some(v) => constant_speed_profile(q, &cfg.vehicle, v),
        None => optimize_speed(q, &cfg.vehicle, cfg.boundary, &cfg.solver, warm),
    }
}

fn score(q: &[Point], profile: &SpeedProfile, cfg: &CesConfig) -> f64 {
    if cfg.constant_speed.is_some() {
        balance_objective(q)
    } else {
        profile.traversal_time
    }
}

fn warn_curvature(q: &[Point], cfg: &CesConfig, what: &str, warnings: &mut Vec<String>) {
    if let Ok(g) = speed::PathGeometry::new(q) {
        let limit = 1.0 / cfg.vehicle.r_min_m;
        let worst = g.curvature.iter().fold(0.0f64, |m, k| m.max(k.abs()));
        if worst > limit * (1.0 + 1e-6) {
            let msg = format!("{what}: curvature {worst:.4} exceeds 1/R_min = {limit:.4}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
}

/// Runs the smoothing loop on `reference`.
///
/// Each iteration regenerates bubbles around the current waypoints,
/// stretches with the current speed profile and band length, and replans
/// speeds on the result. An iteration is kept only if it improves the score
/// by at least `time_tolerance` relative; the loop stops at the first
/// iteration that does not, after `max_iterations`, or on timeout.
pub fn run_ces(reference: &ReferencePath, w: &Workspace, cfg: &CesConfig) -> Result<CesResult, CesError> {
    cfg.validate()?;
    let started = Instant::now();
    let deadline = cfg.timeout_s.map(Duration::from_secs_f64);
    let out_of_time = || deadline.is_some_and(|d| started.elapsed() >= d);
    let mut warnings = Vec::new();

    let mut p: Vec<Point> = reference.waypoints().to_vec();
    let mut moved = 0;
    for q in p.iter_mut() {
        if w.point_in_collision(*q) {
            *q = w.project_to_free(*q, PROJECTION_MARGIN);
            moved += 1;
        }
    }
    if moved > 0 {
        let msg = format!("{moved} reference waypoints in collision were moved to free space");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let start_path = ReferencePath::new(p)?;
    let initial_length = start_path.length();

    let t0 = Instant::now();
    let reference_profile = match plan_speed(start_path.waypoints(), cfg, None) {
        Ok(prof) => Some(prof),
        Err(e) => {
            let msg = format!("no speed profile on the reference: {e}");
            log::warn!("{msg}");
            warnings.push(msg);
            None
        }
    };
    let reference_speed_time = t0.elapsed().as_secs_f64();
    warn_curvature(start_path.waypoints(), cfg, "reference", &mut warnings);

    let mut best: Option<Candidate> = reference_profile.as_ref().map(|prof| Candidate {
        waypoints: start_path.waypoints().to_vec(),
        profile: prof.clone(),
        stretch: None,
        score: score(start_path.waypoints(), prof, cfg),
    });
    let initial_time = reference_profile.as_ref().map(|p| p.traversal_time);

    let mut history: Vec<IterationRecord> = Vec::new();
    let mut path = start_path.clone();
    // velocities and forces seen by the next stretch
    let n = path.len();
    let (mut velocities, mut u_long) = match (&reference_profile, cfg.speed_first) {
        (Some(prof), true) => (prof.velocity.clone(), prof.u_long.clone()),
        _ => (vec![Point::zero(); n], vec![0.0; n]),
    };
    let mut warm = reference_profile.clone();

    for iteration in 1..=cfg.max_iterations {
        if out_of_time() {
            warnings.push(format!("timeout before iteration {iteration}"));
            break;
        }
        let mut times = PhaseTimes::default();
        if iteration == 1 {
            times.speed += reference_speed_time;
        }
        let band_length = path.band_length();
        let mut record = IterationRecord {
            iteration,
            band_length,
            objective: None,
            traversal_time: None,
            path_length: None,
            relaxation: None,
            accepted: false,
            times,
            error: None,
        };

        let t = Instant::now();
        let bubbles = generate_bubbles(path.waypoints(), w, &cfg.bubbles);
        record.times.bubbles = t.elapsed().as_secs_f64();
        let bubbles = match bubbles {
            Ok(b) => b,
            Err(e) => {
                record.error = Some(format!("bubbles: {e}"));
                history.push(record);
                break;
            }
        };

        let input = StretchInput { path: &path, bubbles: &bubbles, velocities: &velocities, u_long: &u_long, params: cfg.vehicle, band_length };
        let t = Instant::now();
        let stretched = stretch::stretch(&input, &cfg.solver);
        record.times.stretch = t.elapsed().as_secs_f64();
        let out = match stretched {
            Ok(o) => o,
            Err(e) => {
                record.error = Some(format!("stretch: {e}"));
                history.push(record);
                break;
            }
        };
        record.objective = Some(out.objective);
        record.relaxation = Some(out.relaxation);
        record.path_length = Some(path_length(&out.waypoints));

        let t = Instant::now();
        let prof = plan_speed(&out.waypoints, cfg, warm.as_ref());
        record.times.speed += t.elapsed().as_secs_f64();
        let prof = match prof {
            Ok(p) => p,
            Err(e) => {
                record.error = Some(format!("speed: {e}"));
                history.push(record);
                break;
            }
        };
        record.traversal_time = Some(prof.traversal_time);

        let sc = score(&out.waypoints, &prof, cfg);
        let improves = match &best {
            Some(b) => sc <= b.score * (1.0 - cfg.time_tolerance),
            None => sc.is_finite(),
        };
        // a relaxed stretch violates the nominal bounds, so it never wins
        let accept = improves && out.relaxation == 1.0;
        record.accepted = accept;
        if improves && !accept {
            record.error = Some(format!("stretch needed relaxed balance bounds (x{})", out.relaxation));
        }
        history.push(record);
        if !accept {
            break;
        }
        let next = ReferencePath::new(out.waypoints.clone())?;
        best = Some(Candidate {
            waypoints: out.waypoints.clone(),
            profile: prof.clone(),
            stretch: Some(StretchRecord { bubbles, velocities: velocities.clone(), u_long: u_long.clone(), band_length, bounds: out.bounds.clone() }),
            score: sc,
        });
        velocities = prof.velocity.clone();
        u_long = prof.u_long.clone();
        warm = Some(prof);
        path = next;
    }

    let best = match best {
        Some(b) => b,
        None => {
            let why = history.iter().rev().find_map(|h| h.error.clone()).or_else(|| warnings.first().cloned());
            return Err(CesError::NoTrajectory(why.unwrap_or_else(|| "no iteration produced a speed profile".into())));
        }
    };
    if best.stretch.is_some() {
        warn_curvature(&best.waypoints, cfg, "result", &mut warnings);
    }
    let (arcs, arc_warnings) = reconstruct_trajectory(&best.waypoints, &best.profile.velocity, Some(w));
    if !arc_warnings.is_empty() {
        log::warn!("{} reconstructed segments touch obstacles", arc_warnings.len());
    }
    warnings.extend(arc_warnings);
    Ok(CesResult {
        final_time: best.profile.traversal_time,
        final_length: path_length(&best.waypoints),
        waypoints: best.waypoints,
        profile: best.profile,
        reference_profile,
        stretch: best.stretch,
        history,
        initial_time,
        initial_length,
        arcs,
        warnings,
    })
}
