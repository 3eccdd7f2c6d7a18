//! Randomized invariants of the stretch, speed and pipeline stages.
//!
//! Each check takes one generated case. The `proptest!` suite and the
//! acceptance run drive the same checks with the same seed.

use ces_core::audit::{audit, AUDIT_TOL};
use ces_core::bubbles::generate_bubbles;
use ces_core::geometry::{Aabb, ObstacleSet};
use ces_core::pipeline::{default_solver_settings, run_ces, traversal_time, CesConfig};
use ces_core::solver::SolverSettings;
use ces_core::speed::optimize_speed;
use ces_core::stretch::{stretch, StretchInput};
use ces_core::{BubbleParams, Point, Polygon, ReferencePath, SpeedBoundary, VehicleParams, Workspace};
use proptest::prelude::*;
use proptest::test_runner::{RngSeed, TestCaseError, TestRunner};

use crate::{vehicle, wavy};

/// Cases per property.
pub const CASES: u32 = 24;

/// Fixed seed so a failure reproduces.
pub fn config() -> ProptestConfig {
    ProptestConfig { cases: CASES, rng_seed: RngSeed::Fixed(0x05ee_dce5), failure_persistence: None, ..ProptestConfig::default() }
}

#[derive(Debug, Clone)]
pub struct SmallScenario {
    pub workspace: Workspace,
    pub reference: ReferencePath,
    pub config: CesConfig,
}

impl SmallScenario {
    pub fn mirrored(&self) -> Self {
        let pts = self.reference.waypoints().iter().map(|p| Point::new(p.x, -p.y)).collect();
        SmallScenario { workspace: self.workspace.mirrored_x(), reference: ReferencePath::new(pts).unwrap(), config: self.config.clone() }
    }
}

/// A wavy reference through a 60 m box with up to three rectangles kept at
/// least 1.5 m off the reference.
pub fn small_scenario() -> impl Strategy<Value = SmallScenario> {
    (
        1.0f64..6.0,
        0.5f64..2.0,
        0.0f64..std::f64::consts::TAU,
        prop::collection::vec((5.0f64..45.0, -12.0f64..12.0, 1.0f64..5.0, 1.0f64..5.0), 0..4),
        0.5f64..1.0,
    )
        .prop_map(|(amp, waves, phase, boxes, mu)| {
            let pts = wavy(50.0, amp, waves, phase, 51);
            let obstacles = boxes
                .into_iter()
                .filter_map(|(x, y, w, h)| {
                    let r = Aabb::new(Point::new(x, y), Point::new(x + w, y + h)).ok()?;
                    let clear = pts.iter().all(|p| r.distance_outside(*p) > 1.5);
                    clear.then(|| Polygon::rectangle(r.min, r.max).unwrap())
                })
                .collect();
            let bounds = Aabb::new(Point::new(-5.0, -20.0), Point::new(55.0, 20.0)).unwrap();
            let mut config = CesConfig::new(BubbleParams::new(0.5, 5.0).unwrap(), vehicle(mu, 0.5, 4.0));
            config.max_iterations = 6;
            SmallScenario { workspace: Workspace::new(bounds, ObstacleSet::new(obstacles)), reference: ReferencePath::new(pts).unwrap(), config }
        })
}

/// Wave parameters `(amp, waves, phase)` for a 40 m path.
pub fn wave(max_amp: f64) -> impl Strategy<Value = (f64, f64, f64)> {
    (0.5f64..max_amp, 0.5f64..2.0, 0.0f64..std::f64::consts::TAU)
}

#[derive(Debug, Clone, Copy)]
pub struct GripCase {
    pub wave: (f64, f64, f64),
    pub mu: f64,
    pub traction_ratio: f64,
    /// Factor applied to μ or to the traction ratio.
    pub grow: f64,
}

pub fn grip_case() -> impl Strategy<Value = GripCase> {
    (wave(5.0), 0.3f64..0.9, 0.2f64..0.9, 1.05f64..2.0).prop_map(|(wave, mu, traction_ratio, grow)| GripCase { wave, mu, traction_ratio, grow })
}

fn fail(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

pub fn check_deterministic(sc: &SmallScenario) -> Result<(), TestCaseError> {
    let a = run_ces(&sc.reference, &sc.workspace, &sc.config).map_err(fail)?;
    let b = run_ces(&sc.reference, &sc.workspace, &sc.config).map_err(fail)?;
    prop_assert_eq!(&a.waypoints, &b.waypoints);
    prop_assert_eq!(a.final_time.to_bits(), b.final_time.to_bits());
    prop_assert_eq!(a.profile.b, b.profile.b);
    Ok(())
}

pub fn check_mirror(sc: &SmallScenario) -> Result<(), TestCaseError> {
    let a = run_ces(&sc.reference, &sc.workspace, &sc.config).map_err(fail)?;
    let m = sc.mirrored();
    let b = run_ces(&m.reference, &m.workspace, &m.config).map_err(fail)?;
    prop_assert_eq!(a.waypoints.len(), b.waypoints.len());
    // mirrored polygons are re-oriented, which reorders some sums
    for (p, q) in a.waypoints.iter().zip(&b.waypoints) {
        prop_assert!((p.x - q.x).abs() <= 1e-9 && (p.y + q.y).abs() <= 1e-9, "{:?} vs {:?}", p, q);
    }
    prop_assert!((a.final_time - b.final_time).abs() <= 1e-9 * a.final_time);
    Ok(())
}

pub fn check_pipeline(sc: &SmallScenario) -> Result<(), TestCaseError> {
    let r = run_ces(&sc.reference, &sc.workspace, &sc.config).map_err(fail)?;
    let t0 = r.initial_time.ok_or_else(|| fail("reference has no speed profile"))?;
    // accepted times fall by at least the tolerance, and the result is the
    // best of them
    let mut best = t0;
    for h in r.history.iter().filter(|h| h.accepted) {
        let t = h.traversal_time.ok_or_else(|| fail("accepted iteration without a time"))?;
        prop_assert!(t <= best * (1.0 - sc.config.time_tolerance), "{} after {}", t, best);
        best = t;
    }
    prop_assert_eq!(r.final_time, best);
    let recomputed = traversal_time(&r.waypoints, &r.profile).map_err(fail)?;
    prop_assert!((recomputed - r.final_time).abs() <= 1e-9 * r.final_time);
    prop_assert!(r.final_time <= t0);
    let report = audit(&r, &sc.workspace, &sc.config.vehicle, AUDIT_TOL);
    prop_assert!(report.passed(), "{}", report);
    Ok(())
}

pub fn check_grip_monotone(c: &GripCase) -> Result<(), TestCaseError> {
    let (amp, waves, phase) = c.wave;
    let q = wavy(40.0, amp, waves, phase, 41);
    let s = default_solver_settings();
    let t = |v: VehicleParams| optimize_speed(&q, &v, SpeedBoundary::default(), &s, None).map(|p| p.traversal_time).map_err(fail);
    let force = |ratio: f64| ratio * c.mu * 833.0 * 9.81;
    let base = t(vehicle(c.mu, c.traction_ratio, 4.0))?;
    // more friction with the same traction force
    let more_mu = VehicleParams::new(833.0, c.mu * c.grow, 9.81, force(c.traction_ratio), 4.0).map_err(fail)?;
    prop_assert!(t(more_mu)? <= base * (1.0 + 1e-7));
    let more_u = VehicleParams::new(833.0, c.mu, 9.81, force((c.traction_ratio * c.grow).min(1.0)), 4.0).map_err(fail)?;
    prop_assert!(t(more_u)? <= base * (1.0 + 1e-7));
    Ok(())
}

pub fn check_stretch_fixed_point(wave: (f64, f64, f64)) -> Result<(), TestCaseError> {
    let (amp, waves, phase) = wave;
    let path = ReferencePath::new(wavy(40.0, amp, waves, phase, 41)).map_err(fail)?;
    let w = Workspace::empty(Aabb::new(Point::new(-10.0, -20.0), Point::new(50.0, 20.0)).unwrap());
    let v = vehicle(0.8, 0.5, 4.0);
    // the along-path direction is weakly curved, so positions need a
    // tighter stop than the objective does
    let s = SolverSettings { feas_tol: 1e-11, opt_tol: 1e-11, ..default_solver_settings() };
    let prof = optimize_speed(path.waypoints(), &v, SpeedBoundary::default(), &s, None).map_err(fail)?;
    let bubbles = generate_bubbles(path.waypoints(), &w, &BubbleParams::new(0.5, 2.0).unwrap()).map_err(fail)?;
    let input = StretchInput { path: &path, bubbles: &bubbles, velocities: &prof.velocity, u_long: &prof.u_long, params: v, band_length: path.band_length() };
    let first = stretch(&input, &s).map_err(fail)?;
    if first.relaxation != 1.0 {
        return Err(TestCaseError::reject("stretch needed relaxation"));
    }
    let again_path = ReferencePath::new(first.waypoints.clone()).map_err(fail)?;
    let again = stretch(&StretchInput { path: &again_path, ..input.clone() }, &s).map_err(fail)?;
    for (p, q) in first.waypoints.iter().zip(&again.waypoints) {
        prop_assert!(p.distance(*q) <= 1e-6, "{:?} vs {:?}", p, q);
    }
    Ok(())
}

pub fn check_speed_fixed_point(wave: (f64, f64, f64)) -> Result<(), TestCaseError> {
    let (amp, waves, phase) = wave;
    let q = wavy(40.0, amp, waves, phase, 41);
    let v = vehicle(0.8, 0.5, 4.0);
    let s = default_solver_settings();
    let cold = optimize_speed(&q, &v, SpeedBoundary::default(), &s, None).map_err(fail)?;
    let warm = optimize_speed(&q, &v, SpeedBoundary::default(), &s, Some(&cold)).map_err(fail)?;
    prop_assert!((cold.traversal_time - warm.traversal_time).abs() <= 1e-6 * cold.traversal_time);
    for (a, b) in cold.b.iter().zip(&warm.b) {
        prop_assert!((a.sqrt() - b.sqrt()).abs() <= 1e-6 * (1.0 + a.sqrt()));
    }
    Ok(())
}

/// Runs every property once with [`config`]; one entry per property.
pub fn run_all() -> Vec<(&'static str, Result<(), String>)> {
    fn go<S: Strategy>(s: S, f: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
        TestRunner::new(config()).run(&s, f).map_err(|e| e.to_string())
    }
    vec![
        ("determinism", go(small_scenario(), |sc| check_deterministic(&sc))),
        ("mirror symmetry", go(small_scenario(), |sc| check_mirror(&sc))),
        ("pipeline invariants", go(small_scenario(), |sc| check_pipeline(&sc))),
        ("monotone in mu and traction", go(grip_case(), |c| check_grip_monotone(&c))),
        ("stretch fixed point", go(wave(3.0), check_stretch_fixed_point)),
        ("speed fixed point", go(wave(5.0), check_speed_fixed_point)),
    ]
}
