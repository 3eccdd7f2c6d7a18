//! Independent check of a finished trajectory.
//!
//! Everything is recomputed from the stored waypoints, bubbles, velocities
//! and squared speeds with formulas written out here, not borrowed from the
//! stretch or speed modules, so a modelling slip in either one shows up as a
//! violation rather than cancelling out.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::pipeline::CesResult;
use crate::{Point, VehicleParams, Workspace};

/// Relative tolerance used by the acceptance audit.
pub const AUDIT_TOL: f64 = 1e-6;

/// Below this speed the friction part of the balance bound is not imposed.
const REST_SPEED: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub check: &'static str,
    pub index: usize,
    pub lhs: f64,
    pub rhs: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {:.9e} > {:.9e}", self.check, self.index, self.lhs, self.rhs)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub tolerance: f64,
    /// Number of inequalities evaluated per check.
    pub counts: BTreeMap<&'static str, usize>,
    /// Largest `(lhs − rhs) / (1 + |rhs|)` per check; negative means slack.
    pub worst: BTreeMap<&'static str, f64>,
    pub violations: Vec<Violation>,
    /// Largest discrete curvature of the waypoints, reported only.
    pub max_curvature: f64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, name: &'static str, index: usize, lhs: f64, rhs: f64) {
        *self.counts.entry(name).or_default() += 1;
        let excess = (lhs - rhs) / (1.0 + rhs.abs());
        let w = self.worst.entry(name).or_insert(f64::NEG_INFINITY);
        *w = w.max(excess);
        if !(excess <= self.tolerance) {
            self.violations.push(Violation { check: name, index, lhs, rhs });
        }
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "pass" } else { "FAIL" };
        write!(f, "audit {status}:")?;
        for (name, n) in &self.counts {
            write!(f, " {name} {n} (worst {:+.2e})", self.worst[name])?;
        }
        for v in self.violations.iter().take(5) {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

fn circle_curvature(a: Point, b: Point, c: Point) -> f64 {
    // |κ| = 4·area / (|ab|·|bc|·|ca|)
    let twice_area = ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).abs();
    let den = a.distance(b) * b.distance(c) * c.distance(a);
    if den == 0.0 {
        0.0
    } else {
        2.0 * twice_area / den
    }
}

/// Audits the waypoints and speeds of `result` against `w` and `vehicle`.
///
/// Checks: every waypoint outside obstacles; every stored bubble free of
/// obstacles and containing its waypoint; the balance force under the
/// bound rebuilt from the stretch inputs; friction circle and traction cap
/// with the averaged adjacent accelerations; `b ≥ 0`; reported traversal
/// time equal to the recomputed one.
pub fn audit(result: &CesResult, w: &Workspace, vehicle: &VehicleParams, tol: f64) -> AuditReport {
    let mut rep = AuditReport { tolerance: tol, ..Default::default() };
    let q = &result.waypoints;
    let n = q.len();

    for (k, &p) in q.iter().enumerate() {
        let inside = if w.point_in_collision(p) { 1.0 } else { 0.0 };
        rep.check("collision", k, inside, 0.0);
    }

    if let Some(st) = &result.stretch {
        for (k, bubble) in st.bubbles.iter() {
            if k >= n {
                continue;
            }
            rep.check("ball", k, q[k].distance(bubble.center), bubble.radius);
            let clear = w.distance_to_obstacles(bubble.center).unwrap_or(f64::NEG_INFINITY);
            rep.check("bubble_free", k, bubble.radius, clear);
        }
        let d = st.band_length;
        let mu_g = vehicle.mu * vehicle.g;
        for k in 1..n.saturating_sub(1) {
            let force = (q[k] * 2.0 - q[k - 1] - q[k + 1]).norm();
            let mut bound = d * d / vehicle.r_min_m;
            let v = st.velocities[k].norm();
            if v >= REST_SPEED {
                let a = st.u_long[k] / vehicle.mass_kg;
                let lat = (mu_g * mu_g - a * a).max(0.0).sqrt();
                bound = bound.min(lat * d * d / (v * v));
            }
            rep.check("balance", k, force, bound);
        }
    }

    let b = &result.profile.b;
    if b.len() == n && n >= 2 {
        let ds: Vec<f64> = q.windows(2).map(|s| s[0].distance(s[1])).collect();
        let acc: Vec<f64> = (0..n - 1).map(|j| (b[j + 1] - b[j]) / (2.0 * ds[j])).collect();
        let m = vehicle.mass_kg;
        let limit = vehicle.mu * m * vehicle.g;
        for k in 0..n {
            rep.check("nonnegative_b", k, -b[k], 0.0);
            let kappa = if k == 0 || k == n - 1 { 0.0 } else { circle_curvature(q[k - 1], q[k], q[k + 1]) };
            rep.max_curvature = rep.max_curvature.max(kappa);
            let a = match k {
                0 => acc[0],
                _ if k == n - 1 => acc[n - 2],
                _ => 0.5 * (acc[k - 1] + acc[k]),
            };
            let u_long = m * a;
            let u_lat = m * kappa * b[k].max(0.0);
            rep.check("friction", k, u_long.hypot(u_lat), limit);
            rep.check("traction", k, u_long, vehicle.u_long_max_n);
        }
        let time: f64 = ds.iter().enumerate().map(|(j, l)| 2.0 * l / (b[j].max(0.0).sqrt() + b[j + 1].max(0.0).sqrt())).sum();
        rep.check("time", 0, (time - result.final_time).abs(), 0.0);
    } else {
        rep.check("profile_length", 0, b.len() as f64, n as f64);
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curvature_of_a_right_angle() {
        let k = circle_curvature(Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0));
        assert!((k - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(circle_curvature(Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)), 0.0);
    }

    #[test]
    fn report_flags_only_real_excess() {
        let mut r = AuditReport { tolerance: 1e-6, ..Default::default() };
        r.check("x", 0, 1.0 + 1e-7, 1.0);
        assert!(r.passed());
        r.check("x", 1, 1.01, 1.0);
        assert!(!r.passed());
        assert_eq!(r.counts["x"], 2);
        assert_eq!(r.violations[0].index, 1);
    }
}
