//! Independent oracles: exhaustive grid search for the stretch program,
//! dynamic programming for the speed program, closed forms for the speed
//! extremes. None of them share code with the library's solvers.

use ces_core::bubbles::generate_bubbles;
use ces_core::geometry::Aabb;
use ces_core::pipeline::default_solver_settings;
use ces_core::solver::SolverSettings;
use ces_core::speed::optimize_speed;
use ces_core::stretch::{stretch, StretchInput};
use ces_core::{BubbleParams, Point, ReferencePath, SpeedBoundary, VehicleParams, Workspace};
use rayon::prelude::*;

use crate::{sample_path, vehicle};

// ------------------------------------------------------------------ stretch

/// Own second-difference objective, written out without the library.
pub fn shape_cost(q: &[Point]) -> f64 {
    let mut s = 0.0;
    for k in 1..q.len() - 1 {
        let nx = 2.0 * q[k].x - q[k - 1].x - q[k + 1].x;
        let ny = 2.0 * q[k].y - q[k - 1].y - q[k + 1].y;
        s += nx * nx + ny * ny;
    }
    s
}

pub struct GridCase {
    pub name: &'static str,
    pub waypoints: Vec<Point>,
    pub radius: f64,
    /// Grid points per axis over each free waypoint's bubble box.
    pub per_axis: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GridOutcome {
    pub objective: f64,
    pub grid_min: f64,
    /// Largest gap the grid resolution allows between the two.
    pub bound: f64,
}

impl GridOutcome {
    pub fn check(&self) -> Result<(), String> {
        let (obj, grid, bound) = (self.objective, self.grid_min, self.bound);
        // grid points are feasible, so the solver can only be better
        if obj > grid + 1e-9 {
            return Err(format!("solver {obj} above grid {grid}"));
        }
        if grid - obj > bound {
            return Err(format!("grid {grid} vs solver {obj}, bound {bound}"));
        }
        if obj <= 1e-3 {
            return Err(format!("instance should bend, objective {obj}"));
        }
        Ok(())
    }
}

/// Bent instances with five, six and seven waypoints.
pub fn grid_cases() -> Vec<GridCase> {
    let p = Point::new;
    vec![
        GridCase { name: "n5", waypoints: vec![p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.8), p(3.0, 0.0), p(4.0, 0.0)], radius: 0.5, per_axis: 201 },
        GridCase { name: "n6", waypoints: vec![p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.8), p(3.0, 0.3), p(4.0, 0.0), p(5.0, 0.0)], radius: 0.5, per_axis: 61 },
        GridCase {
            name: "n7",
            waypoints: vec![p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.8), p(3.0, 0.9), p(4.0, 0.0), p(5.0, 0.0), p(6.0, 0.0)],
            radius: 0.5,
            per_axis: 23,
        },
    ]
}

pub fn stretch_vs_grid(case: &GridCase) -> Result<GridOutcome, String> {
    let n = case.waypoints.len();
    let path = ReferencePath::new(case.waypoints.clone()).map_err(|e| e.to_string())?;
    let w = Workspace::empty(Aabb::new(Point::new(-50.0, -50.0), Point::new(50.0, 50.0)).unwrap());
    let bubbles = generate_bubbles(path.waypoints(), &w, &BubbleParams::new(case.radius, case.radius).unwrap()).map_err(|e| e.to_string())?;
    let vel = vec![Point::zero(); n];
    let ul = vec![0.0; n];
    // a tiny turning radius leaves only the balls binding
    let input =
        StretchInput { path: &path, bubbles: &bubbles, velocities: &vel, u_long: &ul, params: vehicle(0.8, 0.5, 1e-3), band_length: path.band_length() };
    let out = stretch(&input, &default_solver_settings()).map_err(|e| e.to_string())?;
    if out.relaxation != 1.0 {
        return Err(format!("stretch relaxed by {}", out.relaxation));
    }

    let anchors = input.anchors();
    let free: Vec<usize> = (2..n - 2).collect();
    let h = 2.0 * case.radius / (case.per_axis - 1) as f64;
    let cells: Vec<Vec<Point>> = free
        .iter()
        .map(|&k| {
            let c = bubbles.get(k).unwrap().center;
            let mut pts = Vec::new();
            for i in 0..case.per_axis {
                for j in 0..case.per_axis {
                    let p = Point::new(c.x - case.radius + i as f64 * h, c.y - case.radius + j as f64 * h);
                    if p.distance(c) <= case.radius {
                        pts.push(p);
                    }
                }
            }
            pts
        })
        .collect();

    let template = {
        let mut q = vec![Point::zero(); n];
        q[0] = anchors[0];
        q[1] = anchors[1];
        q[n - 2] = anchors[2];
        q[n - 1] = anchors[3];
        q
    };
    let grid_min = cells[0]
        .par_iter()
        .map(|&first| {
            let mut q = template.clone();
            q[2] = first;
            let mut best = f64::INFINITY;
            let mut idx = vec![0usize; free.len() - 1];
            if idx.is_empty() {
                return shape_cost(&q);
            }
            loop {
                for (slot, &i) in idx.iter().enumerate() {
                    q[3 + slot] = cells[slot + 1][i];
                }
                best = best.min(shape_cost(&q));
                let mut d = 0;
                loop {
                    idx[d] += 1;
                    if idx[d] < cells[d + 1].len() {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                    if d == idx.len() {
                        return best;
                    }
                }
            }
        })
        .reduce(|| f64::INFINITY, f64::min);

    // Some grid point lies within 1.71 h of the optimum in every free
    // waypoint (pull the optimum h toward the center, then round), and the
    // Hessian of the cost is at most 32 I.
    let delta = (1.0 + 0.5f64.sqrt()) * h * (free.len() as f64).sqrt();
    let grad = {
        let f0 = shape_cost(&out.waypoints);
        let mut g2 = 0.0;
        for &k in &free {
            for axis in 0..2 {
                let mut q = out.waypoints.clone();
                let e = 1e-6;
                if axis == 0 {
                    q[k].x += e;
                } else {
                    q[k].y += e;
                }
                let fd = (shape_cost(&q) - f0) / e;
                g2 += fd * fd;
            }
        }
        g2.sqrt()
    };
    Ok(GridOutcome { objective: out.objective, grid_min, bound: grad * delta + 16.0 * delta * delta })
}

// -------------------------------------------------------------------- speed

fn menger(a: Point, b: Point, c: Point) -> f64 {
    let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
    2.0 * cross / (a.distance(b) * b.distance(c) * a.distance(c))
}

/// Rest-to-rest speed program over squared speeds on a grid.
pub struct DpPath {
    ds: Vec<f64>,
    kappa: Vec<f64>,
    mu_g: f64,
    a_max: f64,
}

impl DpPath {
    pub fn new(q: &[Point], v: &VehicleParams) -> Self {
        let n = q.len();
        let ds = q.windows(2).map(|w| w[0].distance(w[1])).collect();
        let mut kappa = vec![0.0; n];
        for k in 1..n - 1 {
            kappa[k] = menger(q[k - 1], q[k], q[k + 1]);
        }
        DpPath { ds, kappa, mu_g: v.mu * v.g, a_max: v.u_long_max_n / v.mass_kg }
    }

    fn step_within(&self, k: usize, b0: f64, b1: f64, tol: f64) -> bool {
        let a = (b1 - b0) / (2.0 * self.ds[k]);
        let (am, fm) = (self.a_max * (1.0 + tol), self.mu_g * (1.0 + tol));
        a <= am && a.hypot(self.kappa[k] * b0) <= fm && a.hypot(self.kappa[k + 1] * b1) <= fm
    }

    fn step_time(&self, k: usize, b0: f64, b1: f64) -> f64 {
        let v = b0.sqrt() + b1.sqrt();
        if v > 0.0 {
            2.0 * self.ds[k] / v
        } else {
            f64::INFINITY
        }
    }

    pub fn time(&self, b: &[f64]) -> f64 {
        (0..self.ds.len()).map(|k| self.step_time(k, b[k], b[k + 1])).sum()
    }

    pub fn feasible_within(&self, b: &[f64], tol: f64) -> bool {
        b.iter().all(|&x| x >= 0.0) && (0..self.ds.len()).all(|k| self.step_within(k, b[k], b[k + 1], tol))
    }

    /// Minimum time over `b ∈ {0, h, …, (levels−1) h}`; returns it with `h`.
    pub fn solve(&self, levels: usize, b_max: f64) -> (f64, f64) {
        let h = b_max / (levels - 1) as f64;
        let n = self.ds.len() + 1;
        let mut cost = vec![f64::INFINITY; levels];
        cost[0] = 0.0;
        for k in 0..n - 1 {
            let last = k + 1 == n - 1;
            let next: Vec<f64> = (0..levels)
                .into_par_iter()
                .map(|j| {
                    if last && j != 0 {
                        return f64::INFINITY;
                    }
                    let b1 = j as f64 * h;
                    let mut best = f64::INFINITY;
                    for (i, &c) in cost.iter().enumerate() {
                        if c.is_finite() {
                            let b0 = i as f64 * h;
                            if self.step_within(k, b0, b1, 0.0) {
                                best = best.min(c + self.step_time(k, b0, b1));
                            }
                        }
                    }
                    best
                })
                .collect();
            cost = next;
        }
        (cost[0], h)
    }
}

pub struct DpCase {
    pub name: &'static str,
    pub waypoints: Vec<Point>,
    pub vehicle: VehicleParams,
}

/// Straight, S-curve and tight-arc paths of at most 30 waypoints.
pub fn dp_cases() -> Vec<DpCase> {
    vec![
        DpCase { name: "straight", waypoints: sample_path(|t| Point::new(29.0 * t, 0.0), 30), vehicle: vehicle(0.8, 0.5, 4.0) },
        DpCase {
            name: "s-curve",
            waypoints: sample_path(|t| Point::new(30.0 * t, 4.0 * (std::f64::consts::TAU * t).sin()), 30),
            vehicle: vehicle(0.8, 0.5, 4.0),
        },
        DpCase {
            name: "tight arc",
            waypoints: sample_path(|t| Point::new(6.0 * (2.5 * t).sin(), 6.0 * (1.0 - (2.5 * t).cos())), 25),
            vehicle: vehicle(0.6, 0.3, 4.0),
        },
    ]
}

#[derive(Debug, Clone, Copy)]
pub struct DpOutcome {
    pub solver: f64,
    pub dp: f64,
    /// Time of a feasible grid profile next to the optimum; the DP can do
    /// no worse.
    pub grid_bound: f64,
}

pub fn speed_vs_dp(q: &[Point], v: &VehicleParams) -> Result<DpOutcome, String> {
    let dp = DpPath::new(q, v);
    let total: f64 = dp.ds.iter().sum();
    // highest squared speed reachable from rest and brakeable back to rest
    let b_max = 2.0 * dp.a_max * dp.mu_g * total / (dp.a_max + dp.mu_g);
    let (t_dp, h) = dp.solve(500, b_max);
    let prof = optimize_speed(q, v, SpeedBoundary::default(), &default_solver_settings(), None).map_err(|e| e.to_string())?;
    // the optimum sits on its active constraints, up to rounding
    if !dp.feasible_within(&prof.b, 1e-12) {
        return Err("solver profile violates the DP constraints".into());
    }
    let t_opt = dp.time(&prof.b);
    if (t_opt - prof.traversal_time).abs() > 1e-9 * t_opt {
        return Err(format!("reported time {} vs recomputed {t_opt}", prof.traversal_time));
    }
    // Shrink the optimum until its rounding onto the grid stays feasible.
    let mut eps = 1e-3;
    let snapped = loop {
        let b: Vec<f64> = prof.b.iter().map(|&x| ((1.0 - eps) * x / h).floor() * h).collect();
        if dp.feasible_within(&b, 0.0) && dp.time(&b).is_finite() {
            break b;
        }
        eps *= 1.5;
        if eps >= 0.5 {
            return Err("no feasible grid profile near the optimum".into());
        }
    };
    Ok(DpOutcome { solver: t_opt, dp: t_dp, grid_bound: dp.time(&snapped) })
}

impl DpOutcome {
    pub fn check(&self) -> Result<(), String> {
        let (t_opt, t_dp, t_snap) = (self.solver, self.dp, self.grid_bound);
        if t_opt > t_dp * (1.0 + 1e-9) {
            return Err(format!("solver {t_opt} slower than DP {t_dp}"));
        }
        if t_dp > t_snap * (1.0 + 1e-12) {
            return Err(format!("DP {t_dp} above its own bound {t_snap}"));
        }
        if t_snap - t_opt >= 0.05 * t_opt {
            return Err(format!("resolution bound {t_snap} too loose around {t_opt}"));
        }
        Ok(())
    }
}

// ------------------------------------------------------------ closed forms

/// Rest-to-rest time on a straight line of `length` with `n` waypoints, and
/// the bang-bang optimum.
pub fn straight_bang_bang(v: &VehicleParams, length: f64, n: usize) -> Result<(f64, f64), String> {
    let q = sample_path(|t| Point::new(length * t, 0.0), n);
    let prof = optimize_speed(&q, v, SpeedBoundary::default(), &default_solver_settings(), None).map_err(|e| e.to_string())?;
    let (a1, a2) = (v.u_long_max_n / v.mass_kg, v.mu * v.g);
    Ok((prof.traversal_time, (2.0 * length * (a1 + a2) / (a1 * a2)).sqrt()))
}

/// Speed at the middle of four radians of a circle of `radius`, and the
/// friction-limited steady-state speed.
pub fn circle_mid_speed(v: &VehicleParams, radius: f64, n: usize) -> Result<(f64, f64), String> {
    let q = sample_path(|t| Point::new(radius * (4.0 * t).sin(), radius * (1.0 - (4.0 * t).cos())), n);
    let prof = optimize_speed(&q, v, SpeedBoundary::default(), &SolverSettings::default(), None).map_err(|e| e.to_string())?;
    Ok((prof.speed(n / 2), (v.mu * v.g * radius).sqrt()))
}
