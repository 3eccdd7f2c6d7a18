//! Active-set polishing of an optimal point.
//!
//! Interior-point iterates stop a small distance inside the cones, and on a
//! weakly curved objective that distance shows up as a visible error in
//! `x`. Polishing treats the constraints that are tight at the returned
//! point as equalities and runs Newton on the resulting KKT system. The
//! polished point is kept only when it is feasible, its multipliers have
//! the right sign and its objective is no worse.

use super::skyline::Skyline;
use super::{dot_row, ConeProgram, SolverSettings, SparseRow};

/// A cone counts as tight when its scaled slack is below this.
const ACTIVE_TOL: f64 = 1e-7;
const NEWTON_STEPS: usize = 12;
/// Regularization of the KKT system; iterative refinement removes it.
const REG: f64 = 1e-11;
const REFINE_STEPS: usize = 4;
const ROUNDS: usize = 8;

/// One constraint held with equality, `g(x) = 0`.
enum Held<'a> {
    /// `rᵀx − h` (program equality or linear cone).
    Linear { row: &'a SparseRow, offset: f64, cone: Option<usize> },
    /// `cᵀx + d − ‖A x + b‖`.
    Cone { cone: usize },
}

/// `(cone, λ)` for each held cone.
type Multipliers = Vec<(usize, f64)>;

struct Eval {
    value: f64,
    grad: Vec<(usize, f64)>,
    /// Hessian of `g` as `(i, j, v)` with `i ≤ j`.
    hess: Vec<(usize, usize, f64)>,
}

fn eval(program: &ConeProgram, held: &Held, x: &[f64]) -> Option<Eval> {
    match *held {
        Held::Linear { row, offset, .. } => Some(Eval { value: dot_row(row, x) - offset, grad: row.clone(), hess: Vec::new() }),
        Held::Cone { cone } => {
            let c = &program.cones[cone];
            let u: Vec<f64> = c.a_rows.iter().zip(&c.b).map(|(r, b)| dot_row(r, x) + b).collect();
            let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            // the apex has no gradient
            if nu <= 1e-12 * c.scale() {
                return None;
            }
            let uh: Vec<f64> = u.iter().map(|v| v / nu).collect();
            let mut grad: Vec<(usize, f64)> = c.c.clone();
            for (r, &w) in c.a_rows.iter().zip(&uh) {
                grad.extend(r.iter().map(|&(j, v)| (j, -w * v)));
            }
            // −Aᵀ(I − ûûᵀ)A / ‖u‖
            let mut vars: Vec<usize> = c.a_rows.iter().flatten().map(|&(j, _)| j).collect();
            vars.sort_unstable();
            vars.dedup();
            let col = |r: &SparseRow, j: usize| r.iter().filter(|&&(k, _)| k == j).map(|&(_, v)| v).sum::<f64>();
            let a: Vec<Vec<f64>> = c.a_rows.iter().map(|r| vars.iter().map(|&j| col(r, j)).collect()).collect();
            let ua: Vec<f64> = (0..vars.len()).map(|p| (0..a.len()).map(|r| uh[r] * a[r][p]).sum()).collect();
            let mut hess = Vec::new();
            for p in 0..vars.len() {
                for q in p..vars.len() {
                    let ata: f64 = (0..a.len()).map(|r| a[r][p] * a[r][q]).sum();
                    let v = -(ata - ua[p] * ua[q]) / nu;
                    if v != 0.0 {
                        hess.push((vars[p], vars[q], v));
                    }
                }
            }
            Some(Eval { value: c.rhs(x) - nu, grad, hess })
        }
    }
}

/// Polished point, or `None` when polishing does not improve on `x`.
pub(super) fn polish(program: &ConeProgram, x: &[f64], cone_duals: &[Vec<f64>], settings: &SolverSettings) -> Option<Vec<f64>> {
    if cone_duals.len() != program.cones.len() {
        return None;
    }
    // tight by slack, or carrying a multiplier larger than the slack
    let mut tight: Vec<usize> = program
        .cones
        .iter()
        .zip(cone_duals)
        .enumerate()
        .filter(|(_, (c, z))| {
            let slack = -c.violation(x);
            slack <= ACTIVE_TOL * c.scale() || z.first().is_some_and(|&z0| z0 > slack)
        })
        .map(|(i, _)| i)
        .collect();
    let obj = program.objective(x);
    for _ in 0..ROUNDS {
        let (xp, signs) = newton(program, x, &tight, cone_duals)?;
        // a constraint pulling the wrong way is not part of the active set,
        // one the step crosses is
        let wrong: Vec<usize> = signs.iter().filter(|&&(_, lambda)| lambda < 0.0).map(|&(i, _)| i).collect();
        let crossed: Vec<usize> =
            program.cones.iter().enumerate().filter(|(i, c)| c.violation(&xp) / c.scale() > settings.feas_tol && !tight.contains(i)).map(|(i, _)| i).collect();
        if wrong.is_empty() && crossed.is_empty() {
            let feasible = program.max_scaled_violation(&xp) <= settings.feas_tol;
            let better = program.objective(&xp) <= obj + settings.opt_tol * (1.0 + obj.abs());
            return (feasible && better).then_some(xp);
        }
        tight.retain(|i| !wrong.contains(i));
        tight.extend(crossed);
        tight.sort_unstable();
    }
    None
}

/// Newton on the KKT system with `tight` cones held. Returns the point and
/// the cone multipliers `λ` (nonnegative at a true optimum; small negative
/// values below the noise level are reported as zero).
fn newton(program: &ConeProgram, x0: &[f64], tight: &[usize], cone_duals: &[Vec<f64>]) -> Option<(Vec<f64>, Multipliers)> {
    let n = program.n_vars;
    let mut held: Vec<Held> = program.equalities.iter().map(|e| Held::Linear { row: &e.row, offset: e.rhs, cone: None }).collect();
    let n_eq = held.len();
    for &i in tight {
        let c = &program.cones[i];
        if c.a_rows.is_empty() {
            held.push(Held::Linear { row: &c.c, offset: -c.d, cone: Some(i) });
        } else {
            held.push(Held::Cone { cone: i });
        }
    }
    let m = held.len();

    // Order each multiplier right after the last variable it touches, so
    // the envelope stays as narrow as the program's.
    let mut last = vec![0usize; m];
    let first_eval: Vec<Eval> = held.iter().map(|h| eval(program, h, x0)).collect::<Option<_>>()?;
    for (k, e) in first_eval.iter().enumerate() {
        last[k] = e.grad.iter().map(|&(j, _)| j).max().unwrap_or(0);
    }
    let mut keys: Vec<(usize, usize, usize)> = (0..n).map(|j| (j, 0, j)).chain((0..m).map(|k| (last[k], 1, n + k))).collect();
    keys.sort_unstable();
    let mut pos = vec![0usize; n + m];
    for (p, &(_, _, id)) in keys.iter().enumerate() {
        pos[id] = p;
    }
    let mut pattern: Vec<(usize, usize)> = program.p.iter().map(|&(i, j, _)| (pos[i], pos[j])).collect();
    for (k, e) in first_eval.iter().enumerate() {
        pattern.extend(e.grad.iter().map(|&(j, _)| (pos[n + k], pos[j])));
        pattern.extend(e.hess.iter().map(|&(i, j, _)| (pos[i], pos[j])));
    }
    let empty = Skyline::from_pattern(n + m, pattern);

    // initial multipliers from the solver's cone duals: g = −λ·(…) form
    let mut mu = vec![0.0; m];
    for (k, h) in held.iter().enumerate() {
        let cone = match *h {
            Held::Linear { cone, .. } => cone,
            Held::Cone { cone } => Some(cone),
        };
        if let Some(i) = cone {
            mu[k] = -cone_duals[i].first().copied().unwrap_or(0.0);
        }
    }

    let mut x = x0.to_vec();
    let scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for step in 0..NEWTON_STEPS {
        let evals: Vec<Eval> = if step == 0 {
            first_eval.iter().map(|e| Eval { value: e.value, grad: e.grad.clone(), hess: e.hess.clone() }).collect()
        } else {
            held.iter().map(|h| eval(program, h, &x)).collect::<Option<_>>()?
        };
        let mut kkt = empty.clone();
        for &(i, j, v) in &program.p {
            kkt.add(pos[i], pos[j], v);
        }
        let mut grad_f = program.q.clone();
        for &(i, j, v) in &program.p {
            if i == j {
                grad_f[i] += v * x[i];
            } else {
                grad_f[i] += v * x[j];
                grad_f[j] += v * x[i];
            }
        }
        for (k, e) in evals.iter().enumerate() {
            for &(i, j, v) in &e.hess {
                kkt.add(pos[i], pos[j], mu[k] * v);
            }
            for &(j, v) in &e.grad {
                kkt.add(pos[n + k], pos[j], v);
            }
        }
        let unreg = kkt.clone();
        for j in 0..n {
            kkt.add(pos[j], pos[j], REG);
        }
        for k in 0..m {
            kkt.add(pos[n + k], pos[n + k], -REG);
        }
        kkt.factor_ldl().ok()?;
        // solve for (dx, μ_new): [H Jᵀ; J 0] [dx; μ] = [−∇f; −g]
        let mut rhs = vec![0.0; n + m];
        for j in 0..n {
            rhs[pos[j]] = -grad_f[j];
        }
        for (k, e) in evals.iter().enumerate() {
            rhs[pos[n + k]] = -e.value;
        }
        let mut sol = rhs.clone();
        kkt.solve(&mut sol);
        let mut r = vec![0.0; n + m];
        for _ in 0..REFINE_STEPS {
            unreg.mul_sym(&sol, &mut r);
            let mut d: Vec<f64> = rhs.iter().zip(&r).map(|(a, b)| a - b).collect();
            kkt.solve(&mut d);
            sol.iter_mut().zip(&d).for_each(|(s, v)| *s += v);
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut dx_max = 0.0f64;
        for j in 0..n {
            x[j] += sol[pos[j]];
            dx_max = dx_max.max(sol[pos[j]].abs());
        }
        for k in 0..m {
            mu[k] = sol[pos[n + k]];
        }
        if dx_max <= 1e-15 * scale {
            break;
        }
    }
    let mu_max = mu.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let signs = held
        .iter()
        .enumerate()
        .skip(n_eq)
        .filter_map(|(k, h)| {
            let cone = match *h {
                Held::Linear { cone, .. } => cone?,
                Held::Cone { cone } => cone,
            };
            let lambda = -mu[k];
            Some((cone, if lambda < -1e-9 * (1.0 + mu_max) { lambda } else { lambda.max(0.0) }))
        })
        .collect();
    Some((x, signs))
}
