//! Convex solver for programs of the form
//!
//! ```text
//! minimize    ½ xᵀP x + qᵀx + const
//! subject to  rᵢᵀx = hᵢ                        (linear equalities)
//!             ‖Aⱼ x + bⱼ‖ ≤ cⱼᵀx + dⱼ          (second-order cones)
//! ```
//!
//! A cone with an empty `A` block is a plain linear inequality. Both
//! smoothing subproblems (the elastic stretch and the speed profile) compile
//! to this form.

mod admm;
mod ipm;
mod polish;
pub mod skyline;
mod stack;

use std::fmt::Write as _;
use std::io::{self, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use skyline::Skyline;

/// Sparse row as `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("index {index} out of range for {n_vars} variables ({context})")]
    Dimension { index: usize, n_vars: usize, context: &'static str },
    #[error("cone {cone}: A has {rows} rows but b has {offsets} entries")]
    ConeShape { cone: usize, rows: usize, offsets: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("quadratic form is not positive semidefinite (pivot {pivot:e} at row {row})")]
    NotPsd { row: usize, pivot: f64 },
}

/// Identifies a constraint for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintTag {
    pub kind: &'static str,
    pub index: usize,
}

impl ConstraintTag {
    pub const fn new(kind: &'static str, index: usize) -> Self {
        ConstraintTag { kind, index }
    }
}

/// `‖A x + b‖ ≤ cᵀx + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub a_rows: Vec<SparseRow>,
    pub b: Vec<f64>,
    pub c: SparseRow,
    pub d: f64,
    pub tag: ConstraintTag,
}

impl SocConstraint {
    /// Linear inequality `cᵀx + d ≥ 0`.
    pub fn linear(c: SparseRow, d: f64, tag: ConstraintTag) -> Self {
        SocConstraint { a_rows: Vec::new(), b: Vec::new(), c, d, tag }
    }

    /// `‖A x + b‖ ≤ d`.
    pub fn norm_bound(a_rows: Vec<SparseRow>, b: Vec<f64>, d: f64, tag: ConstraintTag) -> Self {
        SocConstraint { a_rows, b, c: Vec::new(), d, tag }
    }

    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.a_rows
            .iter()
            .zip(&self.b)
            .map(|(r, b)| {
                let v = dot_row(r, x) + b;
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn rhs(&self, x: &[f64]) -> f64 {
        dot_row(&self.c, x) + self.d
    }

    /// Positive when violated.
    pub fn violation(&self, x: &[f64]) -> f64 {
        self.lhs(x) - self.rhs(x)
    }

    /// Scale used by the feasibility tolerance: `1 + ‖b‖ + |d|`.
    pub fn scale(&self) -> f64 {
        1.0 + self.b.iter().map(|v| v * v).sum::<f64>().sqrt() + self.d.abs()
    }
}

#[inline]
pub(crate) fn dot_row(row: &[(usize, f64)], x: &[f64]) -> f64 {
    row.iter().map(|&(j, v)| v * x[j]).sum()
}

/// Linear equality `rᵀx = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equality {
    pub row: SparseRow,
    pub rhs: f64,
    pub tag: ConstraintTag,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConeProgram {
    n_vars: usize,
    /// Upper-triangle triplets of `P` (duplicates are summed).
    p: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
    constant: f64,
    equalities: Vec<Equality>,
    cones: Vec<SocConstraint>,
}

impl ConeProgram {
    pub fn new(n_vars: usize) -> Self {
        ConeProgram { n_vars, q: vec![0.0; n_vars], ..Default::default() }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn equalities(&self) -> &[Equality] {
        &self.equalities
    }

    pub fn cones(&self) -> &[SocConstraint] {
        &self.cones
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.q
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Adds `v` to `P[i][j]` and `P[j][i]` (once when `i == j`).
    pub fn add_quadratic(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        self.p.push((lo, hi, v));
    }

    pub fn add_linear(&mut self, i: usize, v: f64) {
        self.q[i] += v;
    }

    pub fn add_constant(&mut self, v: f64) {
        self.constant += v;
    }

    /// Adds `weight · ‖M x + o‖²` where `M` has the given rows.
    pub fn add_squared_norm(&mut self, rows: &[SparseRow], offsets: &[f64], weight: f64) {
        for (row, &o) in rows.iter().zip(offsets) {
            for (a, &(i, vi)) in row.iter().enumerate() {
                self.q[i] += 2.0 * weight * vi * o;
                for &(j, vj) in &row[a..] {
                    let v = 2.0 * weight * vi * vj;
                    if i == j {
                        self.add_quadratic(i, i, v);
                    } else {
                        self.add_quadratic(i, j, v);
                    }
                }
            }
            self.constant += weight * o * o;
        }
    }

    pub fn add_equality(&mut self, row: SparseRow, rhs: f64, tag: ConstraintTag) {
        self.equalities.push(Equality { row, rhs, tag });
    }

    pub fn add_cone(&mut self, cone: SocConstraint) {
        self.cones.push(cone);
    }

    /// Applies `f` to every cone constraint in place.
    pub fn map_cones<F: FnMut(&mut SocConstraint)>(&mut self, f: F) {
        self.cones.iter_mut().for_each(f);
    }

    /// Objective value `½ xᵀP x + qᵀx + const`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v = self.constant + self.q.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        for &(i, j, p) in &self.p {
            if i == j {
                v += 0.5 * p * x[i] * x[i];
            } else {
                v += p * x[i] * x[j];
            }
        }
        v
    }

    /// Largest scaled violation over all constraints:
    /// equalities by `|rᵀx − h| / (1 + |h|)`, cones by
    /// `max(0, lhs − rhs) / scale`.
    pub fn max_scaled_violation(&self, x: &[f64]) -> f64 {
        let eq = self.equalities.iter().map(|e| (dot_row(&e.row, x) - e.rhs).abs() / (1.0 + e.rhs.abs()));
        let cones = self.cones.iter().map(|c| c.violation(x).max(0.0) / c.scale());
        eq.chain(cones).fold(0.0, f64::max)
    }

    /// Checks indices, finiteness, cone shapes and that `P` is PSD.
    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n_vars;
        let check = |j: usize, context: &'static str| {
            if j >= n {
                Err(SolverError::Dimension { index: j, n_vars: n, context })
            } else {
                Ok(())
            }
        };
        for &(i, j, v) in &self.p {
            check(i, "quadratic term")?;
            check(j, "quadratic term")?;
            if !v.is_finite() {
                return Err(SolverError::NonFinite("quadratic term"));
            }
        }
        if self.q.iter().any(|v| !v.is_finite()) || !self.constant.is_finite() {
            return Err(SolverError::NonFinite("linear term"));
        }
        for e in &self.equalities {
            for &(j, v) in &e.row {
                check(j, "equality")?;
                if !v.is_finite() {
                    return Err(SolverError::NonFinite("equality"));
                }
            }
            if !e.rhs.is_finite() {
                return Err(SolverError::NonFinite("equality"));
            }
        }
        for (k, c) in self.cones.iter().enumerate() {
            if c.a_rows.len() != c.b.len() {
                return Err(SolverError::ConeShape { cone: k, rows: c.a_rows.len(), offsets: c.b.len() });
            }
            for &(j, v) in c.a_rows.iter().flatten().chain(c.c.iter()) {
                check(j, "cone")?;
                if !v.is_finite() {
                    return Err(SolverError::NonFinite("cone"));
                }
            }
            if c.b.iter().any(|v| !v.is_finite()) || !c.d.is_finite() {
                return Err(SolverError::NonFinite("cone"));
            }
        }
        self.check_psd()
    }

    fn check_psd(&self) -> Result<(), SolverError> {
        if self.p.is_empty() {
            return Ok(());
        }
        let n = self.n_vars;
        let mut m = Skyline::from_pattern(n, self.p.iter().map(|&(i, j, _)| (i, j)));
        let mut diag_max = 0.0f64;
        for &(i, j, v) in &self.p {
            m.add(i, j, v);
        }
        for i in 0..n {
            diag_max = diag_max.max(m.get(i, i).abs());
        }
        let shift = 1e-9 * (1.0 + diag_max);
        for i in 0..n {
            m.add(i, i, shift);
        }
        m.factor().map_err(|e| SolverError::NotPsd { row: e.row, pivot: e.pivot })
    }

    /// Plain-text coefficient listing for offline inspection.
    pub fn write_listing<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "# cone program: {} variables", self.n_vars);
        let _ = writeln!(s, "constant {:.17e}", self.constant);
        for (i, v) in self.q.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(s, "q {i} {v:.17e}");
            }
        }
        for &(i, j, v) in &self.p {
            let _ = writeln!(s, "P {i} {j} {v:.17e}");
        }
        let fmt_row = |row: &SparseRow| row.iter().map(|(j, v)| format!("{j}:{v:.17e}")).collect::<Vec<_>>().join(" ");
        for e in &self.equalities {
            let _ = writeln!(s, "eq {}[{}] {} = {:.17e}", e.tag.kind, e.tag.index, fmt_row(&e.row), e.rhs);
        }
        for c in &self.cones {
            let _ = writeln!(s, "soc {}[{}] dim {}", c.tag.kind, c.tag.index, c.a_rows.len() + 1);
            let _ = writeln!(s, "  t {} + {:.17e}", fmt_row(&c.c), c.d);
            for (r, b) in c.a_rows.iter().zip(&c.b) {
                let _ = writeln!(s, "  v {} + {:.17e}", fmt_row(r), b);
            }
        }
        out.write_all(s.as_bytes())
    }
}

/// Solution method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Primal-dual interior point (Mehrotra, Nesterov-Todd scaling).
    #[default]
    InteriorPoint,
    /// Operator splitting with closed-form cone projections.
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative feasibility tolerance.
    pub feas_tol: f64,
    /// Relative optimality (dual residual) tolerance.
    pub opt_tol: f64,
    /// Iteration cap (the interior-point method never runs more than 200).
    pub max_iters: usize,
    /// Wall-clock budget in seconds.
    pub time_limit: Option<f64>,
    #[serde(default)]
    pub method: Method,
    /// Refine optimal points of quadratic programs on their active set.
    #[serde(default = "default_polish")]
    pub polish: bool,
}

fn default_polish() -> bool {
    true
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { feas_tol: 1e-6, opt_tol: 1e-6, max_iters: 100_000, time_limit: None, method: Method::default(), polish: true }
    }
}

impl SolverSettings {
    pub fn time_limit(&self) -> Option<Duration> {
        self.time_limit.map(Duration::from_secs_f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    InfeasibleDetected,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    pub objective_value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// Dual multipliers: one per equality, then one vector per cone
    /// (`[t, v...]`, an element of the cone itself).
    pub equality_duals: Vec<f64>,
    pub cone_duals: Vec<Vec<f64>>,
    /// `(iteration, max relative residual)` at each convergence check.
    pub residual_history: Vec<(usize, f64)>,
    /// Constraints carrying the largest multipliers (diagnostics).
    pub binding: Vec<ConstraintTag>,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solves `program`. Dimension or data errors are returned as `Err`;
/// infeasibility and iteration/time limits are reported through
/// [`Solution::status`].
pub fn solve(program: &ConeProgram, settings: &SolverSettings, warm_start: Option<&[f64]>) -> Result<Solution, SolverError> {
    program.validate()?;
    let warm_start = warm_start.filter(|w| {
        let ok = w.len() == program.n_vars && w.iter().all(|v| v.is_finite());
        if !ok {
            log::debug!("ignoring warm start of length {} for {} variables", w.len(), program.n_vars);
        }
        ok
    });
    let mut sol = match settings.method {
        Method::InteriorPoint => ipm::Ipm::new(program).run(settings, warm_start),
        Method::Admm => admm::Admm::new(program).run(settings, warm_start),
    };
    if sol.is_optimal() && settings.polish {
        if let Some(x) = polish::polish(program, &sol.x, &sol.cone_duals, settings) {
            sol.objective_value = program.objective(&x);
            sol.x = x;
        }
    }
    Ok(sol)
}

#[cfg(test)]
mod tests;
