//! Operator-splitting iteration (ADMM over the cone constraints).
//!
//! Each iteration solves one linear system with the pre-factorized matrix
//! `P + σI + Aᵀ diag(ρ) A` and projects onto the cones in closed form.

use std::ops::Deref;
use std::time::Instant;

use super::skyline::Skyline;
use super::stack::{inf_norm, Stacked};
use super::{ConeProgram, Solution, SolveStatus, SolverSettings};

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const RHO_INIT: f64 = 0.1;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 50;
const RUIZ_ITERS: usize = 15;
const DIVERGENCE: f64 = 1e8;
const EPS_PINF: f64 = 1e-5;

pub(super) struct Admm<'a> {
    program: &'a ConeProgram,
    st: Stacked,
}

impl Deref for Admm<'_> {
    type Target = Stacked;
    fn deref(&self) -> &Stacked {
        &self.st
    }
}

fn project_soc(v: &mut [f64]) {
    let t = v[0];
    let nv = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    if nv <= t {
        return;
    }
    if nv <= -t {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let a = 0.5 * (t + nv);
    v[0] = a;
    let s = a / nv;
    v[1..].iter_mut().for_each(|x| *x *= s);
}

impl<'a> Admm<'a> {
    pub(super) fn new(program: &'a ConeProgram) -> Self {
        Admm { program, st: Stacked::new(program, RUIZ_ITERS) }
    }

    fn kkt_pattern(&self) -> Skyline {
        let mut pattern: Vec<(usize, usize)> = self.p.iter().map(|&(i, j, _)| (i, j)).collect();
        for i in 0..self.a.n_rows() {
            let cols: Vec<usize> = self.a.row(i).map(|(j, _)| j).collect();
            for (k, &ja) in cols.iter().enumerate() {
                for &jb in &cols[k + 1..] {
                    pattern.push((ja, jb));
                }
            }
        }
        Skyline::from_pattern(self.n, pattern)
    }

    fn assemble(&self, m: &mut Skyline, rho: &[f64]) {
        m.clear();
        for &(i, j, v) in &self.p {
            m.add(i, j, v);
        }
        for j in 0..self.n {
            m.add(j, j, SIGMA);
        }
        for (i, &r) in rho.iter().enumerate() {
            let row: Vec<(usize, f64)> = self.a.row(i).collect();
            for (k, &(ja, va)) in row.iter().enumerate() {
                m.add(ja, ja, r * va * va);
                for &(jb, vb) in &row[k + 1..] {
                    m.add(ja, jb, r * va * vb);
                }
            }
        }
    }

    fn rho_vector(&self, rho: f64) -> Vec<f64> {
        let mut v = vec![rho; self.m];
        for blk in &self.blocks {
            if blk.zero {
                v[blk.start..blk.start + blk.len].iter_mut().for_each(|r| *r = rho * RHO_EQ_FACTOR);
            }
        }
        v
    }

    fn project(&self, v: &mut [f64]) {
        for blk in &self.blocks {
            let s = &mut v[blk.start..blk.start + blk.len];
            if blk.zero {
                s.iter_mut().for_each(|x| *x = 0.0);
            } else if blk.len == 1 {
                s[0] = s[0].max(0.0);
            } else {
                project_soc(s);
            }
        }
    }

    pub(super) fn run(&self, settings: &SolverSettings, warm: Option<&[f64]>) -> Solution {
        let started = Instant::now();
        let deadline = settings.time_limit();
        let (n, m) = (self.n, self.m);

        let mut x: Vec<f64> = match warm {
            Some(w) => w.iter().zip(&self.d).map(|(v, d)| v / d).collect(),
            None => vec![0.0; n],
        };
        let mut ax = vec![0.0; m];
        self.a.mul(&x, &mut ax);
        let mut s: Vec<f64> = self.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        self.project(&mut s);
        let mut y = vec![0.0; m];
        let mut y_prev = vec![0.0; m];

        let mut rho = RHO_INIT;
        let mut rho_vec = self.rho_vector(rho);
        let mut kkt = self.kkt_pattern();
        self.assemble(&mut kkt, &rho_vec);
        kkt.factor().expect("P + σI + AᵀρA is positive definite");

        let mut rhs = vec![0.0; n];
        let mut tmp_m = vec![0.0; m];
        let mut s_rel = vec![0.0; m];
        let mut px = vec![0.0; n];
        let mut aty = vec![0.0; n];

        let mut history = Vec::new();
        let mut best_primal = f64::INFINITY;
        let mut best_primal_at = 0usize;
        let mut status = SolveStatus::MaxIters;
        let mut primal_res = f64::INFINITY;
        let mut dual_res = f64::INFINITY;
        let mut iterations = 0;
        let mut certificate: Option<Vec<f64>> = None;

        for k in 1..=settings.max_iters.max(1) {
            iterations = k;
            // x̃ step
            for i in 0..m {
                tmp_m[i] = rho_vec[i] * (self.b[i] - s[i]) + y[i];
            }
            self.a.mul_t(&tmp_m, &mut rhs);
            for j in 0..n {
                rhs[j] += SIGMA * x[j] - self.q[j];
            }
            kkt.solve(&mut rhs);
            self.a.mul(&rhs, &mut ax);
            for j in 0..n {
                x[j] = ALPHA * rhs[j] + (1.0 - ALPHA) * x[j];
            }
            for i in 0..m {
                s_rel[i] = ALPHA * (self.b[i] - ax[i]) + (1.0 - ALPHA) * s[i];
                tmp_m[i] = s_rel[i] + y[i] / rho_vec[i];
            }
            self.project(&mut tmp_m);
            std::mem::swap(&mut y, &mut y_prev);
            for i in 0..m {
                s[i] = tmp_m[i];
                y[i] = y_prev[i] + rho_vec[i] * (s_rel[i] - s[i]);
            }

            if k % CHECK_EVERY != 0 && k != settings.max_iters {
                continue;
            }

            // residuals in original units
            self.a.mul(&x, &mut ax);
            let mut rp = 0.0f64;
            let (mut n_ax, mut n_s, mut n_b) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..m {
                let e = self.e[i];
                rp = rp.max(((ax[i] + s[i] - self.b[i]) / e).abs());
                n_ax = n_ax.max((ax[i] / e).abs());
                n_s = n_s.max((s[i] / e).abs());
                n_b = n_b.max((self.b[i] / e).abs());
            }
            self.p_mul(&x, &mut px);
            self.a.mul_t(&y, &mut aty);
            let mut rd = 0.0f64;
            let (mut n_px, mut n_aty, mut n_q) = (0.0f64, 0.0f64, 0.0f64);
            for j in 0..n {
                let sc = 1.0 / (self.c * self.d[j]);
                rd = rd.max(((px[j] + self.q[j] - aty[j]) * sc).abs());
                n_px = n_px.max((px[j] * sc).abs());
                n_aty = n_aty.max((aty[j] * sc).abs());
                n_q = n_q.max((self.q[j] * sc).abs());
            }
            let p_scale = 1.0 + n_ax.max(n_s).max(n_b);
            let d_scale = 1.0 + n_px.max(n_aty).max(n_q);
            primal_res = rp;
            dual_res = rd;
            history.push((k, (rp / p_scale).max(rd / d_scale)));

            if rp <= settings.feas_tol * p_scale && rd <= settings.opt_tol * d_scale {
                let xu = self.unscale_x(&x);
                if self.program.max_scaled_violation(&xu) <= settings.feas_tol {
                    status = SolveStatus::Optimal;
                    break;
                }
            }

            // infeasibility certificate from the dual increment
            let dy: Vec<f64> = (0..m).map(|i| (y[i] - y_prev[i]) * self.e[i] / self.c).collect();
            let dy_norm = inf_norm(&dy);
            if dy_norm > 1e-12 {
                let dys: Vec<f64> = (0..m).map(|i| y[i] - y_prev[i]).collect();
                self.a.mul_t(&dys, &mut aty);
                let at_norm = (0..n).map(|j| (aty[j] / (self.c * self.d[j])).abs()).fold(0.0, f64::max);
                let b_dot: f64 = (0..m).map(|i| self.b[i] / self.e[i] * dy[i]).sum();
                if at_norm <= EPS_PINF * dy_norm && b_dot > EPS_PINF * dy_norm {
                    status = SolveStatus::InfeasibleDetected;
                    certificate = Some(dy);
                    break;
                }
            }
            // divergence heuristic: huge duals and a stalled primal residual
            if rp < 0.99 * best_primal {
                best_primal = rp;
                best_primal_at = k;
            }
            let y_norm = (0..m).map(|i| (y[i] * self.e[i] / self.c).abs()).fold(0.0, f64::max);
            if y_norm > DIVERGENCE && k - best_primal_at >= 20 * CHECK_EVERY {
                status = SolveStatus::InfeasibleDetected;
                certificate = Some(self.unscale_y(&y));
                break;
            }
            if let Some(limit) = deadline {
                if started.elapsed() >= limit {
                    status = SolveStatus::TimeLimit;
                    break;
                }
            }

            if k % ADAPT_EVERY == 0 {
                let pr = rp / p_scale;
                let dr = rd / d_scale;
                if pr > 0.0 && dr > 0.0 {
                    let ratio = (pr / dr).sqrt();
                    if !(0.2..=5.0).contains(&ratio) {
                        rho = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
                        rho_vec = self.rho_vector(rho);
                        self.assemble(&mut kkt, &rho_vec);
                        kkt.factor().expect("P + σI + AᵀρA is positive definite");
                    }
                }
            }
        }

        let xu = self.unscale_x(&x);
        // report multipliers in the cone rather than its polar
        let yu: Vec<f64> = self.unscale_y(&y).iter().map(|v| -v).collect();
        let binding = match &certificate {
            Some(c) => self.binding(self.program, c),
            None => self.binding(self.program, &yu),
        };
        let equality_duals = yu[..self.n_eq].to_vec();
        let cone_duals = self.blocks.iter().filter(|b| !b.zero).map(|b| yu[b.start..b.start + b.len].to_vec()).collect();
        Solution {
            objective_value: self.program.objective(&xu),
            x: xu,
            status,
            primal_residual: primal_res,
            dual_residual: dual_res,
            iterations,
            equality_duals,
            cone_duals,
            residual_history: history,
            binding,
        }
    }
}
