//! Primal-dual interior-point method: Mehrotra predictor-corrector steps
//! with Nesterov-Todd scaling of the second-order cones.
//!
//! The stacked rows split into equalities `A x = b` and conic rows
//! `G x + s = h`, `s ∈ K`. Each Newton system is reduced to
//!
//! ```text
//! [ P + Gᵀ W⁻² G   Aᵀ ] [dx]
//! [ A               0  ] [dy]
//! ```
//!
//! which is quasi-definite after a small regularization and factored as
//! `L D Lᵀ` in an envelope ordering that interleaves each equality with the
//! last variable it touches.

use std::ops::Deref;
use std::time::Instant;

use super::skyline::Skyline;
use super::stack::{inf_norm, Stacked};
use super::{ConeProgram, Solution, SolveStatus, SolverSettings};

const RUIZ_ITERS: usize = 10;
const MAX_ITERS: usize = 200;
const STEP_FRACTION: f64 = 0.99;
const REG: f64 = 1e-9;
const REFINE_STEPS: usize = 10;
const DIVERGENCE: f64 = 1e8;
const CERT_TOL: f64 = 1e-7;

/// One cone block of the conic rows, with its dense row slice over the
/// variables it touches.
struct ConeBlk {
    /// First conic row (offset into `s`, `z`, `h`).
    start: usize,
    dim: usize,
    vars: Vec<usize>,
    /// `dim × vars.len()`, row-major.
    g: Vec<f64>,
}

/// Nesterov-Todd scaling of one block.
#[derive(Clone)]
enum Nt {
    /// `W = diag(w)` for the nonnegative ray (dimension 1).
    Ray(f64),
    /// `W = β H(w̄)` with `w̄ᵀ J w̄ = 1`.
    Soc { beta: f64, w: Vec<f64> },
}

/// `vᵀ J v`, factored to avoid cancellation near the cone boundary.
#[inline]
fn jdet(v: &[f64]) -> f64 {
    let nv = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    (v[0] - nv) * (v[0] + nv)
}

/// Smallest eigenvalue `v₀ − ‖v₁‖` (or `v` itself for a ray).
fn lambda_min(v: &[f64]) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[0] - v[1..].iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl Nt {
    fn new(s: &[f64], z: &[f64]) -> Nt {
        if s.len() == 1 {
            return Nt::Ray((s[0] / z[0]).sqrt());
        }
        let (ds, dz) = (jdet(s).max(f64::MIN_POSITIVE).sqrt(), jdet(z).max(f64::MIN_POSITIVE).sqrt());
        let sb: Vec<f64> = s.iter().map(|v| v / ds).collect();
        let zb: Vec<f64> = z.iter().map(|v| v / dz).collect();
        let dot: f64 = sb.iter().zip(&zb).map(|(a, b)| a * b).sum();
        let gamma = ((1.0 + dot) / 2.0).sqrt();
        let mut w: Vec<f64> = sb.iter().zip(&zb).map(|(a, b)| (a - b) / (2.0 * gamma)).collect();
        w[0] = (sb[0] + zb[0]) / (2.0 * gamma);
        Nt::Soc { beta: (ds / dz).sqrt(), w }
    }

    fn identity(dim: usize) -> Nt {
        if dim == 1 {
            Nt::Ray(1.0)
        } else {
            let mut w = vec![0.0; dim];
            w[0] = 1.0;
            Nt::Soc { beta: 1.0, w }
        }
    }

    /// `W v` or `W⁻¹ v`.
    fn apply(&self, v: &[f64], out: &mut [f64], inverse: bool) {
        match self {
            Nt::Ray(w) => out[0] = if inverse { v[0] / w } else { v[0] * w },
            Nt::Soc { beta, w } => {
                let sgn = if inverse { -1.0 } else { 1.0 };
                let scale = if inverse { 1.0 / beta } else { *beta };
                let w1v1: f64 = w[1..].iter().zip(&v[1..]).map(|(a, b)| a * b).sum();
                out[0] = scale * (w[0] * v[0] + sgn * w1v1);
                let coef = w1v1 / (1.0 + w[0]) + sgn * v[0];
                for i in 1..v.len() {
                    out[i] = scale * (v[i] + coef * w[i]);
                }
            }
        }
    }

    /// Dense `W⁻²`, row-major.
    #[cfg(test)]
    fn inv_sq(&self, out: &mut Vec<f64>) {
        out.clear();
        match self {
            Nt::Ray(w) => out.push(1.0 / (w * w)),
            Nt::Soc { beta, w } => {
                let p = w.len();
                let jw: Vec<f64> = w.iter().enumerate().map(|(i, v)| if i == 0 { *v } else { -v }).collect();
                let f = 1.0 / (beta * beta);
                for i in 0..p {
                    for j in 0..p {
                        let jij = if i != j {
                            0.0
                        } else if i == 0 {
                            1.0
                        } else {
                            -1.0
                        };
                        out.push(f * (2.0 * jw[i] * jw[j] - jij));
                    }
                }
            }
        }
    }

    /// `W² v`.
    #[cfg(test)]
    fn sq_apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Nt::Ray(w) => out[0] = w * w * v[0],
            Nt::Soc { beta, w } => {
                let wv: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
                let f = beta * beta;
                out[0] = f * (2.0 * w[0] * wv - v[0]);
                for i in 1..v.len() {
                    out[i] = f * (2.0 * w[i] * wv + v[i]);
                }
            }
        }
    }
}

/// Jordan product `u ∘ v`.
fn jprod(u: &[f64], v: &[f64], out: &mut [f64]) {
    if u.len() == 1 {
        out[0] = u[0] * v[0];
        return;
    }
    out[0] = u.iter().zip(v).map(|(a, b)| a * b).sum();
    for i in 1..u.len() {
        out[i] = u[0] * v[i] + v[0] * u[i];
    }
}

/// Solves `l ∘ u = d` for `u`.
fn jdiv(l: &[f64], d: &[f64], out: &mut [f64]) {
    if l.len() == 1 {
        out[0] = d[0] / l[0];
        return;
    }
    let l1d1: f64 = l[1..].iter().zip(&d[1..]).map(|(a, b)| a * b).sum();
    let u0 = (l[0] * d[0] - l1d1) / jdet(l);
    out[0] = u0;
    for i in 1..l.len() {
        out[i] = (d[i] - u0 * l[i]) / l[0];
    }
}

/// Largest `α ≥ 0` keeping `x + α d` in the cone (`∞` if unbounded).
fn max_step(x: &[f64], d: &[f64]) -> f64 {
    if x.len() == 1 {
        return if d[0] < 0.0 { -x[0] / d[0] } else { f64::INFINITY };
    }
    let a = jdet(d);
    let b = x[0] * d[0] - x[1..].iter().zip(&d[1..]).map(|(p, q)| p * q).sum::<f64>();
    let c = jdet(x).max(0.0);
    let disc = b * b - a * c;
    let mut alpha = f64::INFINITY;
    if a < 0.0 || (b < 0.0 && disc >= 0.0) {
        alpha = c / (-b + disc.max(0.0).sqrt());
    }
    if d[0] < 0.0 {
        alpha = alpha.min(-x[0] / d[0]);
    }
    alpha.max(0.0)
}

pub(super) struct Ipm<'a> {
    program: &'a ConeProgram,
    st: Stacked,
    blks: Vec<ConeBlk>,
    /// KKT position of each variable and of each equality.
    pos_x: Vec<usize>,
    pos_y: Vec<usize>,
    pattern: Skyline,
}

impl Deref for Ipm<'_> {
    type Target = Stacked;
    fn deref(&self) -> &Stacked {
        &self.st
    }
}

/// Newton direction.
struct Dir {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

impl<'a> Ipm<'a> {
    pub(super) fn new(program: &'a ConeProgram) -> Self {
        let st = Stacked::new(program, RUIZ_ITERS);
        let (n, ne) = (st.n, st.n_eq);
        let mut blks = Vec::new();
        for blk in st.blocks.iter().filter(|b| !b.zero) {
            let mut vars: Vec<usize> = (blk.start..blk.start + blk.len).flat_map(|i| st.a.row(i).map(|(j, _)| j)).collect();
            vars.sort_unstable();
            vars.dedup();
            let mut g = vec![0.0; blk.len * vars.len()];
            for (r, i) in (blk.start..blk.start + blk.len).enumerate() {
                for (j, v) in st.a.row(i) {
                    let c = vars.binary_search(&j).expect("variable collected above");
                    g[r * vars.len() + c] += v;
                }
            }
            blks.push(ConeBlk { start: blk.start - ne, dim: blk.len, vars, g });
        }

        // place each equality right after the last variable it touches
        let mut last_var: Vec<(usize, usize)> = (0..ne).map(|i| (st.a.row(i).map(|(j, _)| j).max().unwrap_or(0), i)).collect();
        last_var.sort_unstable();
        let mut pos_x = vec![0; n];
        let mut pos_y = vec![0; ne];
        let mut next = 0;
        let mut it = last_var.iter().peekable();
        for (j, px) in pos_x.iter_mut().enumerate() {
            *px = next;
            next += 1;
            while let Some(&&(lv, i)) = it.peek() {
                if lv != j {
                    break;
                }
                pos_y[i] = next;
                next += 1;
                it.next();
            }
        }
        for &(_, i) in it {
            pos_y[i] = next;
            next += 1;
        }

        let mut pairs: Vec<(usize, usize)> = st.p.iter().map(|&(i, j, _)| (pos_x[i], pos_x[j])).collect();
        for b in &blks {
            for &u in &b.vars {
                for &v in &b.vars {
                    pairs.push((pos_x[u], pos_x[v]));
                }
            }
        }
        for i in 0..ne {
            for (j, _) in st.a.row(i) {
                pairs.push((pos_y[i], pos_x[j]));
            }
        }
        let pattern = Skyline::from_pattern(n + ne, pairs);
        Ipm { program, st, blks, pos_x, pos_y, pattern }
    }

    fn g_mul(&self, x: &[f64], out: &mut [f64]) {
        let ne = self.n_eq;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.a.row(ne + i).map(|(j, v)| v * x[j]).sum();
        }
    }

    fn g_t_mul(&self, z: &[f64], out: &mut [f64]) {
        let ne = self.n_eq;
        for (i, &zi) in z.iter().enumerate() {
            if zi != 0.0 {
                for (j, v) in self.a.row(ne + i) {
                    out[j] += v * zi;
                }
            }
        }
    }

    fn eq_mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.a.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    fn eq_t_mul(&self, y: &[f64], out: &mut [f64]) {
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                for (j, v) in self.a.row(i) {
                    out[j] += v * yi;
                }
            }
        }
    }

    /// Per-block dense `W⁻¹ G`, same layout as [`ConeBlk::g`].
    fn scaled_blocks(&self, nt: &[Nt]) -> Vec<Vec<f64>> {
        let mut col = Vec::new();
        let mut out = Vec::new();
        self.blks
            .iter()
            .zip(nt)
            .map(|(b, w)| {
                let (d, nv) = (b.dim, b.vars.len());
                col.resize(d, 0.0);
                out.resize(d, 0.0);
                let mut gt = vec![0.0; d * nv];
                for u in 0..nv {
                    for r in 0..d {
                        col[r] = b.g[r * nv + u];
                    }
                    w.apply(&col, &mut out, true);
                    for r in 0..d {
                        gt[r * nv + u] = out[r];
                    }
                }
                gt
            })
            .collect()
    }

    /// Assembles `[P + G̃ᵀG̃, Aᵀ; A, 0]` into `k`.
    fn assemble(&self, gts: &[Vec<f64>], k: &mut Skyline) {
        k.clear();
        for &(i, j, v) in &self.p {
            k.add(self.pos_x[i], self.pos_x[j], v);
        }
        for (b, gt) in self.blks.iter().zip(gts) {
            let nv = b.vars.len();
            for u in 0..nv {
                for v in 0..=u {
                    let val: f64 = (0..b.dim).map(|r| gt[r * nv + u] * gt[r * nv + v]).sum();
                    if val != 0.0 {
                        k.add(self.pos_x[b.vars[u]], self.pos_x[b.vars[v]], val);
                    }
                }
            }
        }
        for i in 0..self.n_eq {
            for (j, v) in self.a.row(i) {
                k.add(self.pos_y[i], self.pos_x[j], v);
            }
        }
    }

    /// `out = G̃ x`.
    fn gt_mul(&self, gts: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
        for (b, gt) in self.blks.iter().zip(gts) {
            let nv = b.vars.len();
            for r in 0..b.dim {
                out[b.start + r] = (0..nv).map(|c| gt[r * nv + c] * x[b.vars[c]]).sum();
            }
        }
    }

    /// `out += G̃ᵀ z`.
    fn gt_t_mul(&self, gts: &[Vec<f64>], z: &[f64], out: &mut [f64]) {
        for (b, gt) in self.blks.iter().zip(gts) {
            let nv = b.vars.len();
            for c in 0..nv {
                out[b.vars[c]] += (0..b.dim).map(|r| gt[r * nv + c] * z[b.start + r]).sum::<f64>();
            }
        }
    }

    fn regularize(&self, k: &mut Skyline, reg: f64) {
        for &p in &self.pos_x {
            k.add(p, p, reg);
        }
        for &p in &self.pos_y {
            k.add(p, p, -reg);
        }
    }

    /// Solves the reduced system once.
    fn solve_reduced(&self, factor: &Skyline, rhs_x: &[f64], ry: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, ne) = (self.n, self.n_eq);
        let mut rhs = vec![0.0; n + ne];
        for j in 0..n {
            rhs[self.pos_x[j]] = rhs_x[j];
        }
        for i in 0..ne {
            rhs[self.pos_y[i]] = ry[i];
        }
        factor.solve(&mut rhs);
        ((0..n).map(|j| rhs[self.pos_x[j]]).collect(), (0..ne).map(|i| rhs[self.pos_y[i]]).collect())
    }

    /// Solves the scaled system
    ///
    /// ```text
    /// [ P  Aᵀ  G̃ᵀ ] [dx]   [rx]
    /// [ A  0   0   ] [dy] = [ry]
    /// [ G̃  0  −I   ] [dẑ]   [rt]
    /// ```
    ///
    /// with `G̃ = W⁻¹ G`, `dẑ = W dz`, refining against the full system.
    fn solve_full(&self, gts: &[Vec<f64>], factor: &Skyline, rx: &[f64], ry: &[f64], rt: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, ne, mc) = (self.n, self.n_eq, self.m - self.n_eq);
        let once = |rx: &[f64], ry: &[f64], rt: &[f64]| {
            let mut rhs_x = rx.to_vec();
            self.gt_t_mul(gts, rt, &mut rhs_x);
            let (dx, dy) = self.solve_reduced(factor, &rhs_x, ry);
            let mut dz = vec![0.0; mc];
            self.gt_mul(gts, &dx, &mut dz);
            for i in 0..mc {
                dz[i] -= rt[i];
            }
            (dx, dy, dz)
        };
        let (mut dx, mut dy, mut dz) = once(rx, ry, rt);
        let scale = 1.0 + inf_norm(rx).max(inf_norm(ry)).max(inf_norm(rt));
        let mut e_x = vec![0.0; n];
        let mut e_y = vec![0.0; ne];
        let mut e_t = vec![0.0; mc];
        for _ in 0..REFINE_STEPS {
            self.p_mul(&dx, &mut e_x);
            self.eq_t_mul(&dy, &mut e_x);
            self.gt_t_mul(gts, &dz, &mut e_x);
            self.eq_mul(&dx, &mut e_y);
            self.gt_mul(gts, &dx, &mut e_t);
            let mut worst = 0.0f64;
            for j in 0..n {
                e_x[j] = rx[j] - e_x[j];
                worst = worst.max(e_x[j].abs());
            }
            for i in 0..ne {
                e_y[i] = ry[i] - e_y[i];
                worst = worst.max(e_y[i].abs());
            }
            for i in 0..mc {
                e_t[i] = rt[i] - (e_t[i] - dz[i]);
                worst = worst.max(e_t[i].abs());
            }
            if !(worst > 1e-15 * scale) {
                break;
            }
            let (cx, cy, cz) = once(&e_x, &e_y, &e_t);
            dx.iter_mut().zip(&cx).for_each(|(a, b)| *a += b);
            dy.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
            dz.iter_mut().zip(&cz).for_each(|(a, b)| *a += b);
        }
        (dx, dy, dz)
    }

    #[allow(clippy::too_many_arguments)]
    fn newton(&self, nt: &[Nt], gts: &[Vec<f64>], lambda: &[f64], factor: &Skyline, rx: &[f64], ry: &[f64], rz: &[f64], ds_rhs: &[f64]) -> Dir {
        let mc = self.m - self.n_eq;
        // λ ∘ (W⁻¹ds + W dz) = ds_rhs and G dx + ds = rz, scaled by W⁻¹
        let mut rt = vec![0.0; mc];
        let mut u = vec![0.0; 16];
        for (b, w) in self.blks.iter().zip(nt) {
            let r = b.start..b.start + b.dim;
            if u.len() < b.dim {
                u.resize(b.dim, 0.0);
            }
            jdiv(&lambda[r.clone()], &ds_rhs[r.clone()], &mut u[..b.dim]);
            w.apply(&rz[r.clone()], &mut rt[r.clone()], true);
            for i in 0..b.dim {
                rt[b.start + i] -= u[i];
            }
        }
        let (dx, dy, dzs) = self.solve_full(gts, factor, rx, ry, &rt);
        let mut dz = vec![0.0; mc];
        for (b, w) in self.blks.iter().zip(nt) {
            let r = b.start..b.start + b.dim;
            w.apply(&dzs[r.clone()], &mut dz[r], true);
        }
        let mut gdx = vec![0.0; mc];
        self.g_mul(&dx, &mut gdx);
        // from the linearized primal rows, so G x + s = h stays exact
        let ds: Vec<f64> = (0..mc).map(|i| rz[i] - gdx[i]).collect();
        Dir { x: dx, y: dy, z: dz, s: ds }
    }

    fn step_to_boundary(&self, v: &[f64], d: &[f64]) -> f64 {
        self.blks.iter().map(|b| max_step(&v[b.start..b.start + b.dim], &d[b.start..b.start + b.dim])).fold(f64::INFINITY, f64::min)
    }

    /// Shifts `v` along `e` until it is comfortably interior.
    fn push_interior(&self, v: &mut [f64]) {
        let worst = self.blks.iter().map(|b| -lambda_min(&v[b.start..b.start + b.dim])).fold(f64::NEG_INFINITY, f64::max);
        if worst >= -1e-8 * inf_norm(v).max(1.0) {
            for b in &self.blks {
                v[b.start] += 1.0 + worst;
            }
        }
    }

    fn factor(&self, gts: &[Vec<f64>]) -> Skyline {
        let mut k = self.pattern.clone();
        self.assemble(gts, &mut k);
        let mut reg = REG;
        loop {
            let mut f = k.clone();
            self.regularize(&mut f, reg);
            if f.factor_ldl().is_ok() || reg > 1.0 {
                return f;
            }
            reg *= 100.0;
        }
    }

    pub(super) fn run(&self, settings: &SolverSettings, warm: Option<&[f64]>) -> Solution {
        let started = Instant::now();
        let deadline = settings.time_limit();
        let (n, ne, mc) = (self.n, self.n_eq, self.m - self.n_eq);
        let beq = &self.b[..ne];
        let h = &self.b[ne..];
        let deg = self.blks.len().max(1) as f64;

        // initial point: least squares on the conic rows with W = I
        let nt0: Vec<Nt> = self.blks.iter().map(|b| Nt::identity(b.dim)).collect();
        let lambda0: Vec<f64> = self
            .blks
            .iter()
            .flat_map(|b| {
                let mut e = vec![0.0; b.dim];
                e[0] = 1.0;
                e
            })
            .collect();
        let gts0 = self.scaled_blocks(&nt0);
        let f0 = self.factor(&gts0);
        let minus_q: Vec<f64> = self.q.iter().map(|v| -v).collect();
        let init = self.newton(&nt0, &gts0, &lambda0, &f0, &minus_q, beq, h, &vec![0.0; mc]);
        let mut x = match warm {
            Some(w) => w.iter().zip(&self.d).map(|(v, d)| v / d).collect(),
            None => init.x,
        };
        let mut y = init.y;
        let mut gx = vec![0.0; mc];
        self.g_mul(&x, &mut gx);
        let mut s: Vec<f64> = (0..mc).map(|i| h[i] - gx[i]).collect();
        let mut z = init.z;
        self.push_interior(&mut s);
        self.push_interior(&mut z);

        let mut history = Vec::new();
        let mut status = SolveStatus::MaxIters;
        let mut primal_res = f64::INFINITY;
        let mut dual_res = f64::INFINITY;
        let mut best_primal = f64::INFINITY;
        let mut best_primal_at = 0;
        let mut iterations = 0;
        let mut certificate: Option<Vec<f64>> = None;
        let max_iters = settings.max_iters.clamp(1, MAX_ITERS);

        let mut px = vec![0.0; n];
        let mut rx = vec![0.0; n];
        let mut ry = vec![0.0; ne];
        let mut rz = vec![0.0; mc];
        let mut ax = vec![0.0; ne];
        for it in 0..=max_iters {
            // residuals, reported in the unscaled problem
            self.p_mul(&x, &mut px);
            self.eq_mul(&x, &mut ax);
            self.g_mul(&x, &mut gx);
            let mut aty = vec![0.0; n];
            self.eq_t_mul(&y, &mut aty);
            self.g_t_mul(&z, &mut aty);
            for j in 0..n {
                rx[j] = px[j] + self.q[j] + aty[j];
            }
            for i in 0..ne {
                ry[i] = ax[i] - beq[i];
            }
            for i in 0..mc {
                rz[i] = gx[i] + s[i] - h[i];
            }
            let e = &self.e;
            let mut rp = 0.0f64;
            let mut p_scale = 0.0f64;
            for i in 0..ne {
                rp = rp.max((ry[i] / e[i]).abs());
                p_scale = p_scale.max((ax[i] / e[i]).abs()).max((beq[i] / e[i]).abs());
            }
            for i in 0..mc {
                let ei = e[ne + i];
                rp = rp.max((rz[i] / ei).abs());
                p_scale = p_scale.max((gx[i] / ei).abs()).max((s[i] / ei).abs()).max((h[i] / ei).abs());
            }
            let mut rd = 0.0f64;
            let mut d_scale = 0.0f64;
            let mut cert_res = 0.0f64;
            for j in 0..n {
                let sc = 1.0 / (self.c * self.d[j]);
                rd = rd.max((rx[j] * sc).abs());
                d_scale = d_scale.max((px[j] * sc).abs()).max((aty[j] * sc).abs()).max((self.q[j] * sc).abs());
                cert_res = cert_res.max((aty[j] * sc).abs());
            }
            let p_scale = 1.0 + p_scale;
            let d_scale = 1.0 + d_scale;
            primal_res = rp;
            dual_res = rd;
            let xpx: f64 = x.iter().zip(&px).map(|(a, b)| a * b).sum();
            let qx: f64 = x.iter().zip(&self.q).map(|(a, b)| a * b).sum();
            let by: f64 = beq.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() + h.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            let pobj = (0.5 * xpx + qx) / self.c;
            let dobj = (-0.5 * xpx - by) / self.c;
            let sz: f64 = s.iter().zip(&z).map(|(a, b)| a * b).sum();
            let gap = (pobj - dobj).abs().max(sz / self.c) / (1.0 + pobj.abs().min(dobj.abs()));
            history.push((it, (rp / p_scale).max(rd / d_scale).max(gap)));

            if rp <= settings.feas_tol * p_scale && rd <= settings.opt_tol * d_scale && gap <= settings.opt_tol {
                let xu = self.unscale_x(&x);
                if self.program.max_scaled_violation(&xu) <= settings.feas_tol {
                    status = SolveStatus::Optimal;
                    break;
                }
            }

            // Farkas certificate: Aᵀy + Gᵀz ≈ 0 with bᵀy + hᵀz < 0
            let primal_stuck = rp > settings.feas_tol * p_scale;
            let t = -by / self.c;
            if primal_stuck && t > 0.0 && cert_res <= CERT_TOL * t {
                status = SolveStatus::InfeasibleDetected;
                certificate = Some(self.stacked_duals(&y, &z));
                break;
            }
            if rp < 0.99 * best_primal {
                best_primal = rp;
                best_primal_at = it;
            }
            let dual_norm = self.stacked_duals(&y, &z).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if primal_stuck && dual_norm > DIVERGENCE && it - best_primal_at >= 20 {
                status = SolveStatus::InfeasibleDetected;
                certificate = Some(self.stacked_duals(&y, &z));
                break;
            }
            if it == max_iters {
                break;
            }
            if let Some(limit) = deadline {
                if started.elapsed() >= limit {
                    status = SolveStatus::TimeLimit;
                    break;
                }
            }
            iterations = it + 1;

            // scaling point
            let nt: Vec<Nt> = self.blks.iter().map(|b| Nt::new(&s[b.start..b.start + b.dim], &z[b.start..b.start + b.dim])).collect();
            let mut lambda = vec![0.0; mc];
            for (b, w) in self.blks.iter().zip(&nt) {
                let r = b.start..b.start + b.dim;
                w.apply(&z[r.clone()], &mut lambda[r], false);
            }
            let gts = self.scaled_blocks(&nt);
            let f = self.factor(&gts);
            let mu = sz / deg;
            let nrx: Vec<f64> = rx.iter().map(|v| -v).collect();
            let nry: Vec<f64> = ry.iter().map(|v| -v).collect();
            let nrz: Vec<f64> = rz.iter().map(|v| -v).collect();

            // predictor
            let mut ll = vec![0.0; mc];
            for b in &self.blks {
                let r = b.start..b.start + b.dim;
                jprod(&lambda[r.clone()], &lambda[r.clone()], &mut ll[r]);
            }
            let aff_rhs: Vec<f64> = ll.iter().map(|v| -v).collect();
            let aff = self.newton(&nt, &gts, &lambda, &f, &nrx, &nry, &nrz, &aff_rhs);
            let alpha_aff = self.step_to_boundary(&s, &aff.s).min(self.step_to_boundary(&z, &aff.z)).min(1.0);
            let sz_aff: f64 = (0..mc).map(|i| (s[i] + alpha_aff * aff.s[i]) * (z[i] + alpha_aff * aff.z[i])).sum();
            let sigma = (sz_aff / sz).clamp(0.0, 1.0).powi(3);

            // corrector
            let mut comb = vec![0.0; mc];
            let mut ws = vec![0.0; 16];
            let mut wz = vec![0.0; 16];
            let mut cross = vec![0.0; 16];
            for (b, w) in self.blks.iter().zip(&nt) {
                let r = b.start..b.start + b.dim;
                if ws.len() < b.dim {
                    ws.resize(b.dim, 0.0);
                    wz.resize(b.dim, 0.0);
                    cross.resize(b.dim, 0.0);
                }
                w.apply(&aff.s[r.clone()], &mut ws[..b.dim], true);
                w.apply(&aff.z[r.clone()], &mut wz[..b.dim], false);
                jprod(&ws[..b.dim], &wz[..b.dim], &mut cross[..b.dim]);
                for i in 0..b.dim {
                    comb[b.start + i] = -ll[b.start + i] - cross[i];
                }
                comb[b.start] += sigma * mu;
            }
            let dir = self.newton(&nt, &gts, &lambda, &f, &nrx, &nry, &nrz, &comb);
            let alpha = (STEP_FRACTION * self.step_to_boundary(&s, &dir.s).min(self.step_to_boundary(&z, &dir.z))).min(1.0);
            let finite = dir.x.iter().chain(&dir.y).chain(&dir.z).chain(&dir.s).all(|v| v.is_finite());
            if !finite || !(alpha > 0.0) {
                break;
            }
            for j in 0..n {
                x[j] += alpha * dir.x[j];
            }
            for i in 0..ne {
                y[i] += alpha * dir.y[i];
            }
            for i in 0..mc {
                s[i] += alpha * dir.s[i];
                z[i] += alpha * dir.z[i];
            }
        }

        let xu = self.unscale_x(&x);
        let yu = self.unscale_y(&self.stacked_duals(&y, &z));
        let binding = match &certificate {
            Some(c) => self.binding(self.program, &self.unscale_y(c)),
            None => self.binding(self.program, &yu),
        };
        let equality_duals = yu[..ne].to_vec();
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

    /// `(y, z)` in stacked row order.
    fn stacked_duals(&self, y: &[f64], z: &[f64]) -> Vec<f64> {
        y.iter().chain(z).copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nt_scaling_maps_z_and_s_to_the_same_point() {
        let s = [3.0, 1.0, -0.5];
        let z = [2.0, -0.3, 1.2];
        let w = Nt::new(&s, &z);
        let mut wz = [0.0; 3];
        let mut wis = [0.0; 3];
        w.apply(&z, &mut wz, false);
        w.apply(&s, &mut wis, true);
        for i in 0..3 {
            assert!((wz[i] - wis[i]).abs() < 1e-12, "{wz:?} {wis:?}");
        }
        // W⁻² agrees with applying W⁻¹ twice
        let mut dense = Vec::new();
        w.inv_sq(&mut dense);
        let v = [0.7, -1.1, 0.4];
        let mut once = [0.0; 3];
        let mut twice = [0.0; 3];
        w.apply(&v, &mut once, true);
        w.apply(&once, &mut twice, true);
        for i in 0..3 {
            let d: f64 = (0..3).map(|j| dense[i * 3 + j] * v[j]).sum();
            assert!((d - twice[i]).abs() < 1e-12);
        }
        let mut sq = [0.0; 3];
        w.sq_apply(&twice, &mut sq);
        for i in 0..3 {
            assert!((sq[i] - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn jordan_division_inverts_product() {
        let l = [2.0, 0.5, -1.0];
        let u = [0.3, 1.5, 2.0];
        let mut d = [0.0; 3];
        jprod(&l, &u, &mut d);
        let mut back = [0.0; 3];
        jdiv(&l, &d, &mut back);
        for i in 0..3 {
            assert!((back[i] - u[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn step_to_cone_boundary() {
        assert_eq!(max_step(&[1.0], &[-2.0]), 0.5);
        assert_eq!(max_step(&[1.0], &[2.0]), f64::INFINITY);
        // (1, 0) + α(0, 1) leaves the cone at α = 1
        assert!((max_step(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(max_step(&[1.0, 0.0], &[1.0, 0.5]), f64::INFINITY);
        // (2, 1) + α(-1, 0): boundary when 2 − α = 1
        assert!((max_step(&[2.0, 1.0], &[-1.0, 0.0]) - 1.0).abs() < 1e-12);
    }
}
