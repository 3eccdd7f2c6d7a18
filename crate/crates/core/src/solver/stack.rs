//! Constraint stacking and equilibration shared by the solver methods.
//!
//! Constraints are stacked as `A x + s = b`, `s ∈ K` with `K` a product of
//! the zero cone (equalities) and second-order cones (a one-dimensional
//! cone is the nonnegative ray). Scaling replaces `x = D x̂`, rows by `E`
//! and the cost by `c`.

use super::{ConeProgram, ConstraintTag};

#[derive(Debug, Clone, Copy)]
pub(super) struct Block {
    pub start: usize,
    pub len: usize,
    pub zero: bool,
}

pub(super) struct Csr {
    pub ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.ptr[i]..self.ptr[i + 1]).map(move |k| (self.col[k], self.val[k]))
    }

    pub fn n_rows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn mul_t(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                for (j, v) in self.row(i) {
                    out[j] += v * yi;
                }
            }
        }
    }
}

/// Scaled problem data.
pub(super) struct Stacked {
    pub n: usize,
    pub m: usize,
    /// Upper-triangle triplets of the scaled `P`, duplicates merged.
    pub p: Vec<(usize, usize, f64)>,
    pub q: Vec<f64>,
    pub a: Csr,
    pub b: Vec<f64>,
    pub blocks: Vec<Block>,
    pub n_eq: usize,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub c: f64,
}

pub(super) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn clamp_norm(v: f64) -> f64 {
    if v < 1e-4 {
        1.0
    } else {
        v.min(1e4)
    }
}

impl Stacked {
    pub(super) fn new(program: &ConeProgram, ruiz_iters: usize) -> Self {
        let n = program.n_vars();
        // stack rows
        let mut ptr = vec![0];
        let mut col = Vec::new();
        let mut val = Vec::new();
        let mut b = Vec::new();
        let mut blocks = Vec::new();
        let mut push_row = |row: &[(usize, f64)], sign: f64, rhs: f64, b: &mut Vec<f64>| {
            let mut entries: Vec<(usize, f64)> = row.to_vec();
            entries.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (j, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            for (j, v) in merged {
                if v != 0.0 {
                    col.push(j);
                    val.push(sign * v);
                }
            }
            ptr.push(col.len());
            b.push(rhs);
        };
        let n_eq = program.equalities().len();
        for eq in program.equalities() {
            push_row(&eq.row, 1.0, eq.rhs, &mut b);
        }
        if n_eq > 0 {
            blocks.push(Block { start: 0, len: n_eq, zero: true });
        }
        for cone in program.cones() {
            let start = b.len();
            push_row(&cone.c, -1.0, cone.d, &mut b);
            for (r, &off) in cone.a_rows.iter().zip(&cone.b) {
                push_row(r, -1.0, off, &mut b);
            }
            blocks.push(Block { start, len: b.len() - start, zero: false });
        }
        let m = b.len();
        let a = Csr { ptr, col, val };

        // merge duplicate P entries
        let mut p: Vec<(usize, usize, f64)> = program.p.clone();
        p.sort_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(p.len());
        for (i, j, v) in p.drain(..) {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|t| t.2 != 0.0);

        let mut s = Stacked { n, m, p: merged, q: program.linear_term().to_vec(), a, b, blocks, n_eq, d: vec![1.0; n], e: vec![1.0; m], c: 1.0 };
        s.equilibrate(ruiz_iters);
        s
    }

    /// Ruiz equilibration of `[P Aᵀ; A 0]`, uniform within each cone block,
    /// followed by cost scaling.
    fn equilibrate(&mut self, iters: usize) {
        for _ in 0..iters {
            let mut col = vec![0.0f64; self.n];
            for &(i, j, v) in &self.p {
                col[i] = col[i].max(v.abs());
                col[j] = col[j].max(v.abs());
            }
            let mut row = vec![0.0f64; self.m];
            for (i, r) in row.iter_mut().enumerate() {
                for (j, v) in self.a.row(i) {
                    col[j] = col[j].max(v.abs());
                    *r = r.max(v.abs());
                }
            }
            let dd: Vec<f64> = col.iter().map(|&v| 1.0 / clamp_norm(v).sqrt()).collect();
            let mut ee: Vec<f64> = row.iter().map(|&v| 1.0 / clamp_norm(v).sqrt()).collect();
            for blk in &self.blocks {
                if !blk.zero && blk.len > 1 {
                    let slice = &mut ee[blk.start..blk.start + blk.len];
                    // the smallest factor, so one nearly empty row cannot
                    // inflate the rest of its cone
                    let low = slice.iter().copied().fold(f64::INFINITY, f64::min);
                    slice.iter_mut().for_each(|v| *v = low);
                }
            }
            for t in self.p.iter_mut() {
                t.2 *= dd[t.0] * dd[t.1];
            }
            for (j, qj) in self.q.iter_mut().enumerate() {
                *qj *= dd[j];
            }
            for i in 0..self.m {
                for k in self.a.ptr[i]..self.a.ptr[i + 1] {
                    self.a.val[k] *= ee[i] * dd[self.a.col[k]];
                }
                self.b[i] *= ee[i];
            }
            for j in 0..self.n {
                self.d[j] *= dd[j];
            }
            for i in 0..self.m {
                self.e[i] *= ee[i];
            }
        }
        let mut col = vec![0.0f64; self.n];
        for &(i, j, v) in &self.p {
            col[i] = col[i].max(v.abs());
            col[j] = col[j].max(v.abs());
        }
        let mean_p = if self.n > 0 { col.iter().sum::<f64>() / self.n as f64 } else { 0.0 };
        let scale = mean_p.max(inf_norm(&self.q));
        let c = if scale < 1e-4 { 1.0 } else { 1.0 / scale.min(1e4) };
        self.c = c;
        for t in self.p.iter_mut() {
            t.2 *= c;
        }
        for qj in self.q.iter_mut() {
            *qj *= c;
        }
    }

    pub(super) fn p_mul(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(i, j, v) in &self.p {
            if i == j {
                out[i] += v * x[i];
            } else {
                out[i] += v * x[j];
                out[j] += v * x[i];
            }
        }
    }

    pub(super) fn unscale_x(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().zip(&self.d).map(|(x, d)| x * d).collect()
    }

    pub(super) fn unscale_y(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter().zip(&self.e).map(|(y, e)| y * e / self.c).collect()
    }

    pub(super) fn binding(&self, program: &ConeProgram, y: &[f64]) -> Vec<ConstraintTag> {
        let mut weights: Vec<(f64, ConstraintTag)> = Vec::new();
        for (k, eq) in program.equalities().iter().enumerate() {
            weights.push((y[k].abs(), eq.tag));
        }
        let cone_blocks = self.blocks.iter().filter(|b| !b.zero);
        for (blk, cone) in cone_blocks.zip(program.cones()) {
            let w = y[blk.start..blk.start + blk.len].iter().map(|v| v * v).sum::<f64>().sqrt();
            weights.push((w, cone.tag));
        }
        let top = weights.iter().fold(0.0f64, |m, w| m.max(w.0));
        if top <= 0.0 {
            return Vec::new();
        }
        weights.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        weights.into_iter().take_while(|w| w.0 > 1e-3 * top).take(8).map(|w| w.1).collect()
    }
}
