//! Envelope (skyline) Cholesky and `L D Lᵀ` factorizations.
//!
//! Every system the smoothing pipeline factors is banded once variables are
//! ordered along the path, so storing each row from its first structural
//! nonzero to the diagonal keeps the factor as sparse as the input.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

#[derive(Debug, Clone)]
pub struct Skyline {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
    /// Set by [`Skyline::factor_ldl`]: the diagonal holds `D` and `L` has a
    /// unit diagonal.
    ldl: bool,
}

impl Skyline {
    /// Builds the envelope covering every `(i, j)` in `pattern` plus the
    /// diagonal. Order within a pair does not matter.
    pub fn from_pattern(n: usize, pattern: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in pattern {
            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
            if lo < first[hi] {
                first[hi] = lo;
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Skyline { n, first, start, vals: vec![0.0; acc], ldl: false }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
        self.ldl = false;
    }

    /// `out = M x` for the (unfactored) symmetric matrix.
    pub fn mul_sym(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let v = self.vals[si + (j - fi)];
                out[i] += v * x[j];
                out[j] += v * x[i];
            }
            out[i] += self.vals[si + (i - fi)] * x[i];
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.start[i] + (j - self.first[i])
    }

    /// Adds `v` to the symmetric entry `(i, j)`. Panics outside the envelope.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        assert!(lo >= self.first[hi], "entry ({hi}, {lo}) outside envelope");
        let k = self.idx(hi, lo);
        self.vals[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if lo < self.first[hi] {
            0.0
        } else {
            self.vals[self.idx(hi, lo)]
        }
    }

    /// In-place `L Lᵀ` factorization.
    pub fn factor(&mut self) -> Result<(), NotPositiveDefinite> {
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut sum = self.vals[si + (j - fi)];
                for k in k0..j {
                    sum -= self.vals[si + (k - fi)] * self.vals[sj + (k - fj)];
                }
                let ljj = self.vals[sj + (j - fj)];
                self.vals[si + (j - fi)] = sum / ljj;
            }
            let mut d = self.vals[si + (i - fi)];
            for k in fi..i {
                let l = self.vals[si + (k - fi)];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(NotPositiveDefinite { row: i, pivot: d });
            }
            self.vals[si + (i - fi)] = d.sqrt();
        }
        Ok(())
    }

    /// In-place `L D Lᵀ` factorization without pivoting. Succeeds for
    /// quasi-definite matrices in any symmetric ordering; fails on a zero
    /// or non-finite pivot.
    pub fn factor_ldl(&mut self) -> Result<(), NotPositiveDefinite> {
        let mut u = vec![0.0; self.n];
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            // u_ij = a_ij − Σ_k u_ik l_jk, then l_ij = u_ij / d_j
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let mut sum = self.vals[si + (j - fi)];
                for k in fi.max(fj)..j {
                    sum -= u[k] * self.vals[sj + (k - fj)];
                }
                u[j] = sum;
            }
            let mut d = self.vals[si + (i - fi)];
            for j in fi..i {
                let dj = self.vals[self.start[j] + (j - self.first[j])];
                let l = u[j] / dj;
                d -= u[j] * l;
                self.vals[si + (j - fi)] = l;
            }
            if d == 0.0 || !d.is_finite() {
                return Err(NotPositiveDefinite { row: i, pivot: d });
            }
            self.vals[si + (i - fi)] = d;
        }
        self.ldl = true;
        Ok(())
    }

    /// Solves with the factor from [`Skyline::factor`] or
    /// [`Skyline::factor_ldl`], in place.
    pub fn solve(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        if self.ldl {
            self.solve_ldl(b);
            return;
        }
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            let mut sum = b[i];
            for k in fi..i {
                sum -= self.vals[si + (k - fi)] * b[k];
            }
            b[i] = sum / self.vals[si + (i - fi)];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let xi = b[i] / self.vals[si + (i - fi)];
            b[i] = xi;
            for k in fi..i {
                b[k] -= self.vals[si + (k - fi)] * xi;
            }
        }
    }

    fn solve_ldl(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            let mut sum = b[i];
            for k in fi..i {
                sum -= self.vals[si + (k - fi)] * b[k];
            }
            b[i] = sum;
        }
        for i in 0..self.n {
            b[i] /= self.vals[self.start[i] + (i - self.first[i])];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let xi = b[i];
            for k in fi..i {
                b[k] -= self.vals[si + (k - fi)] * xi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal() {
        let n = 6;
        let pattern = (1..n).map(|i| (i, i - 1));
        let mut m = Skyline::from_pattern(n, pattern);
        for i in 0..n {
            m.add(i, i, 2.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
        }
        let dense: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m.get(i, j)).collect()).collect();
        m.factor().unwrap();
        let rhs: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
        let mut x = rhs.clone();
        m.solve(&mut x);
        for i in 0..n {
            let r: f64 = (0..n).map(|j| dense[i][j] * x[j]).sum();
            assert!((r - rhs[i]).abs() < 1e-12);
        }
        assert_eq!(m.nnz(), 2 * n - 1);
    }

    #[test]
    fn ldl_solves_quasi_definite() {
        // [[4, 1, 1], [1, 3, 0], [1, 0, -2]] with a negative pivot last
        let mut m = Skyline::from_pattern(3, [(1, 0), (2, 0)]);
        m.add(0, 0, 4.0);
        m.add(1, 0, 1.0);
        m.add(2, 0, 1.0);
        m.add(1, 1, 3.0);
        m.add(2, 2, -2.0);
        let orig = m.clone();
        m.factor_ldl().unwrap();
        let rhs = [1.0, -2.0, 0.5];
        let mut x = rhs;
        m.solve(&mut x);
        let mut r = [0.0; 3];
        orig.mul_sym(&x, &mut r);
        for i in 0..3 {
            assert!((r[i] - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut m = Skyline::from_pattern(2, [(1, 0)]);
        m.add(0, 0, 1.0);
        m.add(1, 1, 1.0);
        m.add(1, 0, 2.0);
        assert!(m.factor().is_err());
    }
}
