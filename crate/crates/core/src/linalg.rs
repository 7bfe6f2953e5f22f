//! Dense, banded and tridiagonal direct solvers plus preconditioned CG.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves a tridiagonal system with sub-diagonal `lower[i]` (row `i + 1`),
/// diagonal `diag` and super-diagonal `upper[i]` (row `i`).
///
/// Returns `None` if a pivot vanishes.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 || !piv.is_finite() {
        return None;
    }
    c[0] = if n > 1 { upper[0] / piv } else { 0.0 };
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - lower[i - 1] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return None;
        }
        c[i] = if i + 1 < n { upper[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// Square matrix with `bw` sub- and super-diagonals, factored in place by LU
/// without pivoting (intended for diagonally dominant or definite Jacobians).
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` to entry `(i, j)`; `|i - j|` must not exceed the bandwidth.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i.abs_diff(j) <= self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn set_row_identity(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bw);
        let hi = (i + self.bw).min(self.n - 1);
        for j in lo..=hi {
            let k = self.idx(i, j);
            self.data[k] = if i == j { 1.0 } else { 0.0 };
        }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = 0.0;
            for j in lo..=hi {
                s += self.data[self.idx(i, j)] * x[j];
            }
            y[i] = s;
        }
    }

    /// In-place LU factorization; returns `None` on a vanishing pivot.
    pub fn factor(mut self) -> Option<BandLu> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let piv = self.data[self.idx(k, k)];
            if piv == 0.0 || !piv.is_finite() {
                return None;
            }
            let hi = (k + bw).min(n - 1);
            for i in k + 1..=hi {
                let li = self.idx(i, k);
                let l = self.data[li] / piv;
                self.data[li] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=hi {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Some(BandLu { m: self })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
}

impl BandLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.m.n, self.m.bw);
        let mut x = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for j in lo..i {
                s -= self.m.data[self.m.idx(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=hi {
                s -= self.m.data[self.m.idx(i, j)] * x[j];
            }
            x[i] = s / self.m.data[self.m.idx(i, i)];
        }
        x
    }
}

/// Dense symmetric positive definite matrix factored by Cholesky.
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    /// Factors the row-major `n x n` matrix `a`; `None` if not positive definite.
    pub fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(Self { n, l })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
    }
}

/// Outcome of a conjugate gradient solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final preconditioned residual norm relative to the initial one.
    pub relative_residual: f64,
    pub converged: bool,
    /// A direction of non-positive curvature was met.
    pub indefinite: bool,
}

/// Preconditioned conjugate gradients for `A x = b` starting from `x`.
///
/// Stops when `sqrt(r.z) <= rel_tol * sqrt(r0.z0)` or after `max_iter` steps.
pub fn pcg<A, M>(apply: A, precondition: M, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> CgOutcome
where
    A: Fn(&[f64], &mut [f64]),
    M: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut rz = dot(&r, &z);
    let rz0 = rz.abs();
    if rz0 == 0.0 {
        return CgOutcome { iterations: 0, relative_residual: 0.0, converged: true, indefinite: false };
    }
    let mut p = z.clone();
    let mut it = 0;
    let mut rel = 1.0;
    while it < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return CgOutcome { iterations: it, relative_residual: rel, converged: false, indefinite: true };
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        it += 1;
        rel = (rz_new.abs() / rz0).sqrt();
        if rel <= rel_tol {
            return CgOutcome { iterations: it, relative_residual: rel, converged: true, indefinite: false };
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome { iterations: it, relative_residual: rel, converged: false, indefinite: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_matches_dense() {
        let lower = [1.0, -0.5, 0.25];
        let diag = [4.0, 5.0, 3.0, 6.0];
        let upper = [0.5, 1.0, -1.0];
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut b = [0.0; 4];
        for i in 0..4 {
            b[i] = diag[i] * x[i];
            if i > 0 {
                b[i] += lower[i - 1] * x[i - 1];
            }
            if i < 3 {
                b[i] += upper[i] * x[i + 1];
            }
        }
        let sol = solve_tridiagonal(&lower, &diag, &upper, &b).unwrap();
        for i in 0..4 {
            assert!((sol[i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn band_lu_solves_pentadiagonal() {
        let n = 12;
        let mut m = BandMatrix::zeros(n, 2);
        for i in 0..n {
            m.add(i, i, 6.0);
            if i >= 1 {
                m.add(i, i - 1, -1.0);
                m.add(i - 1, i, -1.5);
            }
            if i >= 2 {
                m.add(i, i - 2, -0.5);
                m.add(i - 2, i, -0.25);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut b = vec![0.0; n];
        m.mul_vec(&x, &mut b);
        let lu = m.factor().unwrap();
        let sol = lu.solve(&b);
        for i in 0..n {
            assert!((sol[i] - x[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn cholesky_and_pcg_agree() {
        let n = 6;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = 1.0 / (1.0 + (i as f64 - j as f64).abs());
            }
            a[i * n + i] += 2.0;
        }
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        let chol = DenseCholesky::factor(&a, n).unwrap();
        let mut x1 = b.clone();
        chol.solve_in_place(&mut x1);
        let mut x2 = vec![0.0; n];
        let apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = (0..n).map(|j| a[i * n + j] * v[j]).sum();
            }
        };
        let out = pcg(apply, |r: &[f64], z: &mut [f64]| z.copy_from_slice(r), &b, &mut x2, 1e-14, 100);
        assert!(out.converged);
        for i in 0..n {
            assert!((x1[i] - x2[i]).abs() < 1e-12);
        }
    }
}
