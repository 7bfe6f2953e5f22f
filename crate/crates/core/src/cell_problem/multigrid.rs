//! Geometric multigrid V-cycle for the periodic five-point Laplacian.
//!
//! The cycle is a fixed symmetric linear operator (damped Jacobi smoothing with
//! equal pre and post sweeps, bilinear prolongation, its transpose as restriction
//! and an exact coarse solve), so it can precondition conjugate gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::DenseCholesky;

const OMEGA: f64 = 0.8;
const SWEEPS: usize = 2;
const MAX_COARSE: usize = 32;
const FALLBACK_SWEEPS: usize = 200;


#[derive(Clone, Debug)]
pub struct PeriodicMultigrid {
    sizes: Vec<usize>,
    coarse: Option<DenseCholesky>,
}

fn apply_laplacian(n: usize, x: &[f64], out: &mut [f64]) {
    for j in 0..n {
        let up = if j == 0 { n - 1 } else { j - 1 } * n;
        let down = if j + 1 == n { 0 } else { j + 1 } * n;
        let row = j * n;
        let (xr, xu, xd) = (&x[row..row + n], &x[up..up + n], &x[down..down + n]);
        let o = &mut out[row..row + n];
        o[0] = 4.0 * xr[0] - xr[n - 1] - xr[1 % n] - xu[0] - xd[0];
        for i in 1..n - 1 {
            o[i] = 4.0 * xr[i] - xr[i - 1] - xr[i + 1] - xu[i] - xd[i];
        }
        if n > 1 {
            o[n - 1] = 4.0 * xr[n - 1] - xr[n - 2] - xr[0] - xu[n - 1] - xd[n - 1];
        }
    }
}

fn remove_mean(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

impl PeriodicMultigrid {
    /// Hierarchy for an `n x n` periodic grid.
    pub fn new(n: usize) -> Self {
        let mut sizes = vec![n];
        loop {
            let last = *sizes.last().unwrap();
            if last <= MAX_COARSE || last % 2 != 0 {
                break;
            }
            sizes.push(last / 2);
        }
        let bottom = *sizes.last().unwrap();
        let coarse = if bottom <= MAX_COARSE {
            let m = bottom * bottom;
            let mut a = vec![0.0; m * m];
            let mut e = vec![0.0; m];
            let mut col = vec![0.0; m];
            for k in 0..m {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[k] = 1.0;
                apply_laplacian(bottom, &e, &mut col);
                for r in 0..m {
                    // rank-one shift removes the constant null space
                    a[r * m + k] = col[r] + 1.0 / m as f64;
                }
            }
            DenseCholesky::factor(&a, m)
        } else {
            None
        };
        Self { sizes, coarse }
    }

    pub fn n(&self) -> usize {
        self.sizes[0]
    }

    pub fn depth(&self) -> usize {
        self.sizes.len()
    }

    /// Approximates the mean-free solution of `L z = r` on the finest level.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut rhs = r.to_vec();
        remove_mean(&mut rhs);
        z.iter_mut().for_each(|v| *v = 0.0);
        self.cycle(0, &rhs, z);
        remove_mean(z);
    }

    fn smooth(&self, level: usize, b: &[f64], x: &mut [f64], sweeps: usize, tmp: &mut [f64]) {
        let n = self.sizes[level];
        for _ in 0..sweeps {
            apply_laplacian(n, x, tmp);
            for k in 0..x.len() {
                x[k] += OMEGA / 4.0 * (b[k] - tmp[k]);
            }
        }
    }

    fn cycle(&self, level: usize, b: &[f64], x: &mut [f64]) {
        let n = self.sizes[level];
        let mut tmp = vec![0.0; n * n];
        if level + 1 == self.sizes.len() {
            match &self.coarse {
                Some(chol) => {
                    x.copy_from_slice(b);
                    chol.solve_in_place(x);
                }
                None => self.smooth(level, b, x, FALLBACK_SWEEPS, &mut tmp),
            }
            return;
        }
        self.smooth(level, b, x, SWEEPS, &mut tmp);
        apply_laplacian(n, x, &mut tmp);
        let res: Vec<f64> = b.iter().zip(&tmp).map(|(a, c)| a - c).collect();
        let nc = n / 2;
        let mut bc = vec![0.0; nc * nc];
        restrict(n, &res, &mut bc);
        let mut xc = vec![0.0; nc * nc];
        self.cycle(level + 1, &bc, &mut xc);
        prolong_add(nc, &xc, x);
        self.smooth(level, b, x, SWEEPS, &mut tmp);
    }
}

/// Transpose of bilinear prolongation (sums with weights 1, 1/2, 1/4).
fn restrict(n: usize, fine: &[f64], coarse: &mut [f64]) {
    let nc = n / 2;
    // horizontal pass on every fine row, then vertical pass
    let mut rows = vec![0.0; n * nc];
    for j in 0..n {
        let f = &fine[j * n..(j + 1) * n];
        let r = &mut rows[j * nc..(j + 1) * nc];
        for ic in 0..nc {
            let left = if ic == 0 { f[n - 1] } else { f[2 * ic - 1] };
            r[ic] = 0.5 * left + f[2 * ic] + 0.5 * f[2 * ic + 1];
        }
    }
    for jc in 0..nc {
        let above = if jc == 0 { n - 1 } else { 2 * jc - 1 };
        let (a, m, b) = (above * nc, 2 * jc * nc, (2 * jc + 1) * nc);
        for ic in 0..nc {
            coarse[jc * nc + ic] = 0.5 * rows[a + ic] + rows[m + ic] + 0.5 * rows[b + ic];
        }
    }
}

fn prolong_add(nc: usize, coarse: &[f64], fine: &mut [f64]) {
    let n = 2 * nc;
    for j in 0..n {
        let (j0, j1, wj) = if j % 2 == 0 { (j / 2, j / 2, 1.0) } else { (j / 2, (j / 2 + 1) % nc, 0.5) };
        for i in 0..n {
            let (i0, i1, wi) = if i % 2 == 0 { (i / 2, i / 2, 1.0) } else { (i / 2, (i / 2 + 1) % nc, 0.5) };
            let v = if wj == 1.0 && wi == 1.0 {
                coarse[j0 * nc + i0]
            } else if wj == 1.0 {
                0.5 * (coarse[j0 * nc + i0] + coarse[j0 * nc + i1])
            } else if wi == 1.0 {
                0.5 * (coarse[j0 * nc + i0] + coarse[j1 * nc + i0])
            } else {
                0.25 * (coarse[j0 * nc + i0] + coarse[j0 * nc + i1] + coarse[j1 * nc + i0] + coarse[j1 * nc + i1])
            };
            fine[j * n + i] += v;
        }
    }
}
