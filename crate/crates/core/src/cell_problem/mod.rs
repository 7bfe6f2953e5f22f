//! Effective extracellular conductivity from the nonlinear corrector problem.
//!
//! For a macroscopic gradient `xi = (xi1, xi')` the effective potential is
//!
//! `Phi_N(xi) = min_phi (1 / N^2) int_{exterior} Q(|(xi1, xi' + grad phi)|) dx`
//!
//! over periodic potentials `phi` on the torus `[0, N)^2`, and the effective
//! flux is `sigma_hom(xi) = grad Phi(xi)`. The potential is discretized with
//! continuous piecewise-linear elements on a uniform grid whose square cells
//! are split along the `(1, 1)` diagonal; cells whose center lies inside a disk
//! are removed, which leaves the natural no-flux condition on the membranes.
//!
//! The discrete energy is stored relative to the zero-corrector energy, so
//! `Phi_N(xi) <= (1 - Lambda_N) Q(|xi|)` holds exactly for every solve.

mod grid;
mod multigrid;
mod table;

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::conductivity::{norm3, ConductivityLaw};
use crate::geometry::{GeometryError, Realization};
use crate::numeric::CompensatedSum;
use crate::optimize::{minimize, ConvexProblem, MinimizeError, MinimizeOptions, MinimizeStats};

pub use grid::{CellGrid, INACTIVE};
pub use multigrid::PeriodicMultigrid;
pub use table::{
    tabulate_replicate, tabulate_sigma_hom, EffectiveLawTable, ReplicateTable, TableProvenance, TableSpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error("the corrector needs a periodized realization")]
    NotPeriodic,
    #[error("grid spacing must divide the unit lattice pitch")]
    InvalidGrid,
    #[error("exterior cells are empty or not face-connected across the torus")]
    MaskDegenerate,
    #[error("corrector did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("non-finite energy during the corrector solve")]
    NotFinite,
    #[error("invalid table specification: {0}")]
    InvalidTable(&'static str),
    #[error("gradient ({xi1}, {xit}) lies outside the tabulated range")]
    OutOfRange { xi1: f64, xit: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<MinimizeError> for CellError {
    fn from(e: MinimizeError) -> Self {
        match e {
            MinimizeError::NonConvergence { iterations, residual, .. } => Self::NonConvergence { iterations, residual },
            MinimizeError::NotFinite => Self::NotFinite,
        }
    }
}

/// Number of grid cells per lattice pitch for a spacing `h` (must be `1 / m`).
pub fn cells_per_unit(grid_h: f64) -> Result<usize, CellError> {
    if !(grid_h > 0.0) || grid_h > 1.0 {
        return Err(CellError::InvalidGrid);
    }
    let m = (1.0 / grid_h).round();
    if ((1.0 / m) - grid_h).abs() > 1e-12 * grid_h {
        return Err(CellError::InvalidGrid);
    }
    Ok(m as usize)
}

/// A rasterized periodic realization with its conductivity law, ready for
/// repeated corrector solves at different gradients.
#[derive(Clone, Debug)]
pub struct CellProblem {
    grid: CellGrid,
    law: ConductivityLaw,
    multigrid: PeriodicMultigrid,
}

/// Converged corrector at one macroscopic gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectorField {
    pub torus_side: usize,
    pub grid_h: f64,
    /// Nodes per side of the grid.
    pub n: usize,
    /// Potential on all grid nodes, row-major; zero on inactive nodes.
    pub phi: Vec<f64>,
    /// Per cell, `true` inside a disk.
    pub mask: Vec<bool>,
    pub xi: [f64; 3],
    /// Nodal flux imbalance (sup-norm) at the returned corrector.
    pub residual_norm: f64,
    /// `Phi_N(xi)`.
    pub energy: f64,
    /// `Phi_N` after every accepted iterate.
    pub energy_history: Vec<f64>,
    /// Interior (disk) cell fraction.
    pub lambda_hat: f64,
    pub iterations: usize,
}

impl CellProblem {
    pub fn new(real: &Realization, law: ConductivityLaw, grid_h: f64) -> Result<Self, CellError> {
        let grid = CellGrid::new(real, cells_per_unit(grid_h)?)?;
        Ok(Self::from_grid(grid, law))
    }

    pub fn from_grid(grid: CellGrid, law: ConductivityLaw) -> Self {
        let multigrid = PeriodicMultigrid::new(grid.n);
        Self { grid, law, multigrid }
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn law(&self) -> &ConductivityLaw {
        &self.law
    }

    /// Interior cell fraction `Lambda_N`.
    pub fn lambda_hat(&self) -> f64 {
        self.grid.interior_fraction()
    }

    /// Energy of the zero corrector, `(1 - Lambda_N) Q(|xi|)`.
    pub fn voigt_energy(&self, xi: [f64; 3]) -> f64 {
        (1.0 - self.lambda_hat()) * self.law.q(norm3(xi))
    }

    /// `Phi_N` of an arbitrary active-node potential.
    pub fn energy(&self, xi: [f64; 3], phi_active: &[f64]) -> f64 {
        let obj = Objective::new(self, xi);
        self.voigt_energy(xi) + obj.value(phi_active) / self.grid.n_cells() as f64
    }

    /// Solves the corrector problem from a zero initial guess.
    pub fn solve(&self, xi: [f64; 3], opts: &MinimizeOptions) -> Result<CorrectorField, CellError> {
        self.solve_from(xi, None, opts)
    }

    /// Solves starting from `initial` (active-node values), if given.
    pub fn solve_from(
        &self,
        xi: [f64; 3],
        initial: Option<&[f64]>,
        opts: &MinimizeOptions,
    ) -> Result<CorrectorField, CellError> {
        let mut x = match initial {
            Some(v) if v.len() == self.grid.n_active() => v.to_vec(),
            _ => vec![0.0; self.grid.n_active()],
        };
        let mut obj = Objective::new(self, xi);
        let stats: MinimizeStats = minimize(&mut obj, &mut x, opts)?;
        let voigt = self.voigt_energy(xi);
        let scale = 1.0 / self.grid.n_cells() as f64;
        let energy_history: Vec<f64> = stats.value_history.iter().map(|f| voigt + f * scale).collect();
        Ok(CorrectorField {
            torus_side: self.grid.side,
            grid_h: self.grid.h,
            n: self.grid.n,
            phi: self.grid.to_full(&x),
            mask: self.grid.interior.clone(),
            xi,
            residual_norm: stats.residual,
            energy: voigt + stats.value * scale,
            energy_history,
            lambda_hat: self.lambda_hat(),
            iterations: stats.ncg_iterations + stats.newton_iterations,
        })
    }

    /// Active-node values of a corrector produced by this problem.
    pub fn active_values(&self, corr: &CorrectorField) -> Vec<f64> {
        self.grid.to_active(&corr.phi)
    }
}

/// Objective `F = sum_ext [ (Q(T1) + Q(T2)) / 2 - Q(|xi|) ]` over active nodes.
struct Objective<'a> {
    problem: &'a CellProblem,
    xi: [f64; 3],
    q0: f64,
    inv_h: f64,
    /// Per exterior cell, the symmetric 2x2 tangents of both triangles.
    tangents: Vec<[f64; 6]>,
    sigma_ref: f64,
}

#[inline]
fn triangle_gradients(x: &[f64], c: &[u32; 4], inv_h: f64) -> ([f64; 2], [f64; 2]) {
    let (a, b, cc, d) = (x[c[0] as usize], x[c[1] as usize], x[c[2] as usize], x[c[3] as usize]);
    ([(b - a) * inv_h, (d - b) * inv_h], [(d - cc) * inv_h, (cc - a) * inv_h])
}

#[inline]
fn scatter(out: &mut [f64], c: &[u32; 4], w1: [f64; 2], w2: [f64; 2], coef: f64) {
    // adjoint of triangle_gradients
    out[c[0] as usize] -= coef * (w1[0] + w2[1]);
    out[c[1] as usize] += coef * (w1[0] - w1[1]);
    out[c[2] as usize] += coef * (w2[1] - w2[0]);
    out[c[3] as usize] += coef * (w1[1] + w2[0]);
}

impl<'a> Objective<'a> {
    fn new(problem: &'a CellProblem, xi: [f64; 3]) -> Self {
        let law = &problem.law;
        let q0 = law.q(norm3(xi));
        let sigma_ref = law.sigma(norm3(xi)).max(f64::MIN_POSITIVE);
        Self { problem, xi, q0, inv_h: 1.0 / problem.grid.h, tangents: Vec::new(), sigma_ref }
    }

    #[inline]
    fn field(&self, g: [f64; 2]) -> ([f64; 2], f64) {
        let p = [self.xi[1] + g[0], self.xi[2] + g[1]];
        let eta = (self.xi[0] * self.xi[0] + p[0] * p[0] + p[1] * p[1]).sqrt();
        (p, eta)
    }
}

impl ConvexProblem for Objective<'_> {
    fn dim(&self) -> usize {
        self.problem.grid.n_active()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let law = &self.problem.law;
        let mut acc = CompensatedSum::new();
        for c in &self.problem.grid.exterior_cells {
            let (g1, g2) = triangle_gradients(x, c, self.inv_h);
            let (_, e1) = self.field(g1);
            let (_, e2) = self.field(g2);
            acc.add(0.5 * (law.q(e1) + law.q(e2)) - self.q0);
        }
        acc.value()
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let law = &self.problem.law;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = CompensatedSum::new();
        let coef = 0.5 * self.inv_h;
        for c in &self.problem.grid.exterior_cells {
            let (g1, g2) = triangle_gradients(x, c, self.inv_h);
            let (p1, e1) = self.field(g1);
            let (p2, e2) = self.field(g2);
            let (q1, s1) = law.q_and_sigma(e1);
            let (q2, s2) = law.q_and_sigma(e2);
            acc.add(0.5 * (q1 + q2) - self.q0);
            scatter(grad, c, [s1 * p1[0], s1 * p1[1]], [s2 * p2[0], s2 * p2[1]], coef);
        }
        acc.value()
    }

    fn prepare_hessian(&mut self, x: &[f64]) {
        let law = &self.problem.law;
        let cells = &self.problem.grid.exterior_cells;
        self.tangents.resize(cells.len(), [0.0; 6]);
        for (t, c) in self.tangents.iter_mut().zip(cells) {
            let (g1, g2) = triangle_gradients(x, c, self.inv_h);
            for (k, g) in [g1, g2].into_iter().enumerate() {
                let p = [self.xi[1] + g[0], self.xi[2] + g[1]];
                let eta = (self.xi[0] * self.xi[0] + p[0] * p[0] + p[1] * p[1]).sqrt();
                let (s, w) = law.sigma_and_weight(eta);
                t[3 * k] = s + w * p[0] * p[0];
                t[3 * k + 1] = w * p[0] * p[1];
                t[3 * k + 2] = s + w * p[1] * p[1];
            }
        }
    }

    fn hessian_apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let coef = 0.5 * self.inv_h;
        for (t, c) in self.tangents.iter().zip(&self.problem.grid.exterior_cells) {
            let (g1, g2) = triangle_gradients(v, c, self.inv_h);
            let w1 = [t[0] * g1[0] + t[1] * g1[1], t[1] * g1[0] + t[2] * g1[1]];
            let w2 = [t[3] * g2[0] + t[4] * g2[1], t[4] * g2[0] + t[5] * g2[1]];
            scatter(out, c, w1, w2, coef);
        }
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let grid = &self.problem.grid;
        let full = grid.to_full(r);
        let mut sol = vec![0.0; full.len()];
        self.problem.multigrid.apply(&full, &mut sol);
        let scale = grid.h * grid.h / self.sigma_ref;
        for (zi, &k) in z.iter_mut().zip(&grid.active_nodes) {
            *zi = scale * sol[k as usize];
        }
    }

    fn residual_norm(&self, grad: &[f64]) -> f64 {
        self.problem.grid.h * grad.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    fn normalize(&self, x: &mut [f64]) {
        let cells = &self.problem.grid.exterior_cells;
        let mut acc = CompensatedSum::new();
        for c in cells {
            acc.add(0.25 * (x[c[0] as usize] + x[c[1] as usize] + x[c[2] as usize] + x[c[3] as usize]));
        }
        let mean = acc.value() / cells.len() as f64;
        x.iter_mut().for_each(|v| *v -= mean);
    }
}

/// Corrector solve on a periodized realization with default options and the
/// given tolerance.
pub fn solve_corrector(
    real: &Realization,
    law: &ConductivityLaw,
    xi: [f64; 3],
    grid_h: f64,
    tol: f64,
) -> Result<CorrectorField, CellError> {
    let problem = CellProblem::new(real, law.clone(), grid_h)?;
    problem.solve(xi, &MinimizeOptions { tol, ..MinimizeOptions::default() })
}

/// `Phi_N(xi)` of a converged corrector.
pub fn effective_energy(corr: &CorrectorField) -> f64 {
    corr.energy
}

/// `sigma_hom,N(xi)`: the exterior average of the microscopic flux.
pub fn effective_flux(corr: &CorrectorField, law: &ConductivityLaw) -> [f64; 3] {
    let n = corr.n;
    let inv_h = 1.0 / corr.grid_h;
    let xi = corr.xi;
    let mut acc = [CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new()];
    let node = |i: usize, j: usize| corr.phi[(j % n) * n + (i % n)];
    for j in 0..n {
        for i in 0..n {
            if corr.mask[j * n + i] {
                continue;
            }
            let (a, b, c, d) = (node(i, j), node(i + 1, j), node(i, j + 1), node(i + 1, j + 1));
            for g in [[(b - a) * inv_h, (d - b) * inv_h], [(d - c) * inv_h, (c - a) * inv_h]] {
                let f = [xi[0], xi[1] + g[0], xi[2] + g[1]];
                let s = 0.5 * law.sigma(norm3(f));
                for k in 0..3 {
                    acc[k].add(s * f[k]);
                }
            }
        }
    }
    let cells = (n * n) as f64;
    [acc[0].value() / cells, acc[1].value() / cells, acc[2].value() / cells]
}

/// Comparison of the effective flux with finite differences of `Phi_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub flux: [f64; 3],
    pub fd_gradient: [f64; 3],
    pub relative_mismatch: f64,
    /// Largest second difference `|Phi(xi + d) - 2 Phi(xi) + Phi(xi - d)| / d^2`.
    pub curvature: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Central differences of `Phi_N` with step `delta` on the frozen mask.
pub fn gradient_consistency(
    problem: &CellProblem,
    xi: [f64; 3],
    delta: f64,
    opts: &MinimizeOptions,
) -> Result<ConsistencyReport, CellError> {
    let base = problem.solve(xi, opts)?;
    let warm = problem.active_values(&base);
    let flux = effective_flux(&base, problem.law());
    let mut fd = [0.0; 3];
    let mut curvature: f64 = 0.0;
    for k in 0..3 {
        let mut plus = xi;
        plus[k] += delta;
        let mut minus = xi;
        minus[k] -= delta;
        let ep = problem.solve_from(plus, Some(&warm), opts)?.energy;
        let em = problem.solve_from(minus, Some(&warm), opts)?.energy;
        fd[k] = (ep - em) / (2.0 * delta);
        curvature = curvature.max((ep - 2.0 * base.energy + em).abs() / (delta * delta));
    }
    let diff = norm3([flux[0] - fd[0], flux[1] - fd[1], flux[2] - fd[2]]);
    let scale = norm3(flux).max(norm3(fd)).max(f64::MIN_POSITIVE);
    let relative_mismatch = if diff == 0.0 { 0.0 } else { diff / scale };
    let threshold = 1e-3_f64.max(10.0 * delta * delta * curvature);
    Ok(ConsistencyReport { flux, fd_gradient: fd, relative_mismatch, curvature, threshold, pass: relative_mismatch <= threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_periodic, GeometryModel};

    fn lattice_problem(law: ConductivityLaw, side: usize, h: f64) -> CellProblem {
        let model = GeometryModel::full_lattice(0.25).unwrap();
        let real = sample_periodic(&model, side, 1).unwrap();
        CellProblem::new(&real, law, h).unwrap()
    }

    fn tight() -> MinimizeOptions {
        MinimizeOptions { tol: 1e-11, ..MinimizeOptions::default() }
    }

    #[test]
    fn homogeneous_medium_has_zero_corrector() {
        let model = GeometryModel::empty();
        let real = sample_periodic(&model, 2, 0).unwrap();
        let p = CellProblem::new(&real, ConductivityLaw::constant(1.5), 0.125).unwrap();
        let c = p.solve([0.3, -0.7, 0.4], &tight()).unwrap();
        assert!(c.phi.iter().all(|v| v.abs() < 1e-12));
        assert!((c.energy - 1.5 * (0.09 + 0.49 + 0.16) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn longitudinal_gradient_needs_no_corrector() {
        let law = ConductivityLaw::sigmoid(1.0, 3.0, 2.0, 1.0);
        let p = lattice_problem(law.clone(), 2, 1.0 / 16.0);
        let c = p.solve([1.3, 0.0, 0.0], &tight()).unwrap();
        assert_eq!(c.iterations, 0);
        assert!(c.phi.iter().all(|&v| v == 0.0));
        assert_eq!(c.energy, (1.0 - c.lambda_hat) * law.q(1.3));
        let f = effective_flux(&c, &law);
        let expect = (1.0 - c.lambda_hat) * law.sigma(1.3) * 1.3;
        assert!((f[0] - expect).abs() <= 1e-14 * expect);
        assert_eq!((f[1], f[2]), (0.0, 0.0));
    }

    #[test]
    fn transverse_lattice_is_below_voigt_and_near_rayleigh() {
        let p = lattice_problem(ConductivityLaw::constant(1.0), 1, 1.0 / 64.0);
        let c = p.solve([0.0, 1.0, 0.0], &tight()).unwrap();
        let voigt = p.voigt_energy([0.0, 1.0, 0.0]);
        assert!(c.energy <= voigt);
        // Rayleigh estimate for a square array of insulating disks
        let f = core::f64::consts::PI / 16.0;
        let rayleigh = 0.5 * (1.0 - 2.0 * f / (1.0 + f - 0.305_827 * f.powi(4)));
        assert!((c.energy - rayleigh).abs() < 0.01, "{} vs {rayleigh}", c.energy);
        for w in c.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-14);
        }
    }

    #[test]
    fn flux_is_energy_gradient() {
        let law = ConductivityLaw::sigmoid(1.0, 3.0, 2.0, 1.0);
        let p = lattice_problem(law, 1, 1.0 / 32.0);
        let rep = gradient_consistency(&p, [0.5, 1.0, 0.0], 1e-3, &tight()).unwrap();
        assert!(rep.relative_mismatch < 1e-5, "{rep:?}");
    }

    #[test]
    fn constant_law_flux_is_linear() {
        let p = lattice_problem(ConductivityLaw::constant(2.0), 1, 1.0 / 32.0);
        let a = p.solve([0.2, 0.5, -0.3], &tight()).unwrap();
        let b = p.solve([0.4, 1.0, -0.6], &tight()).unwrap();
        let fa = effective_flux(&a, p.law());
        let fb = effective_flux(&b, p.law());
        for k in 0..3 {
            assert!((fb[k] - 2.0 * fa[k]).abs() < 1e-9, "{k}");
        }
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        let n = 8;
        let all = vec![true; n * n];
        assert_eq!(CellGrid::from_mask(1, n, 0.125, all).unwrap_err(), CellError::MaskDegenerate);
        let mut split = vec![false; n * n];
        for j in 0..n {
            split[j * n + 3] = true;
            split[j * n + 6] = true;
        }
        assert_eq!(CellGrid::from_mask(1, n, 0.125, split).unwrap_err(), CellError::MaskDegenerate);
        assert_eq!(cells_per_unit(0.3), Err(CellError::InvalidGrid));
    }
}
