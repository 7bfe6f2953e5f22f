//! Stationary decoupled problems on explicit fascicle geometries and their
//! homogenized limits.
//!
//! The extracellular problem lives on a perforated cross-section with the
//! axial direction collapsed:
//!
//! ```text
//! min  sum_T |T| Q_e(|grad u|) - int_top J u - eps sum_membrane f u
//! ```
//!
//! with `u = 0` on the sides `x = x0` and `x = x1`. Each axon carries an
//! independent cable problem `min int A Q_i(|u'|) + eps P f u` along `x1`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::cell_problem::{CellError, CellProblem};
use crate::conductivity::{ConductivityLaw, LawKind};
use crate::ergodics::derive_seed;
use crate::geometry::{rescale_and_clip, sample_periodic, sample_realization, GeometryError, GeometryModel, Rect, ScaledFascicle};
use crate::linalg::solve_tridiagonal;
use crate::macro_solver::SigmaHom;
use crate::numeric::{mean_and_se, sample_variance, CompensatedSum};
use crate::optimize::{minimize, ConvexProblem, MinimizeError, MinimizeOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicroError {
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("degenerate mask: {0}")]
    MaskDegenerate(&'static str),
    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("objective is not finite")]
    NotFinite,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Cell(#[from] CellError),
}

impl From<MinimizeError> for MicroError {
    fn from(e: MinimizeError) -> Self {
        match e {
            MinimizeError::NonConvergence { iterations, residual, .. } => MicroError::NonConvergence { iterations, residual },
            MinimizeError::NotFinite => MicroError::NotFinite,
        }
    }
}

/// `constant + linear . x + amplitude sin(pi k0 x) sin(pi k1 y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PlanarField {
    pub constant: f64,
    pub linear: [f64; 2],
    pub amplitude: f64,
    pub frequency: [f64; 2],
}

impl Default for PlanarField {
    fn default() -> Self {
        Self { constant: 0.0, linear: [0.0; 2], amplitude: 0.0, frequency: [1.0, 1.0] }
    }
}

impl PlanarField {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, ..Self::default() }
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        let mut v = self.constant + self.linear[0] * p[0] + self.linear[1] * p[1];
        if self.amplitude != 0.0 {
            v += self.amplitude * (PI * self.frequency[0] * p[0]).sin() * (PI * self.frequency[1] * p[1]).sin();
        }
        v
    }
}

/// Uniform node grid on a rectangle with a cell mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarGrid {
    pub section: Rect,
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    /// Per cell (row-major, `nx * ny`), `true` inside an axon.
    pub mask: Vec<bool>,
    dof: Vec<usize>,
    n_dof: usize,
}

const NO_DOF: usize = usize::MAX;

impl PlanarGrid {
    pub fn new(section: Rect, grid_h: f64, fascicle: Option<&ScaledFascicle>) -> Result<Self, MicroError> {
        let (nx, ny) = grid_counts(section, grid_h)?;
        let h = section.width() / nx as f64;
        let mut mask = vec![false; nx * ny];
        if let Some(f) = fascicle {
            for d in &f.disks {
                let cx = (d.center[0] - section.x0) / h;
                let cy = (d.center[1] - section.y0) / h;
                let rr = d.radius / h;
                let i0 = (cx - rr).floor().max(0.0) as usize;
                let j0 = (cy - rr).floor().max(0.0) as usize;
                let i1 = ((cx + rr).ceil().max(0.0) as usize).min(nx);
                let j1 = ((cy + rr).ceil().max(0.0) as usize).min(ny);
                for j in j0..j1 {
                    for i in i0..i1 {
                        let dx = i as f64 + 0.5 - cx;
                        let dy = j as f64 + 0.5 - cy;
                        if dx * dx + dy * dy < rr * rr {
                            mask[j * nx + i] = true;
                        }
                    }
                }
            }
        }
        Self::from_mask(section, nx, ny, mask)
    }

    /// Grid with an explicit cell mask of `nx * ny` entries.
    pub fn from_mask(section: Rect, nx: usize, ny: usize, mask: Vec<bool>) -> Result<Self, MicroError> {
        if nx == 0 || ny == 0 || mask.len() != nx * ny {
            return Err(MicroError::InvalidInput("mask size does not match the grid"));
        }
        let h = section.width() / nx as f64;
        if (section.height() / ny as f64 - h).abs() > 1e-9 * h {
            return Err(MicroError::InvalidInput("cells must be square"));
        }
        check_connected(nx, ny, &mask)?;
        let mut dof = vec![NO_DOF; (nx + 1) * (ny + 1)];
        let mut n_dof = 0;
        for j in 0..=ny {
            for i in 1..nx {
                let touches = [(i.wrapping_sub(1), j.wrapping_sub(1)), (i, j.wrapping_sub(1)), (i.wrapping_sub(1), j), (i, j)]
                    .iter()
                    .any(|&(ci, cj)| ci < nx && cj < ny && !mask[cj * nx + ci]);
                if touches {
                    dof[j * (nx + 1) + i] = n_dof;
                    n_dof += 1;
                }
            }
        }
        Ok(Self { section, nx, ny, h, mask, dof, n_dof })
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    pub fn node_position(&self, i: usize, j: usize) -> [f64; 2] {
        [self.section.x0 + i as f64 * self.h, self.section.y0 + j as f64 * self.h]
    }

    /// Refinement by halving with every child cell inheriting its parent's mask.
    pub fn refined(&self) -> Result<Self, MicroError> {
        let (nx, ny) = (2 * self.nx, 2 * self.ny);
        let mut mask = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                mask[j * nx + i] = self.mask[(j / 2) * self.nx + i / 2];
            }
        }
        Self::from_mask(self.section, nx, ny, mask)
    }

    /// Nodal values on the full `(nx + 1) x (ny + 1)` grid, zero off the dofs.
    pub fn to_full(&self, x: &[f64]) -> Vec<f64> {
        self.dof.iter().map(|&d| if d == NO_DOF { 0.0 } else { x[d] }).collect()
    }

    fn nearest_dof(&self, p: [f64; 2]) -> Option<usize> {
        let fi = (p[0] - self.section.x0) / self.h;
        let fj = (p[1] - self.section.y0) / self.h;
        let ci = fi.round().clamp(0.0, self.nx as f64) as i64;
        let cj = fj.round().clamp(0.0, self.ny as f64) as i64;
        let mut best: Option<(f64, usize)> = None;
        for radius in 0..4_i64 {
            for dj in -radius..=radius {
                for di in -radius..=radius {
                    let (i, j) = (ci + di, cj + dj);
                    if i < 0 || j < 0 || i > self.nx as i64 || j > self.ny as i64 {
                        continue;
                    }
                    let d = self.dof[j as usize * (self.nx + 1) + i as usize];
                    if d == NO_DOF {
                        continue;
                    }
                    let dist = (i as f64 - fi).powi(2) + (j as f64 - fj).powi(2);
                    if best.is_none_or(|(b, _)| dist < b) {
                        best = Some((dist, d));
                    }
                }
            }
            if best.is_some() {
                break;
            }
        }
        best.map(|(_, d)| d)
    }

    fn cells(&self) -> impl Iterator<Item = [usize; 4]> + '_ {
        let w = self.nx + 1;
        (0..self.ny).flat_map(move |j| {
            (0..self.nx).filter_map(move |i| {
                if self.mask[j * self.nx + i] {
                    None
                } else {
                    let a = j * w + i;
                    Some([self.dof[a], self.dof[a + 1], self.dof[a + w], self.dof[a + w + 1]])
                }
            })
        })
    }
}

fn grid_counts(section: Rect, grid_h: f64) -> Result<(usize, usize), MicroError> {
    if !(grid_h > 0.0) || !(section.area() > 0.0) {
        return Err(MicroError::InvalidInput("grid spacing and section must be positive"));
    }
    let nx = (section.width() / grid_h).round();
    let ny = (section.height() / grid_h).round();
    if nx < 2.0 || ny < 1.0 || (nx * grid_h - section.width()).abs() > 1e-9 * section.width()
        || (ny * grid_h - section.height()).abs() > 1e-9 * section.height()
    {
        return Err(MicroError::InvalidInput("grid spacing must divide the section"));
    }
    Ok((nx as usize, ny as usize))
}

/// Every connected component of the fluid cells must reach a Dirichlet side.
fn check_connected(nx: usize, ny: usize, mask: &[bool]) -> Result<(), MicroError> {
    if mask.iter().all(|&m| m) {
        return Err(MicroError::MaskDegenerate("no extracellular cells"));
    }
    let mut seen = vec![false; nx * ny];
    let mut stack = Vec::new();
    for j in 0..ny {
        for i in [0, nx - 1] {
            let c = j * nx + i;
            if !mask[c] && !seen[c] {
                seen[c] = true;
                stack.push(c);
            }
        }
    }
    while let Some(c) = stack.pop() {
        let (i, j) = (c % nx, c / nx);
        let mut visit = |n: usize| {
            if !mask[n] && !seen[n] {
                seen[n] = true;
                stack.push(n);
            }
        };
        if i > 0 {
            visit(c - 1);
        }
        if i + 1 < nx {
            visit(c + 1);
        }
        if j > 0 {
            visit(c - nx);
        }
        if j + 1 < ny {
            visit(c + nx);
        }
    }
    if mask.iter().zip(&seen).any(|(&m, &s)| !m && !s) {
        return Err(MicroError::MaskDegenerate("extracellular region not connected to the grounded sides"));
    }
    Ok(())
}

/// Energy density of the planar problem.
#[derive(Clone, Copy, Debug)]
pub enum PlanarDensity<'a> {
    Law(&'a ConductivityLaw),
    /// Effective medium acting on the cross-section gradient `(0, gx, gy)`.
    Effective(&'a SigmaHom),
}

impl PlanarDensity<'_> {
    fn potential(&self, g: [f64; 2]) -> f64 {
        match self {
            PlanarDensity::Law(law) => law.q(g[0].hypot(g[1])),
            PlanarDensity::Effective(s) => s.potential([0.0, g[0], g[1]]).unwrap_or(f64::INFINITY),
        }
    }

    fn flux(&self, g: [f64; 2]) -> ([f64; 2], [f64; 3]) {
        match self {
            PlanarDensity::Law(law) => {
                let eta = g[0].hypot(g[1]);
                let s = law.sigma(eta);
                let w = law.dsigma_over_eta(eta);
                ([s * g[0], s * g[1]], [s + w * g[0] * g[0], w * g[0] * g[1], s + w * g[1] * g[1]])
            }
            PlanarDensity::Effective(sh) => match sh.flux([0.0, g[0], g[1]], 1.0, false, &mut 0) {
                Ok((f, t)) => ([f[1], f[2]], [t[1][1], 0.5 * (t[1][2] + t[2][1]), t[2][2]]),
                Err(_) => ([f64::NAN; 2], [f64::NAN; 3]),
            },
        }
    }
}

fn value_at(x: &[f64], d: usize) -> f64 {
    if d == NO_DOF {
        0.0
    } else {
        x[d]
    }
}

fn cell_gradients(x: &[f64], c: &[usize; 4], inv_h: f64) -> ([f64; 2], [f64; 2]) {
    let [a, b, cc, d] = c.map(|k| value_at(x, k));
    ([(b - a) * inv_h, (d - b) * inv_h], [(d - cc) * inv_h, (cc - a) * inv_h])
}

fn scatter(out: &mut [f64], c: &[usize; 4], w1: [f64; 2], w2: [f64; 2], coef: f64) {
    let contrib = [
        -coef * (w1[0] + w2[1]),
        coef * (w1[0] - w1[1]),
        coef * (w2[1] - w2[0]),
        coef * (w1[1] + w2[0]),
    ];
    for (k, v) in c.iter().zip(contrib) {
        if *k != NO_DOF {
            out[*k] += v;
        }
    }
}

struct PlanarObjective<'a> {
    grid: &'a PlanarGrid,
    density: PlanarDensity<'a>,
    load: &'a [f64],
    tangents: Vec<[f64; 6]>,
    diag: Vec<f64>,
}

impl ConvexProblem for PlanarObjective<'_> {
    fn dim(&self) -> usize {
        self.grid.n_dof
    }

    fn value(&self, x: &[f64]) -> f64 {
        let area = 0.5 * self.grid.h * self.grid.h;
        let inv_h = 1.0 / self.grid.h;
        let mut acc = CompensatedSum::new();
        for c in self.grid.cells() {
            let (g1, g2) = cell_gradients(x, &c, inv_h);
            acc.add(area * (self.density.potential(g1) + self.density.potential(g2)));
        }
        for (xi, bi) in x.iter().zip(self.load) {
            acc.add(-xi * bi);
        }
        acc.value()
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let area = 0.5 * self.grid.h * self.grid.h;
        let inv_h = 1.0 / self.grid.h;
        let coef = area * inv_h;
        grad.iter_mut().zip(self.load).for_each(|(g, b)| *g = -b);
        let mut acc = CompensatedSum::new();
        for c in self.grid.cells() {
            let (g1, g2) = cell_gradients(x, &c, inv_h);
            acc.add(area * (self.density.potential(g1) + self.density.potential(g2)));
            let (f1, _) = self.density.flux(g1);
            let (f2, _) = self.density.flux(g2);
            scatter(grad, &c, f1, f2, coef);
        }
        for (xi, bi) in x.iter().zip(self.load) {
            acc.add(-xi * bi);
        }
        acc.value()
    }

    fn prepare_hessian(&mut self, x: &[f64]) {
        let inv_h = 1.0 / self.grid.h;
        self.tangents.clear();
        self.diag.clear();
        self.diag.resize(self.grid.n_dof, 0.0);
        let coef = 0.5;
        for c in self.grid.cells() {
            let (g1, g2) = cell_gradients(x, &c, inv_h);
            let (_, t1) = self.density.flux(g1);
            let (_, t2) = self.density.flux(g2);
            // diagonal of the element matrices (area / h^2 = 1/2)
            let d = [t1[0] + t2[2], t1[0] + t1[2] - 2.0 * t1[1], t2[0] + t2[2] - 2.0 * t2[1], t1[2] + t2[0]];
            for (k, v) in c.iter().zip(d) {
                if *k != NO_DOF {
                    self.diag[*k] += coef * v;
                }
            }
            self.tangents.push([t1[0], t1[1], t1[2], t2[0], t2[1], t2[2]]);
        }
    }

    fn hessian_apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let inv_h = 1.0 / self.grid.h;
        let coef = 0.5 * self.grid.h;
        for (t, c) in self.tangents.iter().zip(self.grid.cells()) {
            let (g1, g2) = cell_gradients(v, &c, inv_h);
            let w1 = [t[0] * g1[0] + t[1] * g1[1], t[1] * g1[0] + t[2] * g1[1]];
            let w2 = [t[3] * g2[0] + t[4] * g2[1], t[4] * g2[0] + t[5] * g2[1]];
            scatter(out, &c, w1, w2, coef);
        }
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        if self.diag.len() == r.len() {
            for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.diag) {
                *zi = if *di > 0.0 { ri / di } else { *ri };
            }
        } else {
            z.copy_from_slice(r);
        }
    }

    fn residual_norm(&self, grad: &[f64]) -> f64 {
        let inv_area = 1.0 / (self.grid.h * self.grid.h);
        grad.iter().fold(0.0, |m, g| m.max(g.abs())) * inv_area
    }
}

/// Minimizer of a planar problem.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarSolution {
    /// Nodal potential on the full grid, zero on grounded and masked nodes.
    pub u: Vec<f64>,
    pub energy: f64,
    /// Sup of the nodal residual per unit area.
    pub residual: f64,
    pub newton_iterations: usize,
}

fn planar_options(tol: f64) -> MinimizeOptions {
    MinimizeOptions { tol, max_iter: 200, max_cg_iter: 20_000, newton_only: true, ..MinimizeOptions::default() }
}

/// Minimizes `sum_T |T| W(grad u) - load . u` over the grid dofs.
pub fn solve_planar(grid: &PlanarGrid, density: PlanarDensity<'_>, load: &[f64], tol: f64) -> Result<PlanarSolution, MicroError> {
    if load.len() != grid.n_dof {
        return Err(MicroError::InvalidInput("load length does not match the dofs"));
    }
    let mut obj = PlanarObjective { grid, density, load, tangents: Vec::new(), diag: Vec::new() };
    let mut x = vec![0.0; grid.n_dof];
    let stats = minimize(&mut obj, &mut x, &planar_options(tol))?;
    Ok(PlanarSolution { u: grid.to_full(&x), energy: stats.value, residual: stats.residual, newton_iterations: stats.newton_iterations })
}

/// Objective of a planar problem at nodal values `x` (one per dof).
pub fn planar_energy(grid: &PlanarGrid, density: PlanarDensity<'_>, load: &[f64], x: &[f64]) -> f64 {
    PlanarObjective { grid, density, load, tangents: Vec::new(), diag: Vec::new() }.value(x)
}

/// Lumped boundary load of `J` on the top side `y = y1`.
pub fn top_flux_load(grid: &PlanarGrid, flux: &dyn Fn(f64) -> f64) -> Vec<f64> {
    let mut load = vec![0.0; grid.n_dof];
    let j = grid.ny;
    for i in 0..=grid.nx {
        let d = grid.dof[j * (grid.nx + 1) + i];
        if d != NO_DOF {
            let w = if i == 0 || i == grid.nx { 0.5 } else { 1.0 } * grid.h;
            load[d] += w * flux(grid.node_position(i, j)[0]);
        }
    }
    load
}

/// Arc quadrature of `eps sum_membrane f u`, each point assigned to the nearest dof.
fn membrane_load(grid: &PlanarGrid, fascicle: &ScaledFascicle, source: &dyn Fn([f64; 2]) -> f64, load: &mut [f64]) -> Result<(), MicroError> {
    for d in &fascicle.disks {
        let m = ((4.0 * PI * d.radius / grid.h).ceil() as usize).max(16);
        let w = fascicle.epsilon * 2.0 * PI * d.radius / m as f64;
        for q in 0..m {
            let a = 2.0 * PI * (q as f64 + 0.5) / m as f64;
            let p = [d.center[0] + d.radius * a.cos(), d.center[1] + d.radius * a.sin()];
            let k = grid.nearest_dof(p).ok_or(MicroError::MaskDegenerate("membrane point without a nearby extracellular node"))?;
            load[k] += w * source(p);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtracellularMicro {
    pub epsilon: f64,
    pub n_disks: usize,
    pub grid: PlanarGrid,
    pub solution: PlanarSolution,
}

impl ExtracellularMicro {
    pub fn energy(&self) -> f64 {
        self.solution.energy
    }
}

/// Solves the stationary extracellular problem on the perforated cross-section.
pub fn solve_stationary_extracellular(
    fascicle: &ScaledFascicle,
    law: &ConductivityLaw,
    source: &dyn Fn([f64; 2]) -> f64,
    flux: &dyn Fn(f64) -> f64,
    grid_h: f64,
    tol: f64,
) -> Result<ExtracellularMicro, MicroError> {
    let grid = PlanarGrid::new(fascicle.cross_section, grid_h, Some(fascicle))?;
    let mut load = top_flux_load(&grid, flux);
    membrane_load(&grid, fascicle, source, &mut load)?;
    let solution = solve_planar(&grid, PlanarDensity::Law(law), &load, tol)?;
    Ok(ExtracellularMicro { epsilon: fascicle.epsilon, n_disks: fascicle.disks.len(), grid, solution })
}

/// Homogenized extracellular problem on the unperforated section with
/// membrane source density `mu f`.
pub fn solve_homogenized_extracellular(
    section: Rect,
    medium: &SigmaHom,
    mu: f64,
    source: &dyn Fn([f64; 2]) -> f64,
    flux: &dyn Fn(f64) -> f64,
    grid_h: f64,
    tol: f64,
) -> Result<PlanarSolution, MicroError> {
    let grid = PlanarGrid::new(section, grid_h, None)?;
    let mut load = top_flux_load(&grid, flux);
    let w = grid.nx + 1;
    for (idx, &d) in grid.dof.iter().enumerate() {
        if d == NO_DOF {
            continue;
        }
        let (i, j) = (idx % w, idx / w);
        let wy = if j == 0 || j == grid.ny { 0.5 } else { 1.0 };
        load[d] += wy * grid.h * grid.h * mu * source(grid.node_position(i, j));
    }
    solve_planar(&grid, PlanarDensity::Effective(medium), &load, tol)
}

/// One axon cable solution on the nodes `x1 = i h`.
#[derive(Clone, Debug, PartialEq)]
pub struct AxonSolution {
    pub center: [f64; 2],
    pub radius: f64,
    pub class: usize,
    pub u: Vec<f64>,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntracellularMicro {
    pub epsilon: f64,
    pub grid_h: f64,
    pub axons: Vec<AxonSolution>,
    pub energy: f64,
}

/// Minimizes `int_0^L a Q(|u'|) + c(x) u` with `u(0) = u(L) = 0` by damped Newton.
pub fn solve_cable(
    law: &ConductivityLaw,
    weight: f64,
    load: &dyn Fn(f64) -> f64,
    length: f64,
    grid_h: f64,
    tol: f64,
) -> Result<(Vec<f64>, f64), MicroError> {
    let n = (length / grid_h).round() as usize;
    if n < 2 || (n as f64 * grid_h - length).abs() > 1e-9 * length || !(weight > 0.0) {
        return Err(MicroError::InvalidInput("cable grid must divide the length"));
    }
    let h = length / n as f64;
    let c: Vec<f64> = (1..n).map(|i| h * load(i as f64 * h)).collect();
    let m = n - 1;
    let mut u = vec![0.0; m];
    let energy = |u: &[f64]| {
        let mut acc = CompensatedSum::new();
        for s in 0..n {
            let a = if s == 0 { 0.0 } else { u[s - 1] };
            let b = if s == m { 0.0 } else { u[s] };
            acc.add(h * weight * law.q(((b - a) / h).abs()));
        }
        for (ui, ci) in u.iter().zip(&c) {
            acc.add(ui * ci);
        }
        acc.value()
    };
    let mut f = energy(&u);
    for it in 0..100 {
        let mut grad = c.clone();
        let mut diag = vec![0.0; m];
        let mut off = vec![0.0; m.saturating_sub(1)];
        for s in 0..n {
            let a = if s == 0 { 0.0 } else { u[s - 1] };
            let b = if s == m { 0.0 } else { u[s] };
            let g = (b - a) / h;
            let eta = g.abs();
            let flux = weight * law.sigma(eta) * g;
            let k = weight * law.flux_derivative(eta) / h;
            if s > 0 {
                grad[s - 1] -= flux;
                diag[s - 1] += k;
            }
            if s < m {
                grad[s] += flux;
                diag[s] += k;
            }
            if s > 0 && s < m {
                off[s - 1] -= k;
            }
        }
        let res = grad.iter().fold(0.0, |a: f64, g| a.max(g.abs())) / h;
        if res <= tol {
            return Ok((u, f));
        }
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = solve_tridiagonal(&off, &diag, &off, &rhs).ok_or(MicroError::NotFinite)?;
        let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a + alpha * s).collect();
            let ft = energy(&trial);
            if ft <= f + 1e-4 * alpha * slope || ft <= f + 64.0 * f64::EPSILON * (1.0 + f.abs()) {
                u = trial;
                f = ft;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(MicroError::NonConvergence { iterations: it + 1, residual: res });
        }
    }
    Err(MicroError::NonConvergence { iterations: 100, residual: f64::NAN })
}

/// Solves the per-axon stationary intracellular problems.
pub fn solve_stationary_intracellular(
    fascicle: &ScaledFascicle,
    law: &ConductivityLaw,
    source: &dyn Fn(f64, [f64; 2]) -> f64,
    grid_h: f64,
    tol: f64,
) -> Result<IntracellularMicro, MicroError> {
    let eps = fascicle.epsilon;
    let mut axons = Vec::with_capacity(fascicle.disks.len());
    let mut total = CompensatedSum::new();
    for d in &fascicle.disks {
        let area = PI * d.radius * d.radius;
        let perimeter = 2.0 * PI * d.radius;
        let center = d.center;
        let (u, energy) =
            solve_cable(law, area, &|x1| eps * perimeter * source(x1, center), fascicle.axial_length, grid_h, tol)?;
        total.add(energy);
        axons.push(AxonSolution { center, radius: d.radius, class: d.class, u, energy });
    }
    Ok(IntracellularMicro { epsilon: eps, grid_h, axons, energy: total.value() })
}

/// Limit intracellular energy `int_S sum_k mu_k min int (r_k / 2) Q(|u'|) + f u`,
/// with the section integral evaluated by the midpoint rule on `quad x quad` points.
pub fn homogenized_intracellular_energy(
    model: &GeometryModel,
    law: &ConductivityLaw,
    source: &dyn Fn(f64, [f64; 2]) -> f64,
    section: Rect,
    axial_length: f64,
    grid_h: f64,
    quad: usize,
    tol: f64,
) -> Result<f64, MicroError> {
    if quad == 0 {
        return Err(MicroError::InvalidInput("quadrature needs at least one point"));
    }
    let cell = section.area() / (quad * quad) as f64;
    let mut total = CompensatedSum::new();
    for k in 0..model.n_classes() {
        let mu = model.palm_mass(k);
        let half_r = 0.5 * model.classes[k].radius;
        for j in 0..quad {
            for i in 0..quad {
                let p = [
                    section.x0 + (i as f64 + 0.5) / quad as f64 * section.width(),
                    section.y0 + (j as f64 + 0.5) / quad as f64 * section.height(),
                ];
                let (_, e) = solve_cable(law, half_r, &|x1| source(x1, p), axial_length, grid_h, tol)?;
                total.add(cell * mu * e);
            }
        }
    }
    Ok(total.value())
}

/// Settings of an extracellular sweep over `epsilon`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MicroSweepSpec {
    pub epsilons: Vec<f64>,
    pub realizations: usize,
    /// Grid cells per lattice period.
    pub cells_per_period: usize,
    pub section: Rect,
    pub source: PlanarField,
    /// Current through the top side, evaluated at `(x, y1)`.
    pub flux: PlanarField,
    pub seed: u64,
    pub tol: f64,
    /// Grid spacing of the homogenized solve.
    pub reference_h: f64,
    /// Lattice shifts averaged in the effective conductivity.
    pub reference_shifts: usize,
}

impl Default for MicroSweepSpec {
    fn default() -> Self {
        Self {
            epsilons: vec![0.25, 0.125, 0.0625],
            realizations: 4,
            cells_per_period: 16,
            section: Rect::new(0.0, 0.0, 1.0, 1.0),
            source: PlanarField { constant: 1.0, linear: [0.0, 0.0], amplitude: 0.5, frequency: [1.0, 1.0] },
            flux: PlanarField { constant: 0.0, linear: [0.0, 0.0], amplitude: 1.0, frequency: [1.0, 0.5] },
            seed: 2024,
            tol: 1e-9,
            reference_h: 1.0 / 256.0,
            reference_shifts: 16,
        }
    }
}

impl MicroSweepSpec {
    pub fn validate(&self) -> Result<(), MicroError> {
        if self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(MicroError::InvalidInput("epsilon values must be positive"));
        }
        if self.cells_per_period < 4 {
            return Err(MicroError::InvalidInput("at least 4 cells per period are needed"));
        }
        if !(self.tol > 0.0) || !(self.reference_h > 0.0) || self.reference_shifts == 0 {
            return Err(MicroError::InvalidInput("tolerance, reference spacing and shifts must be positive"));
        }
        Ok(())
    }

    pub fn grid_h(&self, epsilon: f64) -> f64 {
        epsilon / self.cells_per_period as f64
    }
}

/// Scaled geometry of realization `index` at `epsilon`.
pub fn sweep_fascicle(model: &GeometryModel, spec: &MicroSweepSpec, epsilon: f64, index: usize) -> Result<ScaledFascicle, MicroError> {
    let s = spec.section;
    let window = Rect::new(s.x0 / epsilon - 1.0, s.y0 / epsilon - 1.0, s.x1 / epsilon + 1.0, s.y1 / epsilon + 1.0);
    let real = sample_realization(model, window, derive_seed(spec.seed, index as u64))?;
    Ok(rescale_and_clip(&real, epsilon, s, 1.0, model.min_gap())?)
}

/// Extracellular solve of realization `index` at `epsilon`.
pub fn sweep_sample(
    model: &GeometryModel,
    law: &ConductivityLaw,
    spec: &MicroSweepSpec,
    epsilon: f64,
    index: usize,
) -> Result<ExtracellularMicro, MicroError> {
    let fascicle = sweep_fascicle(model, spec, epsilon, index)?;
    let y1 = spec.section.y1;
    let source = |p: [f64; 2]| spec.source.eval(p);
    let flux = |x: f64| spec.flux.eval([x, y1]);
    solve_stationary_extracellular(&fascicle, law, &source, &flux, spec.grid_h(epsilon), spec.tol)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomogenizedReference {
    /// Shift-averaged isotropic effective conductivity.
    pub sigma_eff: f64,
    pub sigma_eff_sd: f64,
    pub mu: f64,
    pub energy: f64,
}

/// Homogenized energy for a constant law, with the effective conductivity
/// computed from unit-cell problems at the sweep's resolution.
pub fn homogenized_reference(model: &GeometryModel, law: &ConductivityLaw, spec: &MicroSweepSpec) -> Result<HomogenizedReference, MicroError> {
    spec.validate()?;
    if !matches!(law.kind(), LawKind::Constant { .. }) {
        return Err(MicroError::InvalidInput("the homogenized reference needs a constant law"));
    }
    let opts = MinimizeOptions { tol: 1e-10, ..MinimizeOptions::default() };
    let mut samples = Vec::with_capacity(spec.reference_shifts);
    for s in 0..spec.reference_shifts {
        let real = sample_periodic(model, 1, derive_seed(spec.seed ^ 0x5eed, s as u64))?;
        let cell = CellProblem::new(&real, law.clone(), 1.0 / spec.cells_per_period as f64)?;
        let a = cell.solve([0.0, 1.0, 0.0], &opts)?.energy;
        let b = cell.solve([0.0, 0.0, 1.0], &opts)?.energy;
        samples.push(a + b);
    }
    let (sigma_eff, _) = mean_and_se(&samples);
    let sigma_eff_sd = sample_variance(&samples).sqrt();
    let mu: f64 = (0..model.n_classes()).map(|k| model.palm_mass(k)).sum();
    let medium = SigmaHom::Linear { longitudinal: sigma_eff, transverse: sigma_eff };
    let y1 = spec.section.y1;
    let source = |p: [f64; 2]| spec.source.eval(p);
    let flux = |x: f64| spec.flux.eval([x, y1]);
    let sol = solve_homogenized_extracellular(spec.section, &medium, mu, &source, &flux, spec.reference_h, spec.tol)?;
    Ok(HomogenizedReference { sigma_eff, sigma_eff_sd, mu, energy: sol.energy })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub realizations: usize,
    pub mean_energy: f64,
    pub mean_gap: f64,
    /// Sample standard deviation of the gap over realizations.
    pub gap_sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvergenceReport {
    pub reference: f64,
    /// Rows ordered by decreasing `epsilon`.
    pub rows: Vec<ConvergenceRow>,
    /// Every halving shrinks the mean gap by more than the summed spreads.
    pub pass: bool,
}

/// Gap table of `(epsilon, energy)` samples against a reference energy.
pub fn convergence_report(samples: &[(f64, f64)], reference: f64) -> Result<ConvergenceReport, MicroError> {
    let mut eps: Vec<f64> = samples.iter().map(|s| s.0).collect();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    if eps.len() < 3 {
        return Err(MicroError::InsufficientData("at least three epsilon values are needed"));
    }
    let mut rows = Vec::with_capacity(eps.len());
    for &e in &eps {
        let energies: Vec<f64> = samples.iter().filter(|s| s.0 == e).map(|s| s.1).collect();
        if energies.len() < 2 {
            return Err(MicroError::InsufficientData("every epsilon needs at least two realizations"));
        }
        let gaps: Vec<f64> = energies.iter().map(|v| (v - reference).abs()).collect();
        rows.push(ConvergenceRow {
            epsilon: e,
            realizations: energies.len(),
            mean_energy: mean_and_se(&energies).0,
            mean_gap: mean_and_se(&gaps).0,
            gap_sd: sample_variance(&gaps).sqrt(),
        });
    }
    let pass = rows.windows(2).all(|w| w[1].mean_gap < w[0].mean_gap - (w[0].gap_sd + w[1].gap_sd));
    Ok(ConvergenceReport { reference, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Rect {
        Rect::new(0.0, 0.0, 1.0, 1.0)
    }

    #[test]
    fn zero_data_gives_zero() {
        let grid = PlanarGrid::new(unit(), 1.0 / 8.0, None).unwrap();
        let law = ConductivityLaw::constant(1.0);
        let sol = solve_planar(&grid, PlanarDensity::Law(&law), &vec![0.0; grid.n_dof()], 1e-12).unwrap();
        assert!(sol.u.iter().all(|v| *v == 0.0));
        assert_eq!(sol.energy, 0.0);
    }

    #[test]
    fn cable_matches_parabola() {
        let law = ConductivityLaw::constant(2.0);
        let (u, e) = solve_cable(&law, 0.5, &|_| 1.0, 2.0, 0.05, 1e-12).unwrap();
        // a sigma u'' = c, u(0) = u(L) = 0
        let k = 1.0 / (2.0 * 0.5 * 2.0);
        for (i, v) in u.iter().enumerate() {
            let x = (i + 1) as f64 * 0.05;
            assert!((v - k * x * (x - 2.0)).abs() < 1e-12);
        }
        let exact = -8.0 / (24.0 * 0.5 * 2.0);
        assert!((e - exact).abs() < 1e-3 * exact.abs());
    }

    #[test]
    fn report_needs_enough_data() {
        let one = [(0.25, 1.0), (0.125, 1.0), (0.0625, 1.0)];
        assert!(matches!(convergence_report(&one, 0.0), Err(MicroError::InsufficientData(_))));
        let two = [(0.25, 1.0), (0.25, 1.0), (0.125, 1.0), (0.125, 1.0)];
        assert!(matches!(convergence_report(&two, 0.0), Err(MicroError::InsufficientData(_))));
    }

    #[test]
    fn isolated_fluid_is_rejected() {
        let mut mask = vec![true; 16];
        mask[5] = false;
        assert!(matches!(PlanarGrid::from_mask(Rect::new(0.0, 0.0, 4.0, 4.0), 4, 4, mask), Err(MicroError::MaskDegenerate(_))));
    }
}
