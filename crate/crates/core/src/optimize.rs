//! Minimization of smooth convex objectives: preconditioned nonlinear
//! conjugate gradients for the global phase, then inexact Newton with a PCG
//! inner solve, both globalized by Armijo backtracking.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::linalg::{dot, pcg};

/// A smooth convex objective with a matrix-free Hessian.
pub trait ConvexProblem {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the objective value.
    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Freezes the Hessian at `x` for subsequent [`ConvexProblem::hessian_apply`] calls.
    fn prepare_hessian(&mut self, x: &[f64]);

    fn hessian_apply(&self, v: &[f64], out: &mut [f64]);

    /// Symmetric positive approximation of the inverse Hessian.
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }

    /// Convergence measure of a gradient (defaults to its sup-norm).
    fn residual_norm(&self, grad: &[f64]) -> f64 {
        grad.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    /// Maps an iterate to its canonical representative (gauge fixing).
    fn normalize(&self, _x: &mut [f64]) {}
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeOptions {
    /// Target for [`ConvexProblem::residual_norm`].
    pub tol: f64,
    /// Total iteration cap (conjugate gradient plus Newton).
    pub max_iter: usize,
    /// Hand over to Newton once the residual drops by this factor.
    pub switch_ratio: f64,
    /// Cap on the nonlinear conjugate gradient phase.
    pub max_ncg_iter: usize,
    /// Cap on inner PCG iterations per Newton step.
    pub max_cg_iter: usize,
    /// Skip the nonlinear conjugate gradient phase.
    pub newton_only: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            switch_ratio: 0.5,
            max_ncg_iter: 200,
            max_cg_iter: 1000,
            newton_only: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinimizeStats {
    pub ncg_iterations: usize,
    pub newton_iterations: usize,
    pub cg_iterations: usize,
    pub residual: f64,
    pub value: f64,
    /// Objective after every accepted iterate, starting with the initial guess.
    pub value_history: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MinimizeError {
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64, stats: MinimizeStats },
    #[error("objective or gradient is not finite")]
    NotFinite,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

/// Noise floor for objective comparisons near the optimum.
fn value_noise(f: f64) -> f64 {
    64.0 * f64::EPSILON * (1.0 + f.abs())
}

struct Workspace {
    g: Vec<f64>,
    trial: Vec<f64>,
    g_trial: Vec<f64>,
}

enum LineSearch {
    Accepted { by_noise: bool },
    Stalled,
}

fn armijo<P: ConvexProblem>(
    p: &P,
    x: &[f64],
    f: f64,
    slope: f64,
    dir: &[f64],
    alpha0: f64,
    ws: &mut Workspace,
    accept_noise: bool,
) -> LineSearch {
    let mut alpha = alpha0;
    for _ in 0..MAX_BACKTRACK {
        for i in 0..x.len() {
            ws.trial[i] = x[i] + alpha * dir[i];
        }
        let ft = p.value(&ws.trial);
        if ft.is_finite() && ft <= f + ARMIJO_C1 * alpha * slope {
            return LineSearch::Accepted { by_noise: false };
        }
        if accept_noise && ft.is_finite() && ft <= f + value_noise(f) {
            return LineSearch::Accepted { by_noise: true };
        }
        alpha *= 0.5;
    }
    LineSearch::Stalled
}

/// Minimizes `p` starting from `x` (overwritten with the minimizer).
pub fn minimize<P: ConvexProblem>(p: &mut P, x: &mut [f64], opts: &MinimizeOptions) -> Result<MinimizeStats, MinimizeError> {
    let n = p.dim();
    let mut ws = Workspace { g: vec![0.0; n], trial: vec![0.0; n], g_trial: vec![0.0; n] };
    let mut stats = MinimizeStats::default();
    p.normalize(x);
    let mut f = p.gradient(x, &mut ws.g);
    if !f.is_finite() {
        return Err(MinimizeError::NotFinite);
    }
    stats.value_history.push(f);
    let mut res = p.residual_norm(&ws.g);
    let res0 = res;
    let mut z = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut hd = vec![0.0; n];

    // nonlinear conjugate gradients (Polak-Ribiere+)
    let mut rz_prev = 0.0;
    let mut g_prev = vec![0.0; n];
    while res > opts.tol && !opts.newton_only {
        if stats.ncg_iterations >= opts.max_ncg_iter || res <= opts.switch_ratio * res0 {
            break;
        }
        p.precondition(&ws.g, &mut z);
        let rz = dot(&ws.g, &z);
        let beta = if stats.ncg_iterations == 0 || rz_prev == 0.0 {
            0.0
        } else {
            let y: f64 = dot(&z, &ws.g) - dot(&z, &g_prev);
            (y / rz_prev).max(0.0)
        };
        for i in 0..n {
            dir[i] = -z[i] + beta * dir[i];
        }
        let mut slope = dot(&ws.g, &dir);
        if !(slope < 0.0) {
            for i in 0..n {
                dir[i] = -z[i];
            }
            slope = -rz;
        }
        p.prepare_hessian(x);
        p.hessian_apply(&dir, &mut hd);
        let curv = dot(&dir, &hd);
        let alpha0 = if curv > 0.0 { -slope / curv } else { 1.0 };
        match armijo(p, x, f, slope, &dir, alpha0, &mut ws, false) {
            LineSearch::Accepted { .. } => {}
            LineSearch::Stalled => break,
        }
        x.copy_from_slice(&ws.trial);
        p.normalize(x);
        g_prev.copy_from_slice(&ws.g);
        rz_prev = rz;
        f = p.gradient(x, &mut ws.g);
        if !f.is_finite() {
            return Err(MinimizeError::NotFinite);
        }
        stats.value_history.push(f);
        res = p.residual_norm(&ws.g);
        stats.ncg_iterations += 1;
    }

    // inexact Newton
    let mut step = vec![0.0; n];
    while res > opts.tol {
        let total = stats.ncg_iterations + stats.newton_iterations;
        if total >= opts.max_iter {
            stats.residual = res;
            stats.value = f;
            return Err(MinimizeError::NonConvergence { iterations: total, residual: res, stats });
        }
        p.prepare_hessian(x);
        let forcing = (res / res0.max(f64::MIN_POSITIVE)).sqrt().clamp(1e-10, 0.1);
        let rhs: Vec<f64> = ws.g.iter().map(|g| -g).collect();
        step.iter_mut().for_each(|s| *s = 0.0);
        let out = pcg(
            |v, o| p.hessian_apply(v, o),
            |r, zz| p.precondition(r, zz),
            &rhs,
            &mut step,
            forcing,
            opts.max_cg_iter,
        );
        stats.cg_iterations += out.iterations;
        let mut slope = dot(&ws.g, &step);
        if !(slope < 0.0) || out.iterations == 0 {
            p.precondition(&ws.g, &mut step);
            step.iter_mut().for_each(|s| *s = -*s);
            slope = dot(&ws.g, &step);
        }
        let by_noise = match armijo(p, x, f, slope, &step, 1.0, &mut ws, true) {
            LineSearch::Accepted { by_noise } => Some(by_noise),
            LineSearch::Stalled => None,
        };
        stats.newton_iterations += 1;
        let mut accepted = false;
        if let Some(by_noise) = by_noise {
            p.normalize(&mut ws.trial);
            let ft = p.gradient(&ws.trial, &mut ws.g_trial);
            if !ft.is_finite() {
                return Err(MinimizeError::NotFinite);
            }
            let rt = p.residual_norm(&ws.g_trial);
            // a step whose decrease is below rounding must still shrink the residual
            if !by_noise || rt < res {
                x.copy_from_slice(&ws.trial);
                core::mem::swap(&mut ws.g, &mut ws.g_trial);
                f = ft;
                res = rt;
                stats.value_history.push(f);
                accepted = true;
            }
        }
        if !accepted {
            stats.residual = res;
            stats.value = f;
            let iterations = stats.ncg_iterations + stats.newton_iterations;
            return Err(MinimizeError::NonConvergence { iterations, residual: res, stats });
        }
    }
    stats.residual = res;
    stats.value = f;
    Ok(stats)
}
