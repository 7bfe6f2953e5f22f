//! Homogenized multidomain model: one nonlinear cable equation per axon class
//! coupled through the effective extracellular potential.
//!
//! With class weights `(r_k, Lambda_k, mu_k)`, `Lambda_k = (r_k / 2) mu_k`, the
//! unknowns are the extracellular potential `u_e` and the membrane potentials
//! `v_k`, with intracellular potentials `u_ik = v_k + u_e`:
//!
//! ```text
//! mu_k (c_m dv_k/dt + I_ion(v_k, g_k)) = Lambda_k d1(sigma_i(|d1 u_ik|) d1 u_ik)
//! sum_k Lambda_k d1(sigma_i d1 u_ik) + div sigma_hom(grad u_e) = 0,  flux J on the lateral side
//! dg_k/dt = theta v_k + a - b g_k
//! ```
//!
//! Space is discretized with continuous piecewise-linear elements on a uniform
//! node grid (intervals in 1D, right triangles in 2D) and lumped mass. Each time
//! step solves the coupled system for `(u_e, v_1, .., v_K)` by damped Newton;
//! the step equations are the gradient of a convex energy, so the Jacobian is
//! symmetric positive definite and is factored as a band matrix.

mod assembly;
mod run;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::cell_problem::EffectiveLawTable;
use crate::conductivity::ConductivityLaw;
use crate::membrane::{ClassWeights, FhnParams, MembraneError};

pub use assembly::{Discretization, StepStats};
pub use run::{
    energy_diagnostics, front_position, front_speed, EnergyDiagnostics, MacroSolver, TimeSeries,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacroError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },
    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("gradient ({xi1}, {xit}) outside the effective law table")]
    TableRange { xi1: f64, xit: f64 },
    #[error("step at t = {t} rejected: {reason}")]
    StepRejected { t: f64, reason: String },
    #[error(transparent)]
    Membrane(#[from] MembraneError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scheme {
    /// Exact recovery update, explicit ionic current, implicit diffusion.
    Imex,
    /// Fully implicit step of the exponentially rescaled system.
    ImplicitLambda,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LambdaChoice {
    Auto,
    Value(f64),
}

/// Boundary condition of the intracellular potentials at the fascicle ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum IntracellularBc {
    /// No axial current leaves the axons.
    Sealed,
    /// `u_ik = 0`.
    Dirichlet,
}

/// Effective extracellular conductivity.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SigmaHom {
    /// `diag(longitudinal, transverse, transverse)`.
    Linear { longitudinal: f64, transverse: f64 },
    /// Isotropic `sigma(|xi|) xi`.
    Law(ConductivityLaw),
    Table(Box<EffectiveLawTable>),
}

type FluxTangent = ([f64; 3], [[f64; 3]; 3]);

impl SigmaHom {
    /// `sigma_hom(s xi) / s` and its Jacobian in `xi`. Gradients outside a
    /// table are clamped (counted in `clamps`) when `clamp` is set.
    pub fn flux(&self, xi: [f64; 3], scale: f64, clamp: bool, clamps: &mut usize) -> Result<FluxTangent, MacroError> {
        match self {
            SigmaHom::Linear { longitudinal: l, transverse: t } => {
                Ok(([l * xi[0], t * xi[1], t * xi[2]], [[*l, 0.0, 0.0], [0.0, *t, 0.0], [0.0, 0.0, *t]]))
            }
            SigmaHom::Law(law) => {
                let eta = scale * crate::conductivity::norm3(xi);
                let (s, d) = law.sigma_and_derivative(eta);
                let w = if eta > 0.0 { d * scale * scale / eta } else { 0.0 };
                let mut tan = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        tan[i][j] = w * xi[i] * xi[j] + if i == j { s } else { 0.0 };
                    }
                }
                Ok(([s * xi[0], s * xi[1], s * xi[2]], tan))
            }
            SigmaHom::Table(table) => {
                let mut arg = [scale * xi[0], scale * xi[1], scale * xi[2]];
                let range = |a: [f64; 3]| MacroError::TableRange { xi1: a[0], xit: a[1].hypot(a[2]) };
                if !table.in_range(arg) {
                    if !clamp {
                        return Err(range(arg));
                    }
                    *clamps += 1;
                    arg = table.clamp(arg);
                }
                let step = 1e-6 * table.max_xi1().max(table.max_xit()).max(1e-300);
                let f = table.interpolate_sigma_hom(arg).map_err(|_| range(arg))?;
                let t = table.tangent(arg, step).map_err(|_| range(arg))?;
                Ok(([f[0] / scale, f[1] / scale, f[2] / scale], t))
            }
        }
    }

    /// Effective energy density `Phi(xi)`.
    pub fn potential(&self, xi: [f64; 3]) -> Result<f64, MacroError> {
        match self {
            SigmaHom::Linear { longitudinal: l, transverse: t } => {
                Ok(0.5 * (l * xi[0] * xi[0] + t * (xi[1] * xi[1] + xi[2] * xi[2])))
            }
            SigmaHom::Law(law) => Ok(law.q(crate::conductivity::norm3(xi))),
            SigmaHom::Table(table) => table
                .interpolate_phi(xi)
                .map_err(|_| MacroError::TableRange { xi1: xi[0], xit: xi[1].hypot(xi[2]) }),
        }
    }
}

/// Boundary current `J(t, x1) = amplitude * ramp(t) * (bump(x1 - anode) - bump(x1 - cathode))`
/// with `cos^2` bumps of half-width `width` and a `C^1` smoothstep ramp.
///
/// In 2D the current enters through the lateral side `x2 = W`; in 1D it is an
/// extracellular source density.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stimulus {
    pub amplitude: f64,
    pub anode: f64,
    pub cathode: Option<f64>,
    pub width: f64,
    pub t_on: f64,
    pub t_off: f64,
    pub ramp: f64,
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

impl Stimulus {
    pub fn time_profile(&self, t: f64) -> f64 {
        if t < self.t_on || t > self.t_off {
            return 0.0;
        }
        if self.ramp <= 0.0 {
            return 1.0;
        }
        smoothstep((t - self.t_on) / self.ramp).min(smoothstep((self.t_off - t) / self.ramp))
    }

    fn bump(&self, x: f64, center: f64) -> f64 {
        let d = (x - center) / self.width;
        if d.abs() >= 1.0 {
            0.0
        } else {
            let c = (0.5 * core::f64::consts::PI * d).cos();
            c * c
        }
    }

    pub fn value(&self, t: f64, x1: f64) -> f64 {
        let ramp = self.time_profile(t);
        if ramp == 0.0 {
            return 0.0;
        }
        let cathode = self.cathode.map_or(0.0, |c| self.bump(x1, c));
        self.amplitude * ramp * (self.bump(x1, self.anode) - cathode)
    }
}

/// Initial membrane state, shared by all classes.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitialProfile {
    /// Rest state of the membrane.
    Rest,
    Constant { v: f64, g: f64 },
    /// Rest state plus a `cos^2` bump in `v`.
    Bump { amplitude: f64, center: f64, width: f64 },
    /// Excited state for `x1 < position`, rest beyond, joined by a `tanh` profile.
    Front { position: f64, width: f64 },
}

/// Upper limits on the energy diagnostics; exceeding one rejects the step.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ceilings {
    pub sup_v4: f64,
    pub cum_dv2: f64,
    pub sup_g2: f64,
    pub cum_dg2: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MacroConfig {
    pub length: f64,
    /// Transverse extent; `None` for a 1D fascicle.
    pub width: Option<f64>,
    /// Nodes along `x1`, including both ends.
    pub nx: usize,
    /// Nodes along `x2` (ignored in 1D).
    pub ny: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Snapshot cadence in steps.
    pub snapshot_every: usize,
    pub scheme: Scheme,
    pub lambda: LambdaChoice,
    pub classes: Vec<ClassWeights>,
    pub fhn: FhnParams,
    pub sigma_i: ConductivityLaw,
    pub sigma_hom: SigmaHom,
    pub intracellular_bc: IntracellularBc,
    pub stimulus: Option<Stimulus>,
    pub initial: InitialProfile,
    /// Strong-form residual tolerance of each nonlinear solve.
    pub tol: f64,
    pub max_newton: usize,
    pub ceilings: Option<Ceilings>,
    /// Clamp gradients outside the effective law table instead of failing.
    pub clamp_to_table: bool,
    /// Hold `u_e = 0`, emulating a perfectly conducting extracellular space.
    pub ground_extracellular: bool,
}

impl MacroConfig {
    /// A 1D configuration with defaults for everything but the geometry.
    pub fn one_d(length: f64, nx: usize, classes: Vec<ClassWeights>) -> Self {
        Self {
            length,
            width: None,
            nx,
            ny: 1,
            dt: 0.01,
            t_end: 1.0,
            snapshot_every: 10,
            scheme: Scheme::Imex,
            lambda: LambdaChoice::Auto,
            classes,
            fhn: FhnParams::default(),
            sigma_i: ConductivityLaw::constant(1.0),
            sigma_hom: SigmaHom::Linear { longitudinal: 1.0, transverse: 1.0 },
            intracellular_bc: IntracellularBc::Sealed,
            stimulus: None,
            initial: InitialProfile::Rest,
            tol: 1e-10,
            max_newton: 50,
            ceilings: None,
            clamp_to_table: true,
            ground_extracellular: false,
        }
    }

    /// A 2D configuration on `(0, length) x (0, width)`.
    pub fn two_d(length: f64, width: f64, nx: usize, ny: usize, classes: Vec<ClassWeights>) -> Self {
        Self { width: Some(width), ny, ..Self::one_d(length, nx, classes) }
    }

    pub fn is_2d(&self) -> bool {
        self.width.is_some()
    }

    pub fn validate(&self) -> Result<(), MacroError> {
        let bad = |m: &str| Err(MacroError::InvalidConfig(m.into()));
        if !(self.length > 0.0 && self.length.is_finite()) {
            return bad("domain length must be positive");
        }
        if let Some(w) = self.width {
            if !(w > 0.0 && w.is_finite()) {
                return bad("domain width must be positive");
            }
            if self.ny < 2 {
                return bad("a 2D grid needs at least 2 nodes across");
            }
        }
        if self.nx < 3 {
            return bad("grid needs at least 3 nodes along the fascicle");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be non-negative");
        }
        if self.snapshot_every == 0 {
            return bad("snapshot cadence must be positive");
        }
        if self.classes.is_empty() {
            return bad("at least one axon class is required");
        }
        ClassWeights::check(&self.classes)?;
        self.fhn.validate()?;
        if let LambdaChoice::Value(l) = self.lambda {
            let bound = crate::membrane::lambda_bound(&self.fhn);
            if self.scheme == Scheme::ImplicitLambda && l < bound {
                return Err(MembraneError::LambdaTooSmall { lambda: l, bound }.into());
            }
        }
        if let SigmaHom::Linear { longitudinal, transverse } = self.sigma_hom {
            if !(longitudinal > 0.0 && transverse > 0.0) {
                return bad("effective conductivity must be positive");
            }
        }
        if let Some(s) = &self.stimulus {
            if !(s.width > 0.0) || !(s.t_off >= s.t_on) || !(s.ramp >= 0.0) || !s.amplitude.is_finite() {
                return bad("stimulus needs positive width, t_off >= t_on and a non-negative ramp");
            }
        }
        if !(self.tol > 0.0) || self.max_newton == 0 {
            return bad("solver tolerance and iteration cap must be positive");
        }
        Ok(())
    }

    pub fn lambda_value(&self) -> f64 {
        match self.lambda {
            LambdaChoice::Auto => crate::membrane::lambda_bound(&self.fhn),
            LambdaChoice::Value(l) => l,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Time step keeping `dt * |dI_ion/dv| <= 0.5` for `|v| <= v_max`.
pub fn suggested_dt(v_max: f64, c_m: f64) -> f64 {
    0.5 * c_m / (v_max * v_max - 1.0).abs().max(1.0)
}

/// Macroscopic fields at one time; node index `i * ny + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroState {
    pub t: f64,
    pub u_e: Vec<f64>,
    /// `v[k][node]`.
    pub v: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
}

impl MacroState {
    /// Intracellular potential of class `k`, `v_k + u_e`.
    pub fn u_i(&self, k: usize) -> Vec<f64> {
        self.v[k].iter().zip(&self.u_e).map(|(v, u)| v + u).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.v.len()
    }

    /// Largest pointwise difference to `other` over all fields.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let mut m = d(&self.u_e, &other.u_e);
        for k in 0..self.v.len() {
            m = m.max(d(&self.v[k], &other.v[k])).max(d(&self.g[k], &other.g[k]));
        }
        m
    }
}
