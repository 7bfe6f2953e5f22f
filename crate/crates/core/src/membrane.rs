//! FitzHugh-Nagumo membrane kinetics and the exponential rescaling that turns
//! the membrane problem into a monotone one.
//!
//! The membrane potential `v` and recovery variable `g` evolve as
//! `c_m v' = -I_ion(v, g)` (plus any diffusive coupling) and
//! `g' = theta v + a - b g`, with `I_ion(v, g) = v^3 / 3 - v - g`.
//! Writing `v = e^{lambda t} v_hat`, `g = e^{lambda t} g_hat` gives the rescaled
//! current [`i_ion_hat`], which is monotone jointly with the recovery equation
//! once `lambda >= lambda_bound`.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::geometry::GeometryModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MembraneError {
    #[error("invalid membrane parameters: {0}")]
    InvalidParams(&'static str),
    #[error("lambda {lambda} is below the monotonicity bound {bound}")]
    LambdaTooSmall { lambda: f64, bound: f64 },
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },
    #[error("class weights violate lambda = (r / 2) mu for class {class}")]
    WeightMismatch { class: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FhnParams {
    pub c_m: f64,
    pub theta: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for FhnParams {
    fn default() -> Self {
        Self { c_m: 1.0, theta: 0.08, a: 0.7, b: 0.8 }
    }
}

impl FhnParams {
    pub fn new(c_m: f64, theta: f64, a: f64, b: f64) -> Result<Self, MembraneError> {
        let p = Self { c_m, theta, a, b };
        p.validate()?;
        Ok(p)
    }

    /// Bistable parameter set used for travelling fronts.
    pub fn bistable() -> Self {
        Self { c_m: 1.0, theta: 0.08, a: 0.2, b: 0.8 }
    }

    pub fn validate(&self) -> Result<(), MembraneError> {
        if !(self.c_m > 0.0 && self.c_m.is_finite()) {
            return Err(MembraneError::InvalidParams("c_m must be positive"));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(MembraneError::InvalidParams("theta must be positive"));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(MembraneError::InvalidParams("b must be positive"));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(MembraneError::InvalidParams("a must be non-negative"));
        }
        Ok(())
    }
}

#[inline]
pub fn i_ion(v: f64, g: f64) -> f64 {
    v * v * v / 3.0 - v - g
}

#[inline]
pub fn recovery_rhs(v: f64, g: f64, p: &FhnParams) -> f64 {
    p.theta * v + p.a - p.b * g
}

/// Right-hand side `(v', g')` of the space-clamped membrane.
#[inline]
pub fn membrane_rhs(v: f64, g: f64, p: &FhnParams) -> (f64, f64) {
    (-i_ion(v, g) / p.c_m, recovery_rhs(v, g, p))
}

/// Smallest `lambda` for which the rescaled membrane problem is monotone.
pub fn lambda_bound(p: &FhnParams) -> f64 {
    (0.5 * (p.theta + 3.0)).max(0.5 * (p.theta + 1.0) - p.b)
}

#[inline]
pub fn i_ion_hat_unchecked(v_hat: f64, g_hat: f64, t: f64, lambda: f64, p: &FhnParams) -> f64 {
    (2.0 * lambda * t).exp() / 3.0 * v_hat * v_hat * v_hat + (p.c_m * lambda - 1.0) * v_hat - g_hat
}

/// Rescaled ionic current `e^{2 lambda t} v^3 / 3 + (c_m lambda - 1) v - g`.
pub fn i_ion_hat(v_hat: f64, g_hat: f64, t: f64, lambda: f64, p: &FhnParams) -> Result<f64, MembraneError> {
    let bound = lambda_bound(p);
    if lambda < bound {
        return Err(MembraneError::LambdaTooSmall { lambda, bound });
    }
    Ok(i_ion_hat_unchecked(v_hat, g_hat, t, lambda, p))
}

/// Rescaled recovery rate `theta v + a e^{-lambda t} - (b + lambda) g`.
#[inline]
pub fn recovery_rhs_hat(v_hat: f64, g_hat: f64, t: f64, lambda: f64, p: &FhnParams) -> f64 {
    p.theta * v_hat + p.a * (-lambda * t).exp() - (p.b + lambda) * g_hat
}

/// Right-hand side of the rescaled space-clamped membrane.
pub fn membrane_rhs_hat(v_hat: f64, g_hat: f64, t: f64, lambda: f64, p: &FhnParams) -> (f64, f64) {
    (
        -i_ion_hat_unchecked(v_hat, g_hat, t, lambda, p) / p.c_m,
        recovery_rhs_hat(v_hat, g_hat, t, lambda, p),
    )
}

/// Joint monotonicity increment of the rescaled membrane operator between two
/// states at time `t`; non-negative whenever `lambda >= lambda_bound`.
pub fn monotonicity_increment(s1: (f64, f64), s2: (f64, f64), t: f64, lambda: f64, p: &FhnParams) -> f64 {
    let dv = s1.0 - s2.0;
    let dg = s1.1 - s2.1;
    let di = i_ion_hat_unchecked(s1.0, s1.1, t, lambda, p) - i_ion_hat_unchecked(s2.0, s2.1, t, lambda, p);
    di * dv + ((p.b + lambda) * dg - p.theta * dv) * dg
}

/// One classical Runge-Kutta step of an autonomous-in-form 2D system.
pub fn rk4_step<F: Fn(f64, f64, f64) -> (f64, f64)>(f: F, t: f64, state: (f64, f64), dt: f64) -> (f64, f64) {
    let (v, g) = state;
    let k1 = f(t, v, g);
    let k2 = f(t + 0.5 * dt, v + 0.5 * dt * k1.0, g + 0.5 * dt * k1.1);
    let k3 = f(t + 0.5 * dt, v + 0.5 * dt * k2.0, g + 0.5 * dt * k2.1);
    let k4 = f(t + dt, v + dt * k3.0, g + dt * k3.1);
    (
        v + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        g + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// Equilibria of the space-clamped membrane.
#[derive(Clone, Debug, PartialEq)]
pub struct Equilibria {
    /// All real roots `(v, g)`, sorted by `v`.
    pub roots: Vec<(f64, f64)>,
    /// Index into `roots` of the rest state.
    pub rest: usize,
}

impl Equilibria {
    pub fn rest_state(&self) -> (f64, f64) {
        self.roots[self.rest]
    }

    /// Whether root `i` is linearly stable.
    pub fn is_stable(&self, i: usize, p: &FhnParams) -> bool {
        let (v, _) = self.roots[i];
        let j11 = (1.0 - v * v) / p.c_m;
        let j12 = 1.0 / p.c_m;
        let trace = j11 - p.b;
        let det = -j11 * p.b - j12 * p.theta;
        trace < 0.0 && det > 0.0
    }
}

fn polish_cubic(q: f64, r: f64, mut v: f64) -> f64 {
    // v^3 + q v + r = 0
    for _ in 0..50 {
        let f = v * v * v + q * v + r;
        let d = 3.0 * v * v + q;
        if d == 0.0 {
            break;
        }
        let step = f / d;
        v -= step;
        if step.abs() <= 1e-16 * (1.0 + v.abs()) {
            break;
        }
    }
    v
}

/// All equilibria; the rest state is the lowest linearly stable root.
pub fn equilibrium(p: &FhnParams) -> Equilibria {
    // g = (theta v + a) / b reduces the system to v^3 + q v + r = 0
    let q = -3.0 * (1.0 + p.theta / p.b);
    let r = -3.0 * p.a / p.b;
    let disc = (r / 2.0).powi(2) + (q / 3.0).powi(3);
    let mut vs: Vec<f64> = if disc > 0.0 {
        let s = disc.sqrt();
        alloc::vec![(-r / 2.0 + s).cbrt() + (-r / 2.0 - s).cbrt()]
    } else {
        let m = 2.0 * (-q / 3.0).sqrt();
        let phi = ((3.0 * r / (q * m)).clamp(-1.0, 1.0)).acos() / 3.0;
        (0..3).map(|k| m * (phi - 2.0 * core::f64::consts::PI * k as f64 / 3.0).cos()).collect()
    };
    for v in vs.iter_mut() {
        *v = polish_cubic(q, r, *v);
    }
    vs.sort_by(f64::total_cmp);
    vs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + a.abs()));
    let roots: Vec<(f64, f64)> = vs.iter().map(|&v| (v, (p.theta * v + p.a) / p.b)).collect();
    let mut eq = Equilibria { roots, rest: 0 };
    eq.rest = (0..eq.roots.len()).find(|&i| eq.is_stable(i, p)).unwrap_or(0);
    eq
}

/// Geometric weights of one axon class.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassWeights {
    pub radius: f64,
    /// Volume fraction.
    pub lambda: f64,
    /// Palm (perimeter) mass.
    pub mu: f64,
}

impl ClassWeights {
    pub fn from_model(model: &GeometryModel) -> Vec<Self> {
        (0..model.n_classes())
            .map(|k| {
                let radius = model.classes[k].radius;
                let mu = model.palm_mass(k);
                Self { radius, lambda: 0.5 * radius * mu, mu }
            })
            .collect()
    }

    pub fn check(weights: &[Self]) -> Result<(), MembraneError> {
        for (class, w) in weights.iter().enumerate() {
            if !(w.mu > 0.0) || (w.lambda - 0.5 * w.radius * w.mu).abs() > 1e-12 * (1.0 + w.lambda.abs()) {
                return Err(MembraneError::WeightMismatch { class });
            }
        }
        Ok(())
    }
}

/// Per-class fields that are constant on each axon cross-section.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassField {
    /// `values[k][node]`.
    pub values: Vec<Vec<f64>>,
    pub weights: Vec<ClassWeights>,
}

impl ClassField {
    pub fn new(values: Vec<Vec<f64>>, weights: Vec<ClassWeights>) -> Result<Self, MembraneError> {
        ClassWeights::check(&weights)?;
        if values.len() != weights.len() {
            return Err(MembraneError::InvalidParams("one value sequence per class is required"));
        }
        Ok(Self { values, weights })
    }

    /// Every class set to `value` on `nodes` nodes.
    pub fn uniform(value: f64, nodes: usize, weights: Vec<ClassWeights>) -> Result<Self, MembraneError> {
        let values = alloc::vec![alloc::vec![value; nodes]; weights.len()];
        Self::new(values, weights)
    }

    pub fn n_classes(&self) -> usize {
        self.values.len()
    }

    /// Each value as a one-point sample set, for re-projection.
    pub fn as_samples(&self) -> Vec<Vec<Vec<f64>>> {
        self.values.iter().map(|c| c.iter().map(|&v| alloc::vec![v]).collect()).collect()
    }
}

/// Projection onto class-constant fields: for class `k` and node `x`, the
/// mean of the samples of `samples[k][x]`, taken uniformly on the membrane.
pub fn project_classwise(samples: &[Vec<Vec<f64>>], weights: &[ClassWeights]) -> Result<ClassField, MembraneError> {
    let mut values = Vec::with_capacity(samples.len());
    for (class, per_node) in samples.iter().enumerate() {
        let mut out = Vec::with_capacity(per_node.len());
        for s in per_node {
            if s.is_empty() {
                return Err(MembraneError::EmptyClass { class });
            }
            out.push(crate::numeric::sum(s.iter().copied()) / s.len() as f64);
        }
        if out.is_empty() {
            return Err(MembraneError::EmptyClass { class });
        }
        values.push(out);
    }
    ClassField::new(values, weights.to_vec())
}
