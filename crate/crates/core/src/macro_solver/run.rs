//! Time stepping, runs and energy diagnostics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::membrane::{equilibrium, i_ion};
use crate::numeric::fit_slope;

use super::assembly::{Operators, Reaction, SolveSpec};
use super::{
    Discretization, InitialProfile, IntracellularBc, MacroConfig, MacroError, MacroState, Scheme, StepStats,
};

/// Discrete analogues of the a priori bounds on `v` and `g`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnergyDiagnostics {
    /// `sup_t sum_k mu_k int v_k^4`.
    pub sup_v4: f64,
    /// `sum_steps dt sum_k mu_k int |dv_k/dt|^2`.
    pub cum_dv2: f64,
    /// `sup_t sum_k mu_k int g_k^2`.
    pub sup_g2: f64,
    /// `sum_steps dt sum_k mu_k int |dg_k/dt|^2`.
    pub cum_dg2: f64,
}

impl EnergyDiagnostics {
    pub fn is_finite(&self) -> bool {
        self.sup_v4.is_finite() && self.cum_dv2.is_finite() && self.sup_g2.is_finite() && self.cum_dg2.is_finite()
    }
}

/// Output of [`MacroSolver::run`].
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub snapshots: Vec<MacroState>,
    /// Diagnostics accumulated up to each snapshot.
    pub diagnostics_history: Vec<EnergyDiagnostics>,
    pub diagnostics: EnergyDiagnostics,
    pub steps: usize,
    pub newton_iterations: usize,
    pub clamp_events: usize,
    /// Largest nonlinear residual accepted over the run.
    pub max_residual: f64,
}

impl TimeSeries {
    pub fn final_state(&self) -> &MacroState {
        self.snapshots.last().expect("a run always records its initial state")
    }

    /// Values of `field` along `x1` on the grid row `j`.
    pub fn row(&self, field: &[f64], j: usize) -> Vec<f64> {
        let ny = self.x2.len();
        (0..self.x1.len()).map(|i| field[i * ny + j]).collect()
    }
}

pub fn energy_diagnostics(series: &TimeSeries) -> EnergyDiagnostics {
    series.diagnostics
}

/// Rightmost point where `values` falls through `threshold` as `x` increases.
pub fn front_position(x: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
    (0..values.len().saturating_sub(1)).rev().find_map(|i| {
        let (a, b) = (values[i] - threshold, values[i + 1] - threshold);
        (a >= 0.0 && b < 0.0).then(|| x[i] + (x[i + 1] - x[i]) * a / (a - b))
    })
}

/// Least-squares speed of a sequence of front positions.
pub fn front_speed(times: &[f64], positions: &[f64]) -> f64 {
    fit_slope(times, positions)
}

/// Integrator for one configuration.
#[derive(Clone, Debug)]
pub struct MacroSolver {
    cfg: MacroConfig,
    ops: Operators,
    rest: (f64, f64),
    excited: Option<(f64, f64)>,
}

impl MacroSolver {
    pub fn new(cfg: MacroConfig) -> Result<Self, MacroError> {
        cfg.validate()?;
        let eq = equilibrium(&cfg.fhn);
        let rest = eq.rest_state();
        let excited = (eq.rest + 1..eq.roots.len()).rev().find(|&i| eq.is_stable(i, &cfg.fhn)).map(|i| eq.roots[i]);
        if matches!(cfg.initial, InitialProfile::Front { .. }) && excited.is_none() {
            return Err(MacroError::InvalidConfig("front initial data needs a bistable membrane".into()));
        }
        let ops = Operators::new(&cfg);
        Ok(Self { cfg, ops, rest, excited })
    }

    pub fn config(&self) -> &MacroConfig {
        &self.cfg
    }

    pub fn discretization(&self) -> &Discretization {
        &self.ops.disc
    }

    pub fn rest_state(&self) -> (f64, f64) {
        self.rest
    }

    pub fn excited_state(&self) -> Option<(f64, f64)> {
        self.excited
    }

    fn n_classes(&self) -> usize {
        self.cfg.classes.len()
    }

    /// Extracellular nodal load of the stimulus at time `t`, divided by `scale`.
    fn stimulus_load(&self, t: f64, scale: f64) -> Vec<f64> {
        let d = &self.ops.disc;
        let mut load = vec![0.0; d.n_nodes()];
        let Some(stim) = &self.cfg.stimulus else {
            return load;
        };
        for i in 0..d.nx {
            let j = stim.value(t, d.x1[i]) / scale;
            if j == 0.0 {
                continue;
            }
            if d.two_d {
                load[d.node(i, d.ny - 1)] += d.w1[i] * j;
            } else {
                load[i] += d.w1[i] * j;
            }
        }
        load
    }

    fn initial_membrane(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let d = &self.ops.disc;
        let (vr, gr) = self.rest;
        let profile = |x: f64| -> (f64, f64) {
            match self.cfg.initial {
                InitialProfile::Rest => (vr, gr),
                InitialProfile::Constant { v, g } => (v, g),
                InitialProfile::Bump { amplitude, center, width } => {
                    let s = (x - center) / width;
                    let b = if s.abs() < 1.0 { (0.5 * core::f64::consts::PI * s).cos().powi(2) } else { 0.0 };
                    (vr + amplitude * b, gr)
                }
                InitialProfile::Front { position, width } => {
                    let (ve, _) = self.excited.unwrap_or(self.rest);
                    let s = 0.5 * (1.0 - ((x - position) / width).tanh());
                    (vr + (ve - vr) * s, gr)
                }
            }
        };
        let mut v = vec![vec![0.0; d.n_nodes()]; self.n_classes()];
        let mut g = v.clone();
        for p in 0..d.n_nodes() {
            let (vv, gg) = profile(d.x1[p / d.ny]);
            for k in 0..self.n_classes() {
                v[k][p] = if self.cfg.intracellular_bc == IntracellularBc::Dirichlet && d.is_end(p) { 0.0 } else { vv };
                g[k][p] = gg;
            }
        }
        (v, g)
    }

    /// State at `t = 0` with `u_e` consistent with the initial membrane data.
    pub fn initial_state(&self) -> Result<MacroState, MacroError> {
        let (v, g) = self.initial_membrane();
        let u_e = if self.cfg.ground_extracellular {
            vec![0.0; self.ops.disc.n_nodes()]
        } else {
            self.solve_extracellular(&v, 0.0, None, None)?.0
        };
        Ok(MacroState { t: 0.0, u_e, v, g })
    }

    /// Extracellular potential for given membrane potentials at time `t`, with
    /// an optional extra source density `source` (strong form, per node).
    pub fn solve_extracellular(
        &self,
        v: &[Vec<f64>],
        t: f64,
        source: Option<&[f64]>,
        initial: Option<&[f64]>,
    ) -> Result<(Vec<f64>, StepStats), MacroError> {
        let d = &self.ops.disc;
        let mut load = self.stimulus_load(t, 1.0);
        if let Some(f) = source {
            for (p, l) in load.iter_mut().enumerate() {
                *l += d.weight(p) * f[p];
            }
        }
        let spec = SolveSpec {
            solve_v: false,
            solve_ue: true,
            v_prev: v,
            dt: 1.0,
            reaction: None,
            field_scale: 1.0,
            load,
        };
        let mut u_e = initial.map_or_else(|| vec![0.0; d.n_nodes()], <[f64]>::to_vec);
        for p in (0..d.n_nodes()).filter(|&p| d.is_end(p)) {
            u_e[p] = 0.0;
        }
        let mut vv = v.to_vec();
        let stats = self.ops.newton(&spec, &mut u_e, &mut vv, self.cfg.tol, self.cfg.max_newton)?;
        Ok((u_e, stats))
    }

    /// Advances `state` by one time step.
    pub fn step(&self, state: &MacroState) -> Result<(MacroState, StepStats), MacroError> {
        let dt = self.cfg.dt;
        let t1 = state.t + dt;
        let p = &self.cfg.fhn;
        let k_count = self.n_classes();
        let solve_ue = !self.cfg.ground_extracellular;
        match self.cfg.scheme {
            Scheme::Imex => {
                let decay = (-p.b * dt).exp();
                let mut g1 = state.g.clone();
                let mut ion = state.v.clone();
                for k in 0..k_count {
                    for (n, gk) in g1[k].iter_mut().enumerate() {
                        let vk = state.v[k][n];
                        *gk = *gk * decay + (p.theta * vk + p.a) / p.b * (1.0 - decay);
                        ion[k][n] = i_ion(vk, *gk);
                    }
                }
                let spec = SolveSpec {
                    solve_v: true,
                    solve_ue,
                    v_prev: &state.v,
                    dt,
                    reaction: Some(Reaction::Explicit(&ion)),
                    field_scale: 1.0,
                    load: self.stimulus_load(t1, 1.0),
                };
                let mut u_e = state.u_e.clone();
                let mut v = state.v.clone();
                let stats = self.ops.newton(&spec, &mut u_e, &mut v, self.cfg.tol, self.cfg.max_newton)?;
                Ok((MacroState { t: t1, u_e, v, g: g1 }, stats))
            }
            Scheme::ImplicitLambda => {
                let lambda = self.cfg.lambda_value();
                let s = (lambda * dt).exp();
                let spec = SolveSpec {
                    solve_v: true,
                    solve_ue,
                    v_prev: &state.v,
                    dt,
                    reaction: Some(Reaction::Rescaled { g_prev: &state.g, dt, lambda }),
                    field_scale: s,
                    load: self.stimulus_load(t1, s),
                };
                let mut u_e: Vec<f64> = state.u_e.iter().map(|x| x / s).collect();
                let mut v: Vec<Vec<f64>> = state.v.iter().map(|c| c.iter().map(|x| x / s).collect()).collect();
                let stats = self.ops.newton(&spec, &mut u_e, &mut v, self.cfg.tol / s, self.cfg.max_newton)?;
                let den = 1.0 + dt * (p.b + lambda);
                let forcing = p.a * (-lambda * dt).exp();
                let mut g = state.g.clone();
                for k in 0..k_count {
                    for (n, gk) in g[k].iter_mut().enumerate() {
                        *gk = s * (*gk + dt * (p.theta * v[k][n] + forcing)) / den;
                    }
                }
                u_e.iter_mut().for_each(|x| *x *= s);
                v.iter_mut().for_each(|c| c.iter_mut().for_each(|x| *x *= s));
                Ok((MacroState { t: t1, u_e, v, g }, stats))
            }
        }
    }

    fn weighted_sum(&self, fields: &[Vec<f64>], f: impl Fn(f64) -> f64) -> f64 {
        let d = &self.ops.disc;
        fields
            .iter()
            .zip(&self.cfg.classes)
            .map(|(c, w)| w.mu * crate::numeric::sum(c.iter().enumerate().map(|(p, x)| d.weight(p) * f(*x))))
            .sum()
    }

    fn update_diagnostics(&self, diag: &mut EnergyDiagnostics, old: Option<&MacroState>, new: &MacroState) {
        diag.sup_v4 = diag.sup_v4.max(self.weighted_sum(&new.v, |x| x.powi(4)));
        diag.sup_g2 = diag.sup_g2.max(self.weighted_sum(&new.g, |x| x * x));
        if let Some(old) = old {
            let dt = new.t - old.t;
            let diff = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
                a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) / dt).collect()).collect()
            };
            diag.cum_dv2 += dt * self.weighted_sum(&diff(&new.v, &old.v), |x| x * x);
            diag.cum_dg2 += dt * self.weighted_sum(&diff(&new.g, &old.g), |x| x * x);
        }
    }

    fn check_ceilings(&self, diag: &EnergyDiagnostics, t: f64) -> Result<(), MacroError> {
        if !diag.is_finite() {
            return Err(MacroError::StepRejected { t, reason: "non-finite energy diagnostics".into() });
        }
        if let Some(c) = &self.cfg.ceilings {
            let checks = [
                ("sup_v4", diag.sup_v4, c.sup_v4),
                ("cum_dv2", diag.cum_dv2, c.cum_dv2),
                ("sup_g2", diag.sup_g2, c.sup_g2),
                ("cum_dg2", diag.cum_dg2, c.cum_dg2),
            ];
            if let Some((name, val, cap)) = checks.iter().find(|(_, v, c)| v > c) {
                return Err(MacroError::StepRejected { t, reason: format!("{name} = {val:e} exceeds {cap:e}") });
            }
        }
        Ok(())
    }

    /// Integrates to `t_end`, recording snapshots at the configured cadence
    /// and always the final state.
    pub fn run(&self) -> Result<TimeSeries, MacroError> {
        let d = &self.ops.disc;
        let mut state = self.initial_state()?;
        let mut diag = EnergyDiagnostics::default();
        self.update_diagnostics(&mut diag, None, &state);
        let mut series = TimeSeries {
            x1: d.x1.clone(),
            x2: d.x2.clone(),
            snapshots: vec![state.clone()],
            diagnostics_history: vec![diag],
            diagnostics: diag,
            steps: 0,
            newton_iterations: 0,
            clamp_events: 0,
            max_residual: 0.0,
        };
        let n_steps = self.cfg.n_steps();
        for step in 1..=n_steps {
            let (next, stats) = self.step(&state)?;
            series.newton_iterations += stats.newton_iterations;
            series.clamp_events += stats.clamp_events;
            series.max_residual = series.max_residual.max(stats.residual());
            self.update_diagnostics(&mut diag, Some(&state), &next);
            self.check_ceilings(&diag, next.t)?;
            state = next;
            series.steps = step;
            if step % self.cfg.snapshot_every == 0 || step == n_steps {
                series.snapshots.push(state.clone());
                series.diagnostics_history.push(diag);
            }
        }
        series.diagnostics = diag;
        Ok(series)
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::conductivity::ConductivityLaw;
    use crate::membrane::{ClassWeights, FhnParams};

    fn one_class(lambda: f64, r: f64) -> Vec<ClassWeights> {
        vec![ClassWeights { radius: r, lambda, mu: 2.0 * lambda / r }]
    }

    #[test]
    fn zero_data_stays_zero() {
        let mut cfg = MacroConfig::one_d(1.0, 21, one_class(0.1, 0.2));
        cfg.fhn = FhnParams::new(1.0, 0.08, 0.0, 0.8).unwrap();
        cfg.initial = InitialProfile::Constant { v: 0.0, g: 0.0 };
        cfg.t_end = 0.2;
        let series = MacroSolver::new(cfg).unwrap().run().unwrap();
        let last = series.final_state();
        assert!(last.u_e.iter().chain(&last.v[0]).chain(&last.g[0]).all(|x| *x == 0.0));
        assert_eq!(series.diagnostics, EnergyDiagnostics::default());
    }

    #[test]
    fn linear_extracellular_response() {
        let lam = 0.1;
        let cfg = MacroConfig::one_d(1.0, 81, one_class(lam, 0.2));
        let solver = MacroSolver::new(cfg).unwrap();
        let d = solver.discretization();
        let v: Vec<f64> = d.x1.iter().map(|x| (core::f64::consts::PI * x).sin()).collect();
        let (u, stats) = solver.solve_extracellular(core::slice::from_ref(&v), 0.0, None, None).unwrap();
        assert!(stats.residual() <= 1e-10);
        let err = u.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a + lam / (1.0 + lam) * b).abs()));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn rest_state_is_preserved() {
        let mut cfg = MacroConfig::one_d(2.0, 41, one_class(0.06, 0.2));
        cfg.sigma_i = ConductivityLaw::sigmoid(1.0, 2.0, 2.0, 1.0);
        cfg.t_end = 0.5;
        let solver = MacroSolver::new(cfg).unwrap();
        let s0 = solver.initial_state().unwrap();
        let (s1, _) = solver.step(&s0).unwrap();
        assert!(s1.sup_distance(&MacroState { t: s1.t, ..s0 }) < 1e-12);
    }

    #[test]
    fn rescaled_scheme_tracks_imex() {
        let mut cfg = MacroConfig::one_d(4.0, 41, one_class(0.06, 0.2));
        cfg.fhn = FhnParams::bistable();
        cfg.initial = InitialProfile::Front { position: 2.0, width: 0.3 };
        cfg.t_end = 0.5;
        cfg.dt = 0.005;
        let a = MacroSolver::new(cfg.clone()).unwrap().run().unwrap();
        cfg.scheme = Scheme::ImplicitLambda;
        let b = MacroSolver::new(cfg).unwrap().run().unwrap();
        let dist = a.final_state().sup_distance(b.final_state());
        assert!(dist < 0.05, "{dist}");
    }
}
