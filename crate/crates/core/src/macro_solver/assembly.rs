//! Grid, residual and Jacobian assembly and the damped Newton solve.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::conductivity::ConductivityLaw;
use crate::linalg::BandMatrix;
use crate::membrane::{ClassWeights, FhnParams};

use super::{IntracellularBc, MacroConfig, MacroError, SigmaHom};

/// Uniform node grid with trapezoidal (lumped) nodal weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretization {
    pub nx: usize,
    pub ny: usize,
    pub h1: f64,
    pub h2: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub two_d: bool,
}

fn trapezoid(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

impl Discretization {
    pub fn new(cfg: &MacroConfig) -> Self {
        let nx = cfg.nx;
        let h1 = cfg.length / (nx - 1) as f64;
        let x1 = (0..nx).map(|i| i as f64 * h1).collect();
        let (ny, h2, x2, w2) = match cfg.width {
            Some(w) => {
                let h2 = w / (cfg.ny - 1) as f64;
                (cfg.ny, h2, (0..cfg.ny).map(|j| j as f64 * h2).collect(), trapezoid(cfg.ny, h2))
            }
            None => (1, 1.0, vec![0.0], vec![1.0]),
        };
        Self { nx, ny, h1, h2, x1, x2, w1: trapezoid(nx, h1), w2, two_d: cfg.width.is_some() }
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    #[inline]
    pub fn weight(&self, node: usize) -> f64 {
        self.w1[node / self.ny] * self.w2[node % self.ny]
    }

    /// Whether `node` lies on a fascicle end `x1 in {0, L}`.
    #[inline]
    pub fn is_end(&self, node: usize) -> bool {
        let i = node / self.ny;
        i == 0 || i + 1 == self.nx
    }

    /// Lumped integral of a nodal field.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        crate::numeric::sum(f.iter().enumerate().map(|(p, v)| self.weight(p) * v))
    }
}

/// Convergence record of one nonlinear solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub newton_iterations: usize,
    /// Strong-form residual sup-norm before each Newton update and at exit.
    pub residual_history: Vec<f64>,
    pub clamp_events: usize,
}

impl StepStats {
    pub fn residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }

    pub fn merge(&mut self, other: &StepStats) {
        self.newton_iterations += other.newton_iterations;
        self.clamp_events += other.clamp_events;
        self.residual_history.extend_from_slice(&other.residual_history);
    }
}

/// Membrane current model inside one nonlinear solve.
pub(crate) enum Reaction<'a> {
    /// Prescribed current per class and node.
    Explicit(&'a [Vec<f64>]),
    /// Rescaled current with the recovery variable eliminated by its implicit
    /// update over a step of length `dt` from `g_prev`.
    Rescaled { g_prev: &'a [Vec<f64>], dt: f64, lambda: f64 },
}

impl Reaction<'_> {
    #[inline]
    fn eval(&self, k: usize, p: usize, v: f64, fhn: &FhnParams) -> (f64, f64) {
        match self {
            Reaction::Explicit(i) => (i[k][p], 0.0),
            Reaction::Rescaled { g_prev, dt, lambda } => {
                let e2 = (2.0 * lambda * dt).exp();
                let den = 1.0 + dt * (fhn.b + lambda);
                let g = (g_prev[k][p] + dt * (fhn.theta * v + fhn.a * (-lambda * dt).exp())) / den;
                let val = e2 / 3.0 * v * v * v + (fhn.c_m * lambda - 1.0) * v - g;
                let der = e2 * v * v + (fhn.c_m * lambda - 1.0) - dt * fhn.theta / den;
                (val, der)
            }
        }
    }
}

/// One nonlinear solve: which blocks are unknown and the data they need.
pub(crate) struct SolveSpec<'a> {
    pub solve_v: bool,
    pub solve_ue: bool,
    pub v_prev: &'a [Vec<f64>],
    pub dt: f64,
    pub reaction: Option<Reaction<'a>>,
    /// Field scale `s`: conductivities are evaluated as `sigma(s eta)` and the
    /// effective flux as `sigma_hom(s xi) / s`.
    pub field_scale: f64,
    /// Extracellular nodal load (already multiplied by nodal weights).
    pub load: Vec<f64>,
}

/// Spatial operators of a configuration.
#[derive(Clone, Debug)]
pub(crate) struct Operators {
    pub disc: Discretization,
    pub classes: Vec<ClassWeights>,
    pub fhn: FhnParams,
    pub sigma_i: ConductivityLaw,
    pub sigma_hom: SigmaHom,
    pub bc: IntracellularBc,
    pub clamp_to_table: bool,
}

struct Layout {
    nc: usize,
    e: Option<usize>,
    v0: Option<usize>,
}

impl Layout {
    fn new(spec: &SolveSpec, n_classes: usize) -> Self {
        let e = spec.solve_ue.then_some(0);
        let off = usize::from(spec.solve_ue);
        let v0 = spec.solve_v.then_some(off);
        let nc = off + if spec.solve_v { n_classes } else { 0 };
        Self { nc, e, v0 }
    }

    #[inline]
    fn v(&self, k: usize) -> Option<usize> {
        self.v0.map(|o| o + k)
    }
}

/// Residual vector and optional Jacobian under assembly, with fixed dofs
/// eliminated.
struct Sink<'a> {
    r: Vec<f64>,
    jac: Option<&'a mut BandMatrix>,
    fixed: &'a [bool],
    nc: usize,
}

impl Sink<'_> {
    #[inline]
    fn res(&mut self, node: usize, c: Option<usize>, val: f64) {
        if let Some(c) = c {
            let d = node * self.nc + c;
            if !self.fixed[d] {
                self.r[d] += val;
            }
        }
    }

    #[inline]
    fn jac(&mut self, rn: usize, rc: Option<usize>, cn: usize, cc: Option<usize>, val: f64) {
        if let (Some(j), Some(rc), Some(cc)) = (self.jac.as_deref_mut(), rc, cc) {
            let (a, b) = (rn * self.nc + rc, cn * self.nc + cc);
            if !self.fixed[a] && !self.fixed[b] {
                j.add(a, b, val);
            }
        }
    }
}

impl Operators {
    pub fn new(cfg: &MacroConfig) -> Self {
        Self {
            disc: Discretization::new(cfg),
            classes: cfg.classes.clone(),
            fhn: cfg.fhn,
            sigma_i: cfg.sigma_i.clone(),
            sigma_hom: cfg.sigma_hom.clone(),
            bc: cfg.intracellular_bc,
            clamp_to_table: cfg.clamp_to_table,
        }
    }

    fn bandwidth(&self, nc: usize) -> usize {
        let reach = if self.disc.two_d { self.disc.ny + 1 } else { 1 };
        reach * nc + nc - 1
    }

    fn fixed_dofs(&self, layout: &Layout) -> Vec<bool> {
        let n = self.disc.n_nodes();
        let mut fixed = vec![false; n * layout.nc];
        for p in (0..n).filter(|&p| self.disc.is_end(p)) {
            if let Some(e) = layout.e {
                fixed[p * layout.nc + e] = true;
            }
            if self.bc == IntracellularBc::Dirichlet {
                for k in 0..self.classes.len() {
                    if let Some(c) = layout.v(k) {
                        fixed[p * layout.nc + c] = true;
                    }
                }
            }
        }
        fixed
    }

    /// Effective flux and its `2 x 2` tangent in the `(x1, x2)` plane.
    fn effective_flux(&self, xi: [f64; 2], scale: f64, clamps: &mut usize) -> Result<([f64; 2], [[f64; 2]; 2]), MacroError> {
        let (f, t) = self.sigma_hom.flux([xi[0], xi[1], 0.0], scale, self.clamp_to_table, clamps)?;
        Ok(([f[0], f[1]], [[t[0][0], t[0][1]], [t[1][0], t[1][1]]]))
    }

    /// Residual (and Jacobian if requested) of the coupled step equations.
    fn assemble(
        &self,
        spec: &SolveSpec,
        layout: &Layout,
        fixed: &[bool],
        u_e: &[f64],
        v: &[Vec<f64>],
        jac: Option<&mut BandMatrix>,
    ) -> Result<(Vec<f64>, usize), MacroError> {
        let d = &self.disc;
        let n = d.n_nodes();
        let mut sink = Sink { r: vec![0.0; n * layout.nc], jac, fixed, nc: layout.nc };
        let mut clamps = 0;
        let law_i = self.sigma_i.scaled(spec.field_scale);

        // intracellular axial fluxes
        for (k, cw) in self.classes.iter().enumerate() {
            let ck = layout.v(k);
            if ck.is_none() && layout.e.is_none() {
                continue;
            }
            for j in 0..d.ny {
                let coef = cw.lambda * d.w2[j];
                for i in 0..d.nx - 1 {
                    let (p, q) = (d.node(i, j), d.node(i + 1, j));
                    let s = (v[k][q] + u_e[q] - v[k][p] - u_e[p]) / d.h1;
                    let f = coef * law_i.sigma(s) * s;
                    let kd = coef * law_i.flux_derivative(s) / d.h1;
                    for c in [layout.e, ck] {
                        sink.res(p, c, -f);
                        sink.res(q, c, f);
                        for cc in [layout.e, ck] {
                            sink.jac(p, c, p, cc, kd);
                            sink.jac(p, c, q, cc, -kd);
                            sink.jac(q, c, p, cc, -kd);
                            sink.jac(q, c, q, cc, kd);
                        }
                    }
                }
            }
        }

        // extracellular effective fluxes
        if let Some(e) = layout.e {
            let s = spec.field_scale;
            if d.two_d {
                let area = 0.5 * d.h1 * d.h2;
                let (g1, g2) = (1.0 / d.h1, 1.0 / d.h2);
                for i in 0..d.nx - 1 {
                    for j in 0..d.ny - 1 {
                        let a = d.node(i, j);
                        let b = d.node(i + 1, j);
                        let c = d.node(i, j + 1);
                        let dd = d.node(i + 1, j + 1);
                        let tris = [
                            ([a, b, dd], [[-g1, 0.0], [g1, -g2], [0.0, g2]]),
                            ([a, c, dd], [[0.0, -g2], [-g1, g2], [g1, 0.0]]),
                        ];
                        for (nodes, grads) in tris {
                            let mut xi = [0.0; 2];
                            for (m, gr) in nodes.iter().zip(&grads) {
                                xi[0] += u_e[*m] * gr[0];
                                xi[1] += u_e[*m] * gr[1];
                            }
                            let (f, t) = self.effective_flux(xi, s, &mut clamps)?;
                            for (r, gr) in nodes.iter().zip(&grads) {
                                sink.res(*r, Some(e), area * (f[0] * gr[0] + f[1] * gr[1]));
                                for (cn, gc) in nodes.iter().zip(&grads) {
                                    let tg = [t[0][0] * gc[0] + t[0][1] * gc[1], t[1][0] * gc[0] + t[1][1] * gc[1]];
                                    sink.jac(*r, Some(e), *cn, Some(e), area * (gr[0] * tg[0] + gr[1] * tg[1]));
                                }
                            }
                        }
                    }
                }
            } else {
                for i in 0..d.nx - 1 {
                    let slope = (u_e[i + 1] - u_e[i]) / d.h1;
                    let (f, t) = self.effective_flux([slope, 0.0], s, &mut clamps)?;
                    let kd = t[0][0] / d.h1;
                    sink.res(i, Some(e), -f[0]);
                    sink.res(i + 1, Some(e), f[0]);
                    sink.jac(i, Some(e), i, Some(e), kd);
                    sink.jac(i, Some(e), i + 1, Some(e), -kd);
                    sink.jac(i + 1, Some(e), i, Some(e), -kd);
                    sink.jac(i + 1, Some(e), i + 1, Some(e), kd);
                }
            }
            for p in 0..n {
                sink.res(p, Some(e), -spec.load[p]);
            }
        }

        // membrane terms
        if let Some(reaction) = &spec.reaction {
            for (k, cw) in self.classes.iter().enumerate() {
                let ck = layout.v(k);
                for p in 0..n {
                    let m = cw.mu * d.weight(p);
                    let (ion, dion) = reaction.eval(k, p, v[k][p], &self.fhn);
                    let rate = self.fhn.c_m / spec.dt;
                    sink.res(p, ck, m * (rate * (v[k][p] - spec.v_prev[k][p]) + ion));
                    sink.jac(p, ck, p, ck, m * (rate + dion));
                }
            }
        }

        if let Some(j) = sink.jac {
            for (dof, _) in fixed.iter().enumerate().filter(|(_, f)| **f) {
                j.add(dof, dof, 1.0);
            }
        }
        Ok((sink.r, clamps))
    }

    fn scaled_sup(&self, layout: &Layout, r: &[f64]) -> f64 {
        let mut m: f64 = 0.0;
        for (dof, val) in r.iter().enumerate() {
            let p = dof / layout.nc;
            let c = dof % layout.nc;
            let w = self.disc.weight(p);
            let scale = match layout.v0 {
                Some(o) if c >= o => w * self.classes[c - o].mu,
                _ => w,
            };
            m = m.max(val.abs() / scale);
        }
        m
    }

    /// Damped Newton on the coupled step equations, updating `u_e` and `v` in
    /// place. Only residual-decreasing updates are accepted.
    pub fn newton(
        &self,
        spec: &SolveSpec,
        u_e: &mut [f64],
        v: &mut [Vec<f64>],
        tol: f64,
        max_iter: usize,
    ) -> Result<StepStats, MacroError> {
        let layout = Layout::new(spec, self.classes.len());
        let fixed = self.fixed_dofs(&layout);
        let n = self.disc.n_nodes();
        let bw = self.bandwidth(layout.nc);
        let mut stats = StepStats::default();
        if layout.nc == 0 {
            return Ok(stats);
        }
        let mut jac = BandMatrix::zeros(n * layout.nc, bw);
        let (mut r, c) = self.assemble(spec, &layout, &fixed, u_e, v, Some(&mut jac))?;
        stats.clamp_events += c;
        let mut res = self.scaled_sup(&layout, &r);
        stats.residual_history.push(res);
        loop {
            if !res.is_finite() {
                return Err(MacroError::NewtonDivergence { iterations: stats.newton_iterations, residual: res });
            }
            if res <= tol {
                return Ok(stats);
            }
            if stats.newton_iterations >= max_iter {
                return Err(MacroError::NonConvergence { iterations: stats.newton_iterations, residual: res });
            }
            let lu = jac.factor().ok_or(MacroError::NewtonDivergence { iterations: stats.newton_iterations, residual: res })?;
            let neg: Vec<f64> = r.iter().map(|x| -x).collect();
            let delta = lu.solve(&neg);
            let size = u_e.iter().chain(v.iter().flatten()).fold(1.0f64, |m, x| m.max(x.abs()));
            if crate::linalg::sup_norm(&delta) <= 1e-13 * size {
                // the residual is at its rounding floor
                return Ok(stats);
            }
            let mut alpha = 1.0;
            let base_e = u_e.to_vec();
            let base_v = v.to_vec();
            loop {
                for p in 0..n {
                    if let Some(e) = layout.e {
                        u_e[p] = base_e[p] + alpha * delta[p * layout.nc + e];
                    }
                    for k in 0..self.classes.len() {
                        if let Some(ck) = layout.v(k) {
                            v[k][p] = base_v[k][p] + alpha * delta[p * layout.nc + ck];
                        }
                    }
                }
                jac = BandMatrix::zeros(n * layout.nc, bw);
                let (rt, c) = self.assemble(spec, &layout, &fixed, u_e, v, Some(&mut jac))?;
                let rt_norm = self.scaled_sup(&layout, &rt);
                if rt_norm < (1.0 - 1e-4 * alpha) * res || rt_norm <= tol {
                    stats.clamp_events += c;
                    r = rt;
                    res = rt_norm;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-10 {
                    u_e.copy_from_slice(&base_e);
                    v.clone_from_slice(&base_v);
                    return Err(MacroError::NewtonDivergence { iterations: stats.newton_iterations, residual: res });
                }
            }
            stats.newton_iterations += 1;
            stats.residual_history.push(res);
        }
    }
}
