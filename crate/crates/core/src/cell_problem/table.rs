//! Tabulation of the effective law over `(xi1, |xi'|)` and its interpolation.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::conductivity::ConductivityLaw;
use crate::ergodics::derive_seed;
use crate::geometry::{sample_periodic, GeometryModel};
use crate::numeric::sample_variance;
use crate::optimize::MinimizeOptions;

use super::{effective_flux, CellError, CellProblem};

/// Grid and sampling parameters of a tabulation.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TableSpec {
    pub xi1: Vec<f64>,
    pub xit: Vec<f64>,
    pub torus_side: usize,
    pub replicates: usize,
    pub grid_h: f64,
    pub tol: f64,
    pub seed: u64,
}

impl TableSpec {
    pub fn validate(&self) -> Result<(), CellError> {
        for g in [&self.xi1, &self.xit] {
            if g.first() != Some(&0.0) {
                return Err(CellError::InvalidTable("gradient grids must start at 0"));
            }
            if g.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|v| !v.is_finite()) {
                return Err(CellError::InvalidTable("gradient grids must be strictly increasing"));
            }
        }
        if self.torus_side == 0 || self.replicates == 0 {
            return Err(CellError::InvalidTable("torus side and replicate count must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(CellError::InvalidTable("tolerance must be positive"));
        }
        super::cells_per_unit(self.grid_h)?;
        Ok(())
    }

    fn len(&self) -> usize {
        self.xi1.len() * self.xit.len()
    }
}

/// Values of one replicate at every grid point, indexed `a * xit.len() + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateTable {
    pub replicate: usize,
    pub lambda_hat: f64,
    pub phi: Vec<f64>,
    pub sigma_long: Vec<f64>,
    pub sigma_trans: Vec<f64>,
}

/// Solves every grid point on replicate `index`, warm-starting along `xit`.
pub fn tabulate_replicate(
    model: &GeometryModel,
    law: &ConductivityLaw,
    spec: &TableSpec,
    index: usize,
) -> Result<ReplicateTable, CellError> {
    spec.validate()?;
    let real = sample_periodic(model, spec.torus_side, derive_seed(spec.seed, index as u64))?;
    let problem = CellProblem::new(&real, law.clone(), spec.grid_h)?;
    let opts = MinimizeOptions { tol: spec.tol, ..MinimizeOptions::default() };
    let m = spec.len();
    let mut out = ReplicateTable {
        replicate: index,
        lambda_hat: problem.lambda_hat(),
        phi: vec![0.0; m],
        sigma_long: vec![0.0; m],
        sigma_trans: vec![0.0; m],
    };
    for (a, &x1) in spec.xi1.iter().enumerate() {
        let mut previous: Option<(f64, Vec<f64>)> = None;
        for (b, &xt) in spec.xit.iter().enumerate() {
            let guess = previous.as_ref().map(|(t, v)| {
                let s = if *t > 0.0 { xt / t } else { 0.0 };
                v.iter().map(|x| x * s).collect::<Vec<_>>()
            });
            let corr = problem.solve_from([x1, xt, 0.0], guess.as_deref(), &opts)?;
            let flux = effective_flux(&corr, law);
            let k = a * spec.xit.len() + b;
            out.phi[k] = corr.energy;
            out.sigma_long[k] = flux[0];
            out.sigma_trans[k] = flux[1];
            previous = Some((xt, problem.active_values(&corr)));
        }
    }
    Ok(out)
}

/// Where a table came from.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TableProvenance {
    pub model: GeometryModel,
    pub law: ConductivityLaw,
    pub torus_side: usize,
    pub replicates: usize,
    pub grid_h: f64,
    pub tol: f64,
    pub seed: u64,
    /// Mean interior cell fraction over replicates.
    pub lambda_hat: f64,
}

/// Replicate-averaged `Phi` and `sigma_hom` on a tensor grid over
/// `(xi1, |xi'|)`, with the transverse direction along `(0, 1, 0)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EffectiveLawTable {
    pub xi1: Vec<f64>,
    pub xit: Vec<f64>,
    pub phi: Vec<f64>,
    pub sigma_long: Vec<f64>,
    pub sigma_trans: Vec<f64>,
    pub phi_sd: Vec<f64>,
    pub sigma_long_sd: Vec<f64>,
    pub sigma_trans_sd: Vec<f64>,
    pub provenance: TableProvenance,
}

/// Sequential tabulation over all replicates.
pub fn tabulate_sigma_hom(
    model: &GeometryModel,
    law: &ConductivityLaw,
    spec: &TableSpec,
) -> Result<EffectiveLawTable, CellError> {
    let reps = (0..spec.replicates)
        .map(|r| tabulate_replicate(model, law, spec, r))
        .collect::<Result<Vec<_>, _>>()?;
    EffectiveLawTable::from_replicates(model, law, spec, reps)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sd = if values.len() > 1 { sample_variance(values).sqrt() } else { 0.0 };
    (mean, sd)
}

impl EffectiveLawTable {
    /// Averages replicate tables; the result does not depend on their order.
    pub fn from_replicates(
        model: &GeometryModel,
        law: &ConductivityLaw,
        spec: &TableSpec,
        mut reps: Vec<ReplicateTable>,
    ) -> Result<Self, CellError> {
        spec.validate()?;
        reps.sort_by_key(|r| r.replicate);
        let m = spec.len();
        if reps.is_empty() || reps.iter().any(|r| r.phi.len() != m) {
            return Err(CellError::InvalidTable("replicate tables do not match the grid"));
        }
        let mut t = Self {
            xi1: spec.xi1.clone(),
            xit: spec.xit.clone(),
            phi: vec![0.0; m],
            sigma_long: vec![0.0; m],
            sigma_trans: vec![0.0; m],
            phi_sd: vec![0.0; m],
            sigma_long_sd: vec![0.0; m],
            sigma_trans_sd: vec![0.0; m],
            provenance: TableProvenance {
                model: model.clone(),
                law: law.clone(),
                torus_side: spec.torus_side,
                replicates: reps.len(),
                grid_h: spec.grid_h,
                tol: spec.tol,
                seed: spec.seed,
                lambda_hat: reps.iter().map(|r| r.lambda_hat).sum::<f64>() / reps.len() as f64,
            },
        };
        let mut buf = vec![0.0; reps.len()];
        for k in 0..m {
            for (field, mean, sd) in [
                (0, &mut t.phi, &mut t.phi_sd),
                (1, &mut t.sigma_long, &mut t.sigma_long_sd),
                (2, &mut t.sigma_trans, &mut t.sigma_trans_sd),
            ] {
                for (b, r) in buf.iter_mut().zip(&reps) {
                    *b = [&r.phi, &r.sigma_long, &r.sigma_trans][field][k];
                }
                (mean[k], sd[k]) = mean_sd(&buf);
            }
        }
        Ok(t)
    }

    pub fn index(&self, a: usize, b: usize) -> usize {
        a * self.xit.len() + b
    }

    pub fn max_xi1(&self) -> f64 {
        *self.xi1.last().unwrap_or(&0.0)
    }

    pub fn max_xit(&self) -> f64 {
        *self.xit.last().unwrap_or(&0.0)
    }

    fn locate(grid: &[f64], x: f64) -> Option<(usize, f64)> {
        let last = *grid.last()?;
        if !(x >= 0.0) || x > last {
            return None;
        }
        if grid.len() == 1 {
            return Some((0, 0.0));
        }
        let i = grid.partition_point(|&g| g <= x).clamp(1, grid.len() - 1) - 1;
        Some((i, (x - grid[i]) / (grid[i + 1] - grid[i])))
    }

    fn bilinear(&self, values: &[f64], a: f64, t: f64) -> Result<f64, CellError> {
        let out = || CellError::OutOfRange { xi1: a, xit: t };
        let (i, u) = Self::locate(&self.xi1, a).ok_or_else(out)?;
        let (j, v) = Self::locate(&self.xit, t).ok_or_else(out)?;
        let i1 = (i + 1).min(self.xi1.len() - 1);
        let j1 = (j + 1).min(self.xit.len() - 1);
        let f = |p: usize, q: usize| values[self.index(p, q)];
        Ok((1.0 - u) * ((1.0 - v) * f(i, j) + v * f(i, j1)) + u * ((1.0 - v) * f(i1, j) + v * f(i1, j1)))
    }

    /// `Phi(xi)`, even in `xi1` and radial in `xi'`.
    pub fn interpolate_phi(&self, xi: [f64; 3]) -> Result<f64, CellError> {
        self.bilinear(&self.phi, xi[0].abs(), xi[1].hypot(xi[2]))
    }

    /// `sigma_hom(xi)` by odd extension in `xi1` and rotation in `xi'`.
    pub fn interpolate_sigma_hom(&self, xi: [f64; 3]) -> Result<[f64; 3], CellError> {
        let a = xi[0].abs();
        let t = xi[1].hypot(xi[2]);
        let long = self.bilinear(&self.sigma_long, a, t)?;
        let trans = self.bilinear(&self.sigma_trans, a, t)?;
        let (c, s) = if t > 0.0 { (xi[1] / t, xi[2] / t) } else { (0.0, 0.0) };
        let sign = if xi[0] < 0.0 { -1.0 } else { 1.0 };
        Ok([sign * long, trans * c, trans * s])
    }

    /// Jacobian of the interpolated map by central differences, clamped to
    /// the table range. Row `i` holds the derivatives of component `i`.
    pub fn tangent(&self, xi: [f64; 3], step: f64) -> Result<[[f64; 3]; 3], CellError> {
        let mut jac = [[0.0; 3]; 3];
        for k in 0..3 {
            let mut plus = xi;
            let mut minus = xi;
            plus[k] += step;
            minus[k] -= step;
            let (plus, minus) = (self.clamp(plus), self.clamp(minus));
            let width = plus[k] - minus[k];
            if width <= 0.0 {
                continue;
            }
            let fp = self.interpolate_sigma_hom(plus)?;
            let fm = self.interpolate_sigma_hom(minus)?;
            for i in 0..3 {
                jac[i][k] = (fp[i] - fm[i]) / width;
            }
        }
        Ok(jac)
    }

    /// Scales `xi` back into the tabulated range; returns it unchanged if inside.
    pub fn clamp(&self, xi: [f64; 3]) -> [f64; 3] {
        let a = self.max_xi1();
        let x1 = xi[0].clamp(-a, a);
        let t = xi[1].hypot(xi[2]);
        let tm = self.max_xit();
        if t > tm {
            let s = tm / t;
            [x1, xi[1] * s, xi[2] * s]
        } else {
            [x1, xi[1], xi[2]]
        }
    }

    pub fn in_range(&self, xi: [f64; 3]) -> bool {
        xi[0].abs() <= self.max_xi1() && xi[1].hypot(xi[2]) <= self.max_xit()
    }

    /// Smallest second difference of `Phi` along grid lines.
    pub fn min_second_difference(&self) -> f64 {
        let mut worst = f64::INFINITY;
        let (na, nb) = (self.xi1.len(), self.xit.len());
        for a in 0..na {
            for b in 1..nb.saturating_sub(1) {
                let (h0, h1) = (self.xit[b] - self.xit[b - 1], self.xit[b + 1] - self.xit[b]);
                let d = (self.phi[self.index(a, b + 1)] - self.phi[self.index(a, b)]) / h1
                    - (self.phi[self.index(a, b)] - self.phi[self.index(a, b - 1)]) / h0;
                worst = worst.min(d);
            }
        }
        for b in 0..nb {
            for a in 1..na.saturating_sub(1) {
                let (h0, h1) = (self.xi1[a] - self.xi1[a - 1], self.xi1[a + 1] - self.xi1[a]);
                let d = (self.phi[self.index(a + 1, b)] - self.phi[self.index(a, b)]) / h1
                    - (self.phi[self.index(a, b)] - self.phi[self.index(a - 1, b)]) / h0;
                worst = worst.min(d);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(xi1: Vec<f64>, xit: Vec<f64>) -> TableSpec {
        TableSpec { xi1, xit, torus_side: 2, replicates: 2, grid_h: 1.0 / 16.0, tol: 1e-10, seed: 5 }
    }

    #[test]
    fn constant_law_table_is_linear_and_odd() {
        let model = GeometryModel::from_pairs(&[0.3, 0.2], &[0.5, 0.3], 0.05).unwrap();
        let law = ConductivityLaw::constant(1.0);
        let s = spec(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 1.0]);
        let t = tabulate_sigma_hom(&model, &law, &s).unwrap();
        assert_eq!(t.phi[0], 0.0);
        assert_eq!((t.sigma_long[0], t.sigma_trans[0]), (0.0, 0.0));
        let lam = t.provenance.lambda_hat;
        for a in 0..3 {
            for b in 0..3 {
                let k = t.index(a, b);
                let expect = (1.0 - lam) * t.xi1[a];
                assert!((t.sigma_long[k] - expect).abs() <= t.sigma_long_sd[k] + 1e-12);
            }
        }
        let xi = [0.7, 0.3, -0.4];
        let f = t.interpolate_sigma_hom(xi).unwrap();
        let g = t.interpolate_sigma_hom([-0.7, -0.3, 0.4]).unwrap();
        let ratio = t.sigma_trans[t.index(0, 2)];
        for k in 0..3 {
            assert!((f[k] + g[k]).abs() < 1e-15);
        }
        assert!((f[1] - ratio * 0.3).abs() < 1e-9 && (f[2] + ratio * 0.4).abs() < 1e-9);
        assert!(t.min_second_difference() >= -1e-6);
        assert!(matches!(t.interpolate_sigma_hom([2.5, 0.0, 0.0]), Err(CellError::OutOfRange { .. })));
    }

    #[test]
    fn grids_must_start_at_zero_and_increase() {
        assert!(spec(vec![0.1, 1.0], vec![0.0]).validate().is_err());
        assert!(spec(vec![0.0, 1.0, 1.0], vec![0.0]).validate().is_err());
        assert!(spec(vec![0.0], vec![0.0]).validate().is_ok());
    }
}
