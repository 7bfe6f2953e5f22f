//! Scalar conductivity laws `sigma(eta)` of the field strength `eta >= 0`.
//!
//! Each law also provides the potential `Q(eta) = int_0^eta sigma(z) z dz`,
//! whose gradient `sigma(|p|) p` is the nonlinear flux. Laws carry a field
//! scale `s` and evaluate `sigma(s * eta)`; this is how the exponential time
//! factorization of the membrane model rescales the conductivities.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::numeric::{golden_min, integrate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConductivityError {
    #[error("field strength {0} is negative")]
    NegativeEta(f64),
    #[error("field strength {value} exceeds the validated range [0, {eta_max}]")]
    RangeExceeded { value: f64, eta_max: f64 },
    #[error("invalid conductivity law: {0}")]
    InvalidLaw(String),
}

/// The functional form of a law before field scaling.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LawKind {
    Constant { sigma: f64 },
    /// `sigma0 + (sigma1 - sigma0)/2 * (1 + erf(k_ep (eta - e_th)))`.
    Sigmoid { sigma0: f64, sigma1: f64, k_ep: f64, e_th: f64 },
    /// C1 monotone-preserving cubic Hermite interpolant through `knots`, with
    /// zero end slopes and constant extrapolation.
    Table { knots: Vec<[f64; 2]> },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "StoredLaw", into = "StoredLaw"))]
pub struct ConductivityLaw {
    kind: LawKind,
    field_scale: f64,
    table: Option<TableData>,
    /// Sigmoid primitives at zero field, the lower limit of the potential.
    origin: (f64, f64),
}

#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
struct StoredLaw {
    kind: LawKind,
    field_scale: f64,
}

#[cfg(feature = "serde")]
impl From<ConductivityLaw> for StoredLaw {
    fn from(law: ConductivityLaw) -> Self {
        Self { kind: law.kind, field_scale: law.field_scale }
    }
}

#[cfg(feature = "serde")]
impl TryFrom<StoredLaw> for ConductivityLaw {
    type Error = ConductivityError;

    fn try_from(stored: StoredLaw) -> Result<Self, Self::Error> {
        Ok(Self::from_kind(stored.kind)?.scaled(stored.field_scale))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct TableData {
    eta: Vec<f64>,
    sigma: Vec<f64>,
    slope: Vec<f64>,
    /// Base potential at each knot.
    q_knot: Vec<f64>,
}

// 3-point Gauss-Legendre on [0, 1]; exact for the quartic integrand sigma(u) u.
const GL3_X: [f64; 3] = [0.112_701_665_379_258_31, 0.5, 0.887_298_334_620_741_7];
const GL3_W: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

impl TableData {
    fn build(knots: &[[f64; 2]]) -> Result<Self, ConductivityError> {
        if knots.len() < 2 {
            return Err(ConductivityError::InvalidLaw("table needs at least two knots".into()));
        }
        let eta: Vec<f64> = knots.iter().map(|k| k[0]).collect();
        let sigma: Vec<f64> = knots.iter().map(|k| k[1]).collect();
        if eta[0] < 0.0 || eta.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k[1].is_finite()) {
            return Err(ConductivityError::InvalidLaw(
                "table knots must be finite with strictly increasing non-negative eta".into(),
            ));
        }
        let n = eta.len();
        let delta: Vec<f64> = (0..n - 1).map(|i| (sigma[i + 1] - sigma[i]) / (eta[i + 1] - eta[i])).collect();
        let mut slope = alloc::vec![0.0; n];
        for i in 1..n - 1 {
            let (d0, d1) = (delta[i - 1], delta[i]);
            if d0 * d1 > 0.0 {
                let (h0, h1) = (eta[i] - eta[i - 1], eta[i + 1] - eta[i]);
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                slope[i] = (w1 + w2) / (w1 / d0 + w2 / d1);
            }
        }
        let mut data = Self { eta, sigma, slope, q_knot: alloc::vec![0.0; n] };
        let mut q = data.sigma[0] * data.eta[0] * data.eta[0] / 2.0;
        data.q_knot[0] = q;
        for i in 0..n - 1 {
            let (a, h) = (data.eta[i], data.eta[i + 1] - data.eta[i]);
            for (x, w) in GL3_X.iter().zip(GL3_W) {
                let u = a + x * h;
                q += w * h * data.eval(u).0 * u;
            }
            data.q_knot[i + 1] = q;
        }
        Ok(data)
    }

    fn segment(&self, u: f64) -> usize {
        match self.eta.binary_search_by(|e| e.partial_cmp(&u).unwrap_or(core::cmp::Ordering::Less)) {
            Ok(i) => i.min(self.eta.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.eta.len() - 2),
        }
    }

    /// Value and derivative at `u`.
    fn eval(&self, u: f64) -> (f64, f64) {
        let n = self.eta.len();
        if u <= self.eta[0] {
            return (self.sigma[0], 0.0);
        }
        if u >= self.eta[n - 1] {
            return (self.sigma[n - 1], 0.0);
        }
        let i = self.segment(u);
        let h = self.eta[i + 1] - self.eta[i];
        let t = (u - self.eta[i]) / h;
        let (y0, y1, m0, m1) = (self.sigma[i], self.sigma[i + 1], self.slope[i], self.slope[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * m1;
        let d = ((6.0 * t2 - 6.0 * t) * y0 + (3.0 * t2 - 4.0 * t + 1.0) * h * m0 + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * h * m1)
            / h;
        (v, d)
    }

    fn potential(&self, u: f64) -> f64 {
        let n = self.eta.len();
        if u <= self.eta[0] {
            return self.sigma[0] * u * u / 2.0;
        }
        if u >= self.eta[n - 1] {
            let e = self.eta[n - 1];
            return self.q_knot[n - 1] + self.sigma[n - 1] * (u * u - e * e) / 2.0;
        }
        let i = self.segment(u);
        let (a, h) = (self.eta[i], u - self.eta[i]);
        let mut q = self.q_knot[i];
        for (x, w) in GL3_X.iter().zip(GL3_W) {
            let z = a + x * h;
            q += w * h * self.eval(z).0 * z;
        }
        q
    }
}

fn erf_primitives(w: f64, k: f64) -> (f64, f64) {
    // antiderivatives of erf(k w) and w erf(k w)
    let e = libm::erf(k * w);
    let g = (-(k * w) * (k * w)).exp();
    let sqrt_pi = PI.sqrt();
    let f0 = w * e + g / (k * sqrt_pi);
    let f1 = (w * w / 2.0 - 1.0 / (4.0 * k * k)) * e + w * g / (2.0 * k * sqrt_pi);
    (f0, f1)
}

impl ConductivityLaw {
    pub fn constant(sigma: f64) -> Self {
        Self { kind: LawKind::Constant { sigma }, field_scale: 1.0, table: None, origin: (0.0, 0.0) }
    }

    pub fn sigmoid(sigma0: f64, sigma1: f64, k_ep: f64, e_th: f64) -> Self {
        let origin = erf_primitives(-e_th, k_ep);
        Self { kind: LawKind::Sigmoid { sigma0, sigma1, k_ep, e_th }, field_scale: 1.0, table: None, origin }
    }

    pub fn table(knots: Vec<[f64; 2]>) -> Result<Self, ConductivityError> {
        let table = TableData::build(&knots)?;
        Ok(Self { kind: LawKind::Table { knots }, field_scale: 1.0, table: Some(table), origin: (0.0, 0.0) })
    }

    /// Builds a law from its kind, validating parameters.
    pub fn from_kind(kind: LawKind) -> Result<Self, ConductivityError> {
        let law = match kind {
            LawKind::Constant { sigma } => Self::constant(sigma),
            LawKind::Sigmoid { sigma0, sigma1, k_ep, e_th } => Self::sigmoid(sigma0, sigma1, k_ep, e_th),
            LawKind::Table { knots } => return Self::table(knots),
        };
        law.check_parameters()?;
        Ok(law)
    }

    fn check_parameters(&self) -> Result<(), ConductivityError> {
        match self.kind {
            LawKind::Constant { sigma } if !sigma.is_finite() => {
                Err(ConductivityError::InvalidLaw("sigma must be finite".into()))
            }
            LawKind::Sigmoid { sigma0, sigma1, k_ep, e_th }
                if !(k_ep > 0.0) || ![sigma0, sigma1, k_ep, e_th].iter().all(|v| v.is_finite()) =>
            {
                Err(ConductivityError::InvalidLaw("sigmoid needs finite parameters with k_ep > 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    pub fn field_scale(&self) -> f64 {
        self.field_scale
    }

    fn table_data(&self) -> &TableData {
        self.table.as_ref().expect("table laws are always built with their interpolant")
    }

    /// Unscaled value and derivative.
    fn base(&self, u: f64) -> (f64, f64) {
        match self.kind {
            LawKind::Constant { sigma } => (sigma, 0.0),
            LawKind::Sigmoid { sigma0, sigma1, k_ep, e_th } => {
                let half = 0.5 * (sigma1 - sigma0);
                let z = k_ep * (u - e_th);
                let v = sigma0 + half * (1.0 + libm::erf(z));
                let d = half * k_ep * 2.0 / PI.sqrt() * (-z * z).exp();
                (v, d)
            }
            LawKind::Table { .. } => self.table_data().eval(u),
        }
    }

    fn base_potential(&self, u: f64) -> f64 {
        self.base_all(u).0
    }

    /// Unscaled potential, value and derivative from one `erf` evaluation.
    #[inline]
    fn base_all(&self, u: f64) -> (f64, f64, f64) {
        match self.kind {
            LawKind::Constant { sigma } => (sigma * u * u / 2.0, sigma, 0.0),
            LawKind::Sigmoid { sigma0, sigma1, k_ep, e_th } => {
                let mid = 0.5 * (sigma0 + sigma1);
                let half = 0.5 * (sigma1 - sigma0);
                let (a0, a1) = self.origin;
                let w = u - e_th;
                let z = k_ep * w;
                let e = libm::erf(z);
                let g = (-z * z).exp();
                let sqrt_pi = PI.sqrt();
                let b0 = w * e + g / (k_ep * sqrt_pi);
                let b1 = (w * w / 2.0 - 1.0 / (4.0 * k_ep * k_ep)) * e + w * g / (2.0 * k_ep * sqrt_pi);
                let q = mid * u * u / 2.0 + half * ((b1 - a1) + e_th * (b0 - a0));
                (q, sigma0 + half * (1.0 + e), half * k_ep * 2.0 / sqrt_pi * g)
            }
            LawKind::Table { .. } => {
                let t = self.table_data();
                let (v, d) = t.eval(u);
                (t.potential(u), v, d)
            }
        }
    }

    /// `sigma(|eta|)`, unchecked.
    #[inline]
    pub fn sigma(&self, eta: f64) -> f64 {
        self.base(self.field_scale * eta.abs()).0
    }

    /// `d sigma / d eta` at `|eta|`.
    #[inline]
    pub fn dsigma(&self, eta: f64) -> f64 {
        self.field_scale * self.base(self.field_scale * eta.abs()).1
    }

    /// `(sigma, d sigma / d eta)` in one evaluation.
    #[inline]
    pub fn sigma_and_derivative(&self, eta: f64) -> (f64, f64) {
        let (v, d) = self.base(self.field_scale * eta.abs());
        (v, self.field_scale * d)
    }

    /// `sigma'(eta) / eta`, the rank-one Hessian weight of `Q(|p|)`; zero at
    /// `eta = 0` where the rank-one term vanishes.
    #[inline]
    pub fn dsigma_over_eta(&self, eta: f64) -> f64 {
        let eta = eta.abs();
        if eta == 0.0 {
            0.0
        } else {
            self.dsigma(eta) / eta
        }
    }

    /// Derivative of the scalar flux `sigma(eta) eta`.
    pub fn flux_derivative(&self, eta: f64) -> f64 {
        let (v, d) = self.sigma_and_derivative(eta);
        v + eta.abs() * d
    }

    /// `(Q(|eta|), sigma(|eta|))` sharing one evaluation.
    #[inline]
    pub fn q_and_sigma(&self, eta: f64) -> (f64, f64) {
        let s = self.field_scale;
        let (q, v, _) = self.base_all(s * eta.abs());
        (q / (s * s), v)
    }

    /// `(sigma(|eta|), sigma'(|eta|) / |eta|)` sharing one evaluation.
    #[inline]
    pub fn sigma_and_weight(&self, eta: f64) -> (f64, f64) {
        let eta = eta.abs();
        let (v, d) = self.sigma_and_derivative(eta);
        (v, if eta == 0.0 { 0.0 } else { d / eta })
    }

    /// Closed-form potential `Q(|eta|)`.
    #[inline]
    pub fn q(&self, eta: f64) -> f64 {
        let s = self.field_scale;
        self.base_potential(s * eta.abs()) / (s * s)
    }

    pub fn sigma_eval(&self, eta: f64) -> Result<f64, ConductivityError> {
        if eta < 0.0 {
            return Err(ConductivityError::NegativeEta(eta));
        }
        Ok(self.sigma(eta))
    }

    /// Potential by adaptive quadrature to relative tolerance `1e-10`.
    pub fn q_potential(&self, eta: f64) -> Result<f64, ConductivityError> {
        if eta < 0.0 {
            return Err(ConductivityError::NegativeEta(eta));
        }
        let mut breaks: Vec<f64> = alloc::vec![0.0];
        match &self.kind {
            LawKind::Sigmoid { e_th, .. } => breaks.push(e_th / self.field_scale),
            LawKind::Table { .. } => breaks.extend(self.table_data().eta.iter().map(|e| e / self.field_scale)),
            LawKind::Constant { .. } => {}
        }
        breaks.retain(|&b| b < eta);
        breaks.push(eta);
        Ok(breaks
            .windows(2)
            .map(|w| integrate(|z| self.sigma(z) * z, w[0], w[1], 1e-12))
            .sum())
    }

    /// The law `eta -> sigma(exp(lambda t) eta)`.
    pub fn lambda_transform(&self, lambda: f64, t: f64) -> Self {
        let mut out = self.clone();
        out.field_scale *= (lambda * t).exp();
        out
    }

    /// Same law with field scale multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.field_scale *= factor;
        out
    }

    fn lower_profile(&self, eta: f64) -> f64 {
        let (v, d) = self.sigma_and_derivative(eta);
        v.min(v + eta * d)
    }

    /// Certifies the two-sided bounds on `[0, eta_max]`.
    pub fn validate_h5(&self, eta_max: f64, n_grid: usize) -> H5Report {
        let n_grid = n_grid.max(100);
        let grid: Vec<f64> = (0..=n_grid).map(|i| eta_max * i as f64 / n_grid as f64).collect();
        let grid_min = grid.iter().map(|&e| self.lower_profile(e)).fold(f64::INFINITY, f64::min);
        match self.kind {
            LawKind::Constant { sigma } => H5Report::new(sigma, sigma, None, eta_max, true),
            LawKind::Sigmoid { sigma0, sigma1, .. } if sigma1 >= sigma0 => {
                // monotone sigmoid: sigma0 <= sigma <= sigma + eta sigma', and sigma <= sigma1
                debug_assert!(grid_min >= sigma0 - 1e-12);
                let violation = if sigma0 > 0.0 { None } else { Some(0.0) };
                H5Report::new(sigma0, sigma1, violation, eta_max, true)
            }
            _ => {
                let step = eta_max / n_grid as f64;
                let (mut lo, mut lo_at) = (f64::INFINITY, 0.0);
                let (mut hi, mut hi_at) = (f64::NEG_INFINITY, 0.0);
                for &e in &grid {
                    let m = self.lower_profile(e);
                    if m < lo {
                        lo = m;
                        lo_at = e;
                    }
                    let s = self.sigma(e);
                    if s > hi {
                        hi = s;
                        hi_at = e;
                    }
                }
                let a = (lo_at - step).max(0.0);
                let b = (lo_at + step).min(eta_max);
                let (x, fx) = golden_min(|e| self.lower_profile(e), a, b, 60);
                if fx < lo {
                    lo = fx;
                    lo_at = x;
                }
                let a = (hi_at - step).max(0.0);
                let b = (hi_at + step).min(eta_max);
                let (_, fx) = golden_min(|e| -self.sigma(e), a, b, 60);
                hi = hi.max(-fx);
                let violation = if lo > 0.0 { None } else { Some(lo_at) };
                H5Report::new(lo, hi, violation, eta_max, false)
            }
        }
    }

    /// `(sigma(|xi|) xi - sigma(|eta|) eta) . (xi - eta) - sigma_lower |xi - eta|^2`.
    pub fn monotonicity_gap(
        &self,
        report: &H5Report,
        xi: [f64; 3],
        eta_vec: [f64; 3],
    ) -> Result<f64, ConductivityError> {
        let nx = norm3(xi);
        let ne = norm3(eta_vec);
        for v in [nx, ne] {
            if v > report.eta_max * (1.0 + 1e-12) {
                return Err(ConductivityError::RangeExceeded { value: v, eta_max: report.eta_max });
            }
        }
        let (sx, se) = (self.sigma(nx), self.sigma(ne));
        let mut inner = 0.0;
        let mut sq = 0.0;
        for i in 0..3 {
            let d = xi[i] - eta_vec[i];
            inner += (sx * xi[i] - se * eta_vec[i]) * d;
            sq += d * d;
        }
        Ok(inner - report.sigma_lower * sq)
    }
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Certified bounds `sigma_lower <= min(sigma, sigma + eta sigma')` and
/// `sigma <= sigma_upper` on `[0, eta_max]`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct H5Report {
    pub sigma_lower: f64,
    pub sigma_upper: f64,
    pub eta_max: f64,
    pub pass: bool,
    /// Field strength where the lower bound fails.
    pub violation_at: Option<f64>,
    /// Bounds proven in closed form rather than by sampling.
    pub analytic: bool,
}

impl H5Report {
    fn new(lower: f64, upper: f64, violation_at: Option<f64>, eta_max: f64, analytic: bool) -> Self {
        let pass = lower > 0.0 && violation_at.is_none();
        Self { sigma_lower: lower, sigma_upper: upper, eta_max, pass, violation_at, analytic }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig() -> ConductivityLaw {
        ConductivityLaw::sigmoid(1.0, 3.0, 2.0, 1.0)
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sig().sigma(1.0), 2.0);
        assert!((sig().sigma(0.0) - 1.004_677_734_981_047_3).abs() < 1e-15);
        assert!((sig().sigma(50.0) - 3.0).abs() < 1e-15);
        assert_eq!(ConductivityLaw::constant(2.0).sigma(7.0), 2.0);
        assert!(matches!(sig().sigma_eval(-1.0), Err(ConductivityError::NegativeEta(_))));
    }

    #[test]
    fn potentials_match_high_precision() {
        let law = sig();
        let oracle = 4.876_073_728_230_107;
        assert!((law.q(2.0) - oracle).abs() < 1e-13 * oracle);
        assert!((law.q_potential(2.0).unwrap() - oracle).abs() < 1e-10 * oracle);
        let far = 17.250_047_852_757_84;
        assert!((law.q(3.5) - far).abs() < 1e-13 * far);
        assert_eq!(ConductivityLaw::constant(2.0).q(3.0), 9.0);
        assert_eq!(law.q(0.0), 0.0);
    }

    #[test]
    fn potential_derivative_is_flux() {
        for law in [sig(), ConductivityLaw::table(alloc::vec![[0.0, 1.0], [1.0, 2.0], [2.5, 2.2]]).unwrap()] {
            for &e in &[0.1, 0.7, 1.3, 2.0, 3.0] {
                let h = 1e-5;
                let fd = (law.q(e + h) - law.q(e - h)) / (2.0 * h);
                assert!((fd - law.sigma(e) * e).abs() < 1e-8, "{e}");
                let dfd = (law.sigma(e + h) - law.sigma(e - h)) / (2.0 * h);
                assert!((dfd - law.dsigma(e)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn table_potential_matches_quadrature() {
        let law = ConductivityLaw::table(alloc::vec![[0.2, 1.0], [1.0, 1.5], [1.7, 1.4], [2.0, 3.0]]).unwrap();
        for &e in &[0.1, 0.5, 1.2, 1.9, 2.4] {
            let q = law.q_potential(e).unwrap();
            assert!((law.q(e) - q).abs() < 1e-12 * (1.0 + q), "{e}");
        }
    }

    #[test]
    fn h5_certification() {
        let rep = ConductivityLaw::constant(2.0).validate_h5(10.0, 100);
        assert_eq!((rep.sigma_lower, rep.sigma_upper, rep.pass), (2.0, 2.0, true));
        let rep = sig().validate_h5(10.0, 200);
        assert_eq!((rep.sigma_lower, rep.sigma_upper), (1.0, 3.0));
        assert!(rep.analytic && rep.pass);
        let dip = ConductivityLaw::table(alloc::vec![[0.0, 1.0], [1.0, 0.0], [2.0, 1.0]]).unwrap();
        let rep = dip.validate_h5(2.0, 100);
        assert!(!rep.pass);
        let at = rep.violation_at.unwrap();
        assert!(at > 0.5 && at <= 1.0 + 1e-9, "{at}");
    }

    #[test]
    fn monotonicity_gap_oracles() {
        let law = sig();
        let rep = law.validate_h5(10.0, 200);
        let g = law.monotonicity_gap(&rep, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap();
        assert!((g - 2.0).abs() < 1e-14);
        let g = law.monotonicity_gap(&rep, [0.3, 1.2, -0.5], [2.0, -0.4, 0.7]).unwrap();
        assert!((g - 13.082_170_939_324_573).abs() < 1e-12);
        assert_eq!(law.monotonicity_gap(&rep, [0.3, 1.2, -0.5], [0.3, 1.2, -0.5]).unwrap(), 0.0);
        assert!(law.monotonicity_gap(&rep, [11.0, 0.0, 0.0], [0.0; 3]).is_err());
    }

    #[test]
    fn lambda_transform_composes() {
        let law = sig();
        assert_eq!(law.lambda_transform(0.0, 3.0), law);
        let doubled = law.lambda_transform(2.0_f64.ln(), 1.0);
        for i in 0..100 {
            let e = 0.037 * i as f64;
            assert!((doubled.sigma(e) - law.sigma(2.0 * e)).abs() < 1e-14);
        }
        let a = law.lambda_transform(1.5, 0.3).lambda_transform(1.5, 0.4);
        let b = law.lambda_transform(1.5, 0.7);
        for i in 0..50 {
            let e = 0.05 * i as f64;
            assert!((a.sigma(e) - b.sigma(e)).abs() < 1e-12);
        }
    }
}
