//! Monte Carlo estimates of volume fractions and Palm (perimeter) intensities,
//! with checks of the radius identity and the Campbell formula.
//!
//! Every realization is sampled on the window `[0, side)^2`. Disks that cross
//! the window boundary contribute their clipped area and clipped arc length, so
//! the estimators are unbiased for every window size.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::geometry::clip::{circle_rect_arcs, disk_rect_area};
use crate::geometry::{sample_realization, GeometryError, GeometryModel, Rect};
use crate::numeric::{integrate, mean_and_se, sum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErgodicsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("test function support is not contained in the sampling window")]
    UnsupportedTestFunction,
    #[error("at least one sample is required")]
    NoSamples,
    #[error("expected {expected} class values, got {got}")]
    ClassCount { expected: usize, got: usize },
}

/// Seed of the `index`-th independent replicate derived from a base seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-class area fraction and perimeter density of one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStats {
    pub area_fraction: Vec<f64>,
    pub perimeter_density: Vec<f64>,
}

/// Exact clipped statistics of one realization on `[0, side)^2`.
pub fn sample_stats(model: &GeometryModel, side: f64, seed: u64) -> Result<SampleStats, GeometryError> {
    let window = Rect::square(side);
    let real = sample_realization(model, window, seed)?;
    let k = model.n_classes();
    let mut area = vec![Vec::new(); k];
    let mut perimeter = vec![Vec::new(); k];
    for d in &real.disks {
        area[d.class - 1].push(disk_rect_area(d.center, d.radius, &window));
        let arcs = circle_rect_arcs(d.center, d.radius, &window);
        perimeter[d.class - 1].push(d.radius * sum(arcs.iter().map(|(a, b)| b - a)));
    }
    let a = window.area();
    Ok(SampleStats {
        area_fraction: area.into_iter().map(|v| sum(v) / a).collect(),
        perimeter_density: perimeter.into_iter().map(|v| sum(v) / a).collect(),
    })
}

/// Replicate statistics for `n_samples` derived seeds.
pub fn collect_samples(
    model: &GeometryModel,
    side: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SampleStats>, ErgodicsError> {
    if n_samples == 0 {
        return Err(ErgodicsError::NoSamples);
    }
    model.validate()?;
    (0..n_samples)
        .map(|s| sample_stats(model, side, derive_seed(seed, s as u64)).map_err(Into::into))
        .collect()
}

/// Volume fraction estimate (`Lambda_k = P(origin in a class-k disk)`).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate {
    pub lambda_total: f64,
    pub lambda_by_class: Vec<f64>,
    pub std_error: Vec<f64>,
    pub total_std_error: f64,
    pub n_samples: usize,
    pub window_side: f64,
    /// `samples[s][k]`: class-`k` area fraction of replicate `s`.
    pub samples: Vec<Vec<f64>>,
}

/// Perimeter per unit area estimate (Palm mass of each class).
#[derive(Clone, Debug, PartialEq)]
pub struct PalmEstimate {
    pub mu_by_class: Vec<f64>,
    pub std_error: Vec<f64>,
    pub mu_total: f64,
    pub total_std_error: f64,
    pub n_samples: usize,
    pub window_side: f64,
    pub samples: Vec<Vec<f64>>,
}

fn per_class_summary(samples: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let mut means = Vec::with_capacity(k);
    let mut ses = Vec::with_capacity(k);
    for c in 0..k {
        let column: Vec<f64> = samples.iter().map(|s| s[c]).collect();
        let (m, se) = mean_and_se(&column);
        means.push(m);
        ses.push(se);
    }
    let totals: Vec<f64> = samples.iter().map(|s| sum(s.iter().copied())).collect();
    let (_, total_se) = mean_and_se(&totals);
    let total = sum(means.iter().copied());
    (means, ses, total, total_se)
}

impl DensityEstimate {
    pub fn from_samples(stats: &[SampleStats], window_side: f64) -> Self {
        let samples: Vec<Vec<f64>> = stats.iter().map(|s| s.area_fraction.clone()).collect();
        let k = samples.first().map_or(0, Vec::len);
        let (lambda_by_class, std_error, lambda_total, total_std_error) = per_class_summary(&samples, k);
        Self {
            lambda_total,
            lambda_by_class,
            std_error,
            total_std_error,
            n_samples: stats.len(),
            window_side,
            samples,
        }
    }
}

impl PalmEstimate {
    pub fn from_samples(stats: &[SampleStats], window_side: f64) -> Self {
        let samples: Vec<Vec<f64>> = stats.iter().map(|s| s.perimeter_density.clone()).collect();
        let k = samples.first().map_or(0, Vec::len);
        let (mu_by_class, std_error, mu_total, total_std_error) = per_class_summary(&samples, k);
        Self {
            mu_by_class,
            std_error,
            mu_total,
            total_std_error,
            n_samples: stats.len(),
            window_side,
            samples,
        }
    }
}

pub fn estimate_volume_fractions(
    model: &GeometryModel,
    window_side: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DensityEstimate, ErgodicsError> {
    let stats = collect_samples(model, window_side, n_samples, seed)?;
    Ok(DensityEstimate::from_samples(&stats, window_side))
}

pub fn estimate_perimeter_intensity(
    model: &GeometryModel,
    window_side: f64,
    n_samples: usize,
    seed: u64,
) -> Result<PalmEstimate, ErgodicsError> {
    let stats = collect_samples(model, window_side, n_samples, seed)?;
    Ok(PalmEstimate::from_samples(&stats, window_side))
}

/// Comparison of two Monte Carlo estimates of the same quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
    pub combined_se: f64,
    pub pass: bool,
}

/// Number of combined standard errors tolerated by the identity checks.
pub const PASS_SIGMAS: f64 = 4.0;

impl IdentityReport {
    /// Builds the report from paired per-replicate values of both sides.
    pub fn from_pairs(lhs: &[f64], rhs: &[f64]) -> Self {
        let (l, se_l) = mean_and_se(lhs);
        let (r, se_r) = mean_and_se(rhs);
        let combined_se = (se_l * se_l + se_r * se_r).sqrt();
        let difference = l - r;
        let slack = 1e-12 * (1.0 + l.abs().max(r.abs()));
        Self {
            lhs: l,
            rhs: r,
            difference,
            combined_se,
            pass: difference.abs() <= PASS_SIGMAS * combined_se + slack,
        }
    }
}

/// Radius identity `sum f_k Lambda_k = 1/2 sum r_k f_k mu_k` evaluated on
/// precomputed replicates.
pub fn radius_identity_from_samples(model: &GeometryModel, f_values: &[f64], stats: &[SampleStats]) -> IdentityReport {
    let radii: Vec<f64> = model.classes.iter().map(|c| c.radius).collect();
    let lhs: Vec<f64> = stats
        .iter()
        .map(|s| sum(s.area_fraction.iter().zip(f_values).map(|(a, f)| a * f)))
        .collect();
    let rhs: Vec<f64> = stats
        .iter()
        .map(|s| {
            0.5 * sum(s
                .perimeter_density
                .iter()
                .zip(f_values)
                .zip(&radii)
                .map(|((m, f), r)| r * f * m))
        })
        .collect();
    IdentityReport::from_pairs(&lhs, &rhs)
}

pub fn check_radius_identity(
    model: &GeometryModel,
    f_values: &[f64],
    window_side: f64,
    n_samples: usize,
    seed: u64,
) -> Result<IdentityReport, ErgodicsError> {
    if f_values.len() != model.n_classes() {
        return Err(ErgodicsError::ClassCount { expected: model.n_classes(), got: f_values.len() });
    }
    let stats = collect_samples(model, window_side, n_samples, seed)?;
    Ok(radius_identity_from_samples(model, f_values, &stats))
}

/// Separable test function `g(x) h(class)` with `g` supported in `support`.
pub struct SeparableTestFn<G: Fn([f64; 2]) -> f64> {
    pub g: G,
    pub support: Rect,
    /// `h_k` for class `k` (index `k - 1`).
    pub class_weights: Vec<f64>,
}

const ARC_TOL: f64 = 1e-10;

fn integral_over_support<G: Fn([f64; 2]) -> f64>(g: &G, rect: &Rect) -> f64 {
    if rect.area() == 0.0 {
        return 0.0;
    }
    integrate(
        |y| integrate(|x| g([x, y]), rect.x0, rect.x1, ARC_TOL),
        rect.y0,
        rect.y1,
        ARC_TOL,
    )
}

/// Campbell formula: the expected membrane integral of `g h` equals
/// `int g dx * sum_k h_k mu_k`.
pub fn check_campbell<G: Fn([f64; 2]) -> f64>(
    model: &GeometryModel,
    test_fn: &SeparableTestFn<G>,
    window_side: f64,
    n_samples: usize,
    seed: u64,
) -> Result<IdentityReport, ErgodicsError> {
    let window = Rect::square(window_side);
    if !window.contains_rect(&test_fn.support) {
        return Err(ErgodicsError::UnsupportedTestFunction);
    }
    if test_fn.class_weights.len() != model.n_classes() {
        return Err(ErgodicsError::ClassCount {
            expected: model.n_classes(),
            got: test_fn.class_weights.len(),
        });
    }
    if n_samples == 0 {
        return Err(ErgodicsError::NoSamples);
    }
    model.validate()?;
    let g_integral = integral_over_support(&test_fn.g, &test_fn.support);
    let mut lhs = Vec::with_capacity(n_samples);
    let mut rhs = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let real = sample_realization(model, window, derive_seed(seed, s as u64))?;
        let mut per_class_perimeter = vec![Vec::new(); model.n_classes()];
        let mut line = Vec::new();
        for d in &real.disks {
            let arcs = circle_rect_arcs(d.center, d.radius, &window);
            per_class_perimeter[d.class - 1].push(d.radius * sum(arcs.iter().map(|(a, b)| b - a)));
            let h = test_fn.class_weights[d.class - 1];
            if h == 0.0 {
                continue;
            }
            for (a, b) in circle_rect_arcs(d.center, d.radius, &test_fn.support) {
                let on_arc = |t: f64| {
                    (test_fn.g)([d.center[0] + d.radius * t.cos(), d.center[1] + d.radius * t.sin()])
                };
                line.push(h * d.radius * integrate(on_arc, a, b, ARC_TOL));
            }
        }
        lhs.push(sum(line));
        let area = window.area();
        rhs.push(
            g_integral
                * sum(per_class_perimeter
                    .into_iter()
                    .zip(&test_fn.class_weights)
                    .map(|(p, h)| h * sum(p) / area)),
        );
    }
    Ok(IdentityReport::from_pairs(&lhs, &rhs))
}

/// Closed-form volume fraction `pi r_k^2 p_k` of every class.
pub fn analytic_volume_fractions(model: &GeometryModel) -> Vec<f64> {
    (0..model.n_classes()).map(|k| model.volume_fraction(k)).collect()
}

/// Closed-form Palm mass `2 pi r_k p_k` of every class.
pub fn analytic_palm_masses(model: &GeometryModel) -> Vec<f64> {
    model
        .classes
        .iter()
        .map(|c| 2.0 * PI * c.radius * c.probability)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure() -> GeometryModel {
        GeometryModel::from_pairs(&[0.2, 0.3], &[0.5, 1.0 / 6.0], 0.0).unwrap()
    }

    #[test]
    fn full_lattice_fraction_is_exact() {
        let model = GeometryModel::full_lattice(0.25).unwrap();
        let est = estimate_volume_fractions(&model, 10.0, 3, 1).unwrap();
        assert!((est.lambda_total - PI / 16.0).abs() < 1e-10);
        assert!(est.std_error[0] < 1e-10);
        let palm = estimate_perimeter_intensity(&model, 10.0, 3, 1).unwrap();
        assert!((palm.mu_by_class[0] - PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn empty_model_is_zero() {
        let model = GeometryModel::from_pairs(&[0.2], &[0.0], 0.0).unwrap();
        let est = estimate_volume_fractions(&model, 10.0, 2, 1).unwrap();
        assert_eq!(est.lambda_total, 0.0);
        let rep = check_radius_identity(&model, &[1.0], 10.0, 2, 1).unwrap();
        assert_eq!((rep.lhs, rep.rhs), (0.0, 0.0));
        assert!(rep.pass);
    }

    #[test]
    fn figure_model_densities() {
        let est = estimate_volume_fractions(&figure(), 30.0, 6, 3).unwrap();
        let exact = analytic_volume_fractions(&figure());
        for k in 0..2 {
            assert!((est.lambda_by_class[k] - exact[k]).abs() <= 4.0 * est.std_error[k]);
        }
        let total: f64 = est.lambda_by_class.iter().sum();
        assert!((total - est.lambda_total).abs() < 1e-12);
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: Vec<u64> = (0..100).map(|i| derive_seed(5, i)).collect();
        for i in 0..seeds.len() {
            for j in 0..i {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }

    #[test]
    fn campbell_indicator_full_lattice() {
        let model = GeometryModel::full_lattice(0.25).unwrap();
        let tf = SeparableTestFn { g: |_x: [f64; 2]| 1.0, support: Rect::new(2.0, 2.0, 3.0, 3.0), class_weights: vec![1.0] };
        let rep = check_campbell(&model, &tf, 5.0, 3, 2).unwrap();
        assert!((rep.rhs - PI / 2.0).abs() < 1e-9);
        assert!(rep.pass, "{rep:?}");
        let outside = SeparableTestFn { g: |_x: [f64; 2]| 1.0, support: Rect::new(4.0, 4.0, 6.0, 6.0), class_weights: vec![1.0] };
        assert_eq!(check_campbell(&model, &outside, 5.0, 1, 2), Err(ErgodicsError::UnsupportedTestFunction));
    }
}
