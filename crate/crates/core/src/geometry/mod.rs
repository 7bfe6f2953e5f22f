//! Stationary ergodic disk processes on the unit lattice.
//!
//! Cells `z + [0, 1)^2` of the integer lattice are independently colored: color
//! `0` leaves the cell empty, color `k >= 1` places a disk of radius `r_k` at the
//! cell center, optionally displaced uniformly inside a ball of radius
//! `jitter`. A global shift `xi` in `[0, 1)^2` moves the whole pattern, which is
//! what turns the lattice into a stationary process. Because
//! `max r_k + jitter < 1/2`, every disk stays strictly inside its own cell.
//!
//! A [`Realization`] keeps the coloring of the cells that touch its window plus
//! the lattice offset and the global shift, so translations act exactly on the
//! lattice indices.

pub mod clip;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Default tolerance for classifying points on a circle.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry model: {0}")]
    InvalidModel(String),
    #[error("point ({0}, {1}) lies outside the realization window")]
    OutsideWindow(f64, f64),
    #[error("realization window does not cover the scaled cross-section")]
    WindowTooSmall,
    #[error("window has zero area")]
    EmptyWindow,
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub const fn square(side: f64) -> Self {
        Self::new(0.0, 0.0, side, side)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn contains_closed(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    /// Distance from `p` (inside) to the nearest side.
    pub fn inner_distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.x0)
            .min(self.x1 - p[0])
            .min(p[1] - self.y0)
            .min(self.y1 - p[1])
    }

    /// Shrink by `d` on every side.
    pub fn eroded(&self, d: f64) -> Rect {
        Rect::new(self.x0 + d, self.y0 + d, self.x1 - d, self.y1 - d)
    }
}

/// One radius class of the lattice model.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RadiusClass {
    pub radius: f64,
    pub probability: f64,
}

/// Parametric stationary disk process (lattice pitch fixed to one).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeometryModel {
    pub classes: Vec<RadiusClass>,
    /// Radius of the per-cell uniform displacement ball.
    pub jitter: f64,
}

impl GeometryModel {
    /// Builds and validates a model.
    pub fn new(classes: Vec<RadiusClass>, jitter: f64) -> Result<Self, GeometryError> {
        let model = Self { classes, jitter };
        model.validate()?;
        Ok(model)
    }

    /// Convenience constructor from parallel radius / probability slices.
    pub fn from_pairs(radii: &[f64], probabilities: &[f64], jitter: f64) -> Result<Self, GeometryError> {
        if radii.len() != probabilities.len() {
            return Err(GeometryError::InvalidModel(
                "radii and probabilities differ in length".to_string(),
            ));
        }
        let classes = radii
            .iter()
            .zip(probabilities)
            .map(|(&radius, &probability)| RadiusClass { radius, probability })
            .collect();
        Self::new(classes, jitter)
    }

    /// Every cell occupied by a disk of radius `r`.
    pub fn full_lattice(r: f64) -> Result<Self, GeometryError> {
        Self::from_pairs(&[r], &[1.0], 0.0)
    }

    /// No disks at all.
    pub fn empty() -> Self {
        Self { classes: Vec::new(), jitter: 0.0 }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidModel(msg));
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return bad("jitter must be finite and non-negative".to_string());
        }
        let mut total = 0.0;
        for (k, c) in self.classes.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.probability) {
                return bad(alloc::format!("probability of class {} outside [0, 1]", k + 1));
            }
            if !(c.radius > 0.0) || !c.radius.is_finite() {
                return bad(alloc::format!("radius of class {} must be positive", k + 1));
            }
            total += c.probability;
        }
        if total > 1.0 + 1e-12 {
            return bad(alloc::format!("class probabilities sum to {total} > 1"));
        }
        if !self.classes.is_empty() && self.max_radius() + self.jitter >= 0.5 {
            return bad(alloc::format!(
                "max radius {} plus jitter {} must stay below 1/2",
                self.max_radius(),
                self.jitter
            ));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Probability of an empty cell.
    pub fn p_empty(&self) -> f64 {
        (1.0 - self.classes.iter().map(|c| c.probability).sum::<f64>()).max(0.0)
    }

    pub fn max_radius(&self) -> f64 {
        self.classes.iter().map(|c| c.radius).fold(0.0, f64::max)
    }

    pub fn min_radius(&self) -> f64 {
        self.classes.iter().map(|c| c.radius).fold(f64::INFINITY, f64::min)
    }

    /// Guaranteed lower bound on the gap between disk boundaries.
    pub fn min_gap(&self) -> f64 {
        1.0 - 2.0 * (self.max_radius() + self.jitter)
    }

    /// Volume fraction of class `k` (0-based): `pi r^2 p`.
    pub fn volume_fraction(&self, k: usize) -> f64 {
        let c = self.classes[k];
        PI * c.radius * c.radius * c.probability
    }

    /// Palm mass (perimeter per unit area) of class `k`: `2 pi r p`.
    pub fn palm_mass(&self, k: usize) -> f64 {
        let c = self.classes[k];
        2.0 * PI * c.radius * c.probability
    }

    pub fn total_volume_fraction(&self) -> f64 {
        (0..self.n_classes()).map(|k| self.volume_fraction(k)).sum()
    }

    /// Covering radius that holds almost surely; only available when every cell
    /// is occupied (worst point is a cell corner).
    pub fn covering_radius(&self) -> Option<f64> {
        if self.classes.is_empty() || self.p_empty() > 0.0 {
            return None;
        }
        Some(0.5 * 2.0_f64.sqrt() + self.jitter - self.min_radius())
    }

    /// Practical covering radius for a window of `n_cells` cells: the smallest
    /// block side `b` such that the union bound on an empty `b x b` block is below
    /// `failure_prob` gives `R0 = sqrt(2) b + jitter - r_min`.
    pub fn practical_covering_radius(&self, n_cells: usize, failure_prob: f64) -> Option<f64> {
        if self.classes.is_empty() {
            return None;
        }
        if let Some(r) = self.covering_radius() {
            return Some(r);
        }
        let p0 = self.p_empty();
        if p0 >= 1.0 {
            return None;
        }
        let target = (failure_prob / n_cells.max(1) as f64).ln() / p0.ln();
        let side = target.max(1.0).sqrt().ceil();
        Some(2.0_f64.sqrt() * side + self.jitter - self.min_radius())
    }

    fn color(&self, u: f64) -> usize {
        let mut acc = self.p_empty();
        if u < acc {
            return 0;
        }
        for (k, c) in self.classes.iter().enumerate() {
            acc += c.probability;
            if u < acc {
                return k + 1;
            }
        }
        // rounding of the cumulative sum
        if self.p_empty() == 0.0 {
            self.classes.len()
        } else {
            0
        }
    }
}

/// One disk of a realization. `class` is the cell color `k >= 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
    pub class: usize,
}

/// Where a point sits relative to the random set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    /// Inside an open disk of class `k`.
    Interior(usize),
    /// On (within tolerance of) a circle of class `k`.
    Boundary(usize),
    Exterior,
}

/// One sampled configuration of disks inside a finite window.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Realization {
    pub window: Rect,
    pub disks: Vec<Disk>,
    pub global_shift: [f64; 2],
    pub seed: u64,
    /// Lattice translation accumulated by shifts.
    pub lattice_offset: [i64; 2],
    /// Side of the periodic torus `[0, n)^2` for periodized samples.
    pub torus: Option<usize>,
    pub model: GeometryModel,
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    color: usize,
    jitter: [f64; 2],
}

fn zigzag(i: i64) -> u64 {
    ((i << 1) ^ (i >> 63)) as u64
}

fn cell_key(i: i64, j: i64) -> u64 {
    ((zigzag(i) & 0x7fff_ffff) << 32 | (zigzag(j) & 0xffff_ffff)) + 1
}

fn sample_cell(model: &GeometryModel, seed: u64, i: i64, j: i64) -> Cell {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell_key(i, j));
    let color = model.color(rng.random::<f64>());
    let mut jitter = [0.0, 0.0];
    if color > 0 && model.jitter > 0.0 {
        loop {
            let a = 2.0 * rng.random::<f64>() - 1.0;
            let b = 2.0 * rng.random::<f64>() - 1.0;
            if a * a + b * b < 1.0 {
                jitter = [a * model.jitter, b * model.jitter];
                break;
            }
        }
    }
    Cell { color, jitter }
}

fn sample_shift(seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    [rng.random::<f64>(), rng.random::<f64>()]
}

fn collect_disks(model: &GeometryModel, window: &Rect, seed: u64, offset: [i64; 2], shift: [f64; 2]) -> Vec<Disk> {
    let mut disks = Vec::new();
    if model.classes.is_empty() {
        return disks;
    }
    // cell z covers z - shift + [0, 1)^2
    let i0 = (window.x0 + shift[0]).floor() as i64 - 1;
    let i1 = (window.x1 + shift[0]).floor() as i64 + 1;
    let j0 = (window.y0 + shift[1]).floor() as i64 - 1;
    let j1 = (window.y1 + shift[1]).floor() as i64 + 1;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let cell = sample_cell(model, seed, i + offset[0], j + offset[1]);
            if cell.color == 0 {
                continue;
            }
            let radius = model.classes[cell.color - 1].radius;
            let center = [
                i as f64 + 0.5 - shift[0] + cell.jitter[0],
                j as f64 + 0.5 - shift[1] + cell.jitter[1],
            ];
            if clip::point_rect_distance(center, window) <= radius {
                disks.push(Disk { center, radius, class: cell.color });
            }
        }
    }
    disks
}

/// Samples the disks whose closure meets `window`.
pub fn sample_realization(model: &GeometryModel, window: Rect, seed: u64) -> Result<Realization, GeometryError> {
    model.validate()?;
    if !(window.area() > 0.0) {
        return Err(GeometryError::EmptyWindow);
    }
    let shift = sample_shift(seed);
    let disks = collect_disks(model, &window, seed, [0, 0], shift);
    Ok(Realization {
        window,
        disks,
        global_shift: shift,
        seed,
        lattice_offset: [0, 0],
        torus: None,
        model: model.clone(),
    })
}

/// Samples an `n x n` block of cells and wraps it onto the torus `[0, n)^2`.
pub fn sample_periodic(model: &GeometryModel, n: usize, seed: u64) -> Result<Realization, GeometryError> {
    model.validate()?;
    if n == 0 {
        return Err(GeometryError::EmptyWindow);
    }
    let shift = sample_shift(seed);
    let side = n as f64;
    let mut disks = Vec::new();
    if !model.classes.is_empty() {
        for j in 0..n as i64 {
            for i in 0..n as i64 {
                let cell = sample_cell(model, seed, i, j);
                if cell.color == 0 {
                    continue;
                }
                let wrap = |x: f64| {
                    let y = x % side;
                    if y < 0.0 {
                        y + side
                    } else {
                        y
                    }
                };
                let center = [
                    wrap(i as f64 + 0.5 - shift[0] + cell.jitter[0]),
                    wrap(j as f64 + 0.5 - shift[1] + cell.jitter[1]),
                ];
                disks.push(Disk {
                    center,
                    radius: model.classes[cell.color - 1].radius,
                    class: cell.color,
                });
            }
        }
    }
    Ok(Realization {
        window: Rect::square(side),
        disks,
        global_shift: shift,
        seed,
        lattice_offset: [0, 0],
        torus: Some(n),
        model: model.clone(),
    })
}

/// Realization of the translated environment `T_x omega`: disk centers move by
/// `-x`, the window stays fixed.
pub fn shift_realization(real: &Realization, x: [f64; 2]) -> Realization {
    if let Some(n) = real.torus {
        let side = n as f64;
        let wrap = |v: f64| {
            let y = v % side;
            if y < 0.0 {
                y + side
            } else {
                y
            }
        };
        let mut out = real.clone();
        for d in &mut out.disks {
            d.center = [wrap(d.center[0] - x[0]), wrap(d.center[1] - x[1])];
        }
        let s = [real.global_shift[0] + x[0], real.global_shift[1] + x[1]];
        out.global_shift = [s[0] - s[0].floor(), s[1] - s[1].floor()];
        out.lattice_offset = [
            real.lattice_offset[0] + s[0].floor() as i64,
            real.lattice_offset[1] + s[1].floor() as i64,
        ];
        return out;
    }
    let s = [real.global_shift[0] + x[0], real.global_shift[1] + x[1]];
    let whole = [s[0].floor(), s[1].floor()];
    let shift = [s[0] - whole[0], s[1] - whole[1]];
    let offset = [
        real.lattice_offset[0] + whole[0] as i64,
        real.lattice_offset[1] + whole[1] as i64,
    ];
    let disks = collect_disks(&real.model, &real.window, real.seed, offset, shift);
    Realization {
        window: real.window,
        disks,
        global_shift: shift,
        seed: real.seed,
        lattice_offset: offset,
        torus: None,
        model: real.model.clone(),
    }
}

impl Realization {
    /// Minimum-image displacement from `c` to `p` (plain difference off-torus).
    pub fn displacement(&self, c: [f64; 2], p: [f64; 2]) -> [f64; 2] {
        let mut d = [p[0] - c[0], p[1] - c[1]];
        if let Some(n) = self.torus {
            let side = n as f64;
            for v in &mut d {
                *v -= side * (*v / side).round();
            }
        }
        d
    }

    /// Number of disks per class (index `k - 1`).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0usize; self.model.n_classes()];
        for d in &self.disks {
            counts[d.class - 1] += 1;
        }
        counts
    }
}

/// Classifies `x` and returns it with the local radius `r(x)` (class radius in
/// the closed disk, zero outside).
pub fn membership(real: &Realization, x: [f64; 2], tol: f64) -> Result<(Location, f64), GeometryError> {
    if !real.window.contains_closed(x) {
        return Err(GeometryError::OutsideWindow(x[0], x[1]));
    }
    for d in &real.disks {
        let v = real.displacement(d.center, x);
        let dist = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if (dist - d.radius).abs() <= tol {
            return Ok((Location::Boundary(d.class), d.radius));
        }
        if dist < d.radius {
            return Ok((Location::Interior(d.class), d.radius));
        }
    }
    Ok((Location::Exterior, 0.0))
}

/// Disks rescaled into a physical cross-section.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledFascicle {
    pub epsilon: f64,
    pub cross_section: Rect,
    pub axial_length: f64,
    pub disks: Vec<Disk>,
    pub excluded_count: usize,
    pub d0: f64,
}

impl ScaledFascicle {
    /// Total membrane length per unit cross-section area.
    pub fn perimeter_density(&self) -> f64 {
        self.disks.iter().map(|d| 2.0 * PI * d.radius).sum::<f64>() / self.cross_section.area()
    }
}

/// Scales a realization by `epsilon` and drops every disk whose distance to the
/// boundary of `section` is at most `d0 * epsilon`.
pub fn rescale_and_clip(
    real: &Realization,
    epsilon: f64,
    section: Rect,
    axial_length: f64,
    d0: f64,
) -> Result<ScaledFascicle, GeometryError> {
    if !(epsilon > 0.0) {
        return Err(GeometryError::InvalidModel("epsilon must be positive".to_string()));
    }
    let needed = Rect::new(section.x0 / epsilon, section.y0 / epsilon, section.x1 / epsilon, section.y1 / epsilon);
    let slack = 1e-12 * (1.0 + needed.width().abs() + needed.height().abs());
    if !real.window.eroded(-slack).contains_rect(&needed) {
        return Err(GeometryError::WindowTooSmall);
    }
    let mut disks = Vec::new();
    let mut excluded = 0;
    for d in &real.disks {
        let center = [d.center[0] * epsilon, d.center[1] * epsilon];
        let radius = d.radius * epsilon;
        if clip::point_rect_distance(center, &section) > radius {
            continue;
        }
        let inside = section.contains_closed(center) && section.inner_distance(center) - radius > d0 * epsilon;
        if inside {
            disks.push(Disk { center, radius, class: d.class });
        } else {
            excluded += 1;
        }
    }
    Ok(ScaledFascicle {
        epsilon,
        cross_section: section,
        axial_length,
        disks,
        excluded_count: excluded,
        d0,
    })
}

/// Result of checking the geometric hypotheses on one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    /// Smallest boundary-to-boundary gap (infinite with fewer than two disks).
    pub min_gap: f64,
    pub separation_ok: bool,
    pub separation_violations: Vec<(usize, usize)>,
    pub radii_ok: bool,
    pub radius_violations: Vec<usize>,
    pub covering_ok: bool,
    /// Probe points whose `R0`-ball meets no disk (truncated to 64 entries).
    pub covering_violations: Vec<[f64; 2]>,
    /// Covering holds almost surely only for fully occupied lattices.
    pub covering_almost_sure: bool,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.separation_ok && self.radii_ok && self.covering_ok
    }
}

/// Checks separation (gap at least `d0`), radius bounds and the covering
/// property with radius `r0` on a probe grid of spacing `probe`.
pub fn validate_hypotheses(
    real: &Realization,
    d0: f64,
    r_lo: f64,
    r_hi: f64,
    r0: f64,
    probe: f64,
) -> ValidationReport {
    let disks = &real.disks;
    // bucket by unit cell of the center
    let mut buckets: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    let key = |c: [f64; 2]| (c[0].floor() as i64, c[1].floor() as i64);
    for (idx, d) in disks.iter().enumerate() {
        buckets.entry(key(d.center)).or_default().push(idx);
    }
    let mut min_gap = f64::INFINITY;
    let mut separation_violations = Vec::new();
    let reach = (2.0 * real.model.max_radius() + d0).ceil().max(1.0) as i64;
    let wrap = |k: (i64, i64)| match real.torus {
        Some(n) => (k.0.rem_euclid(n as i64), k.1.rem_euclid(n as i64)),
        None => k,
    };
    for (a, da) in disks.iter().enumerate() {
        let (ci, cj) = key(da.center);
        let mut neighbours: BTreeSet<(i64, i64)> = BTreeSet::new();
        for di in -reach..=reach {
            for dj in -reach..=reach {
                neighbours.insert(wrap((ci + di, cj + dj)));
            }
        }
        for cell in neighbours {
            let Some(list) = buckets.get(&cell) else { continue };
            for &b in list {
                if b <= a {
                    continue;
                }
                let db = &disks[b];
                let v = real.displacement(da.center, db.center);
                let gap = (v[0] * v[0] + v[1] * v[1]).sqrt() - da.radius - db.radius;
                min_gap = min_gap.min(gap);
                if gap < d0 - 1e-12 {
                    separation_violations.push((a, b));
                }
            }
        }
    }
    let radius_violations: Vec<usize> = disks
        .iter()
        .enumerate()
        .filter(|(_, d)| d.radius < r_lo || d.radius > r_hi)
        .map(|(i, _)| i)
        .collect();

    let inner = real.window.eroded(r0);
    let mut covering_violations = Vec::new();
    let mut covering_ok = !disks.is_empty();
    if covering_ok && inner.width() >= 0.0 && inner.height() >= 0.0 {
        let nx = (inner.width() / probe).floor() as usize + 1;
        let ny = (inner.height() / probe).floor() as usize + 1;
        'probe: for j in 0..ny {
            for i in 0..nx {
                let p = [inner.x0 + i as f64 * probe, inner.y0 + j as f64 * probe];
                let hit = disks.iter().any(|d| {
                    let v = real.displacement(d.center, p);
                    (v[0] * v[0] + v[1] * v[1]).sqrt() < r0 + d.radius
                });
                if !hit {
                    covering_ok = false;
                    covering_violations.push(p);
                    if covering_violations.len() >= 64 {
                        break 'probe;
                    }
                }
            }
        }
    }
    ValidationReport {
        min_gap,
        separation_ok: separation_violations.is_empty(),
        separation_violations,
        radii_ok: radius_violations.is_empty(),
        radius_violations,
        covering_ok,
        covering_violations,
        covering_almost_sure: real.model.covering_radius().is_some(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure_model() -> GeometryModel {
        GeometryModel::from_pairs(&[0.2, 0.3], &[0.5, 1.0 / 6.0], 0.0).unwrap()
    }

    #[test]
    fn full_lattice_has_one_disk_per_cell() {
        let model = GeometryModel::full_lattice(0.25).unwrap();
        for seed in [0, 1, 99] {
            let real = sample_realization(&model, Rect::square(10.0), seed).unwrap();
            let inside = real
                .disks
                .iter()
                .filter(|d| Rect::square(10.0).contains_closed(d.center))
                .count();
            assert_eq!(inside, 100);
            for d in &real.disks {
                let fx = d.center[0] + real.global_shift[0] - 0.5;
                assert!((fx - fx.round()).abs() < 1e-12);
                assert_eq!(d.radius, 0.25);
            }
        }
    }

    #[test]
    fn figure_model_count_is_binomial() {
        let real = sample_realization(&figure_model(), Rect::square(50.0), 7).unwrap();
        let centers_inside = real
            .disks
            .iter()
            .filter(|d| {
                let c = d.center;
                c[0] >= 0.0 && c[0] < 50.0 && c[1] >= 0.0 && c[1] < 50.0
            })
            .count() as f64;
        let mean = 2500.0 * (2.0 / 3.0);
        let sd = (2500.0 * (2.0 / 3.0) * (1.0 / 3.0)).sqrt();
        assert!((centers_inside - mean).abs() < 4.0 * sd, "{centers_inside}");
    }

    #[test]
    fn packing_bound_rejects_large_jitter() {
        let err = GeometryModel::from_pairs(&[0.4], &[1.0], 0.2).unwrap_err();
        assert!(matches!(err, GeometryError::InvalidModel(_)));
        assert!(GeometryModel::from_pairs(&[0.2, 0.3], &[0.7, 0.4], 0.0).is_err());
    }

    #[test]
    fn deterministic_given_seed_and_window_independent() {
        let model = GeometryModel::from_pairs(&[0.2, 0.3], &[0.5, 1.0 / 6.0], 0.1).unwrap();
        let a = sample_realization(&model, Rect::square(6.0), 3).unwrap();
        let b = sample_realization(&model, Rect::square(6.0), 3).unwrap();
        assert_eq!(a, b);
        let big = sample_realization(&model, Rect::new(-4.0, -4.0, 10.0, 10.0), 3).unwrap();
        for d in &a.disks {
            assert!(big.disks.contains(d));
        }
    }

    #[test]
    fn zero_shift_is_identity() {
        let real = sample_realization(&figure_model(), Rect::square(8.0), 5).unwrap();
        assert_eq!(shift_realization(&real, [0.0, 0.0]), real);
    }

    #[test]
    fn integer_shift_translates_pattern() {
        let real = sample_realization(&figure_model(), Rect::new(-10.0, -10.0, 10.0, 10.0), 11).unwrap();
        let shifted = shift_realization(&real, [3.0, -2.0]);
        assert_eq!(shifted.lattice_offset, [3, -2]);
        for d in &shifted.disks {
            let back = [d.center[0] + 3.0, d.center[1] - 2.0];
            if Rect::new(-9.0, -9.0, 9.0, 9.0).contains_closed(back) {
                assert!(real
                    .disks
                    .iter()
                    .any(|e| (e.center[0] - back[0]).abs() < 1e-12 && (e.center[1] - back[1]).abs() < 1e-12 && e.class == d.class));
            }
        }
    }

    #[test]
    fn membership_classes() {
        let model = GeometryModel::from_pairs(&[0.25], &[1.0], 0.0).unwrap();
        let real = sample_realization(&model, Rect::square(4.0), 2).unwrap();
        let d = real.disks.iter().find(|d| Rect::new(1.0, 1.0, 3.0, 3.0).contains_closed(d.center)).unwrap();
        assert_eq!(membership(&real, d.center, BOUNDARY_TOL).unwrap(), (Location::Interior(1), 0.25));
        let on = [d.center[0] + 0.25, d.center[1]];
        assert_eq!(membership(&real, on, 1e-9).unwrap().0, Location::Boundary(1));
        let empty = GeometryModel::from_pairs(&[0.25], &[0.0], 0.0).unwrap();
        let r = sample_realization(&empty, Rect::square(4.0), 2).unwrap();
        assert_eq!(membership(&r, [1.5, 1.5], BOUNDARY_TOL).unwrap(), (Location::Exterior, 0.0));
        assert!(matches!(membership(&r, [5.0, 1.0], BOUNDARY_TOL), Err(GeometryError::OutsideWindow(..))));
    }

    #[test]
    fn rescale_single_disk() {
        let model = GeometryModel::full_lattice(0.25).unwrap();
        let real = sample_realization(&model, Rect::square(1.0), 4).unwrap();
        let scaled = rescale_and_clip(&real, 0.1, Rect::square(0.1), 1.0, 0.0).unwrap();
        for d in &scaled.disks {
            assert!((d.radius - 0.025).abs() < 1e-15);
        }
        assert!(rescale_and_clip(&real, 0.1, Rect::square(0.2), 1.0, 0.0).is_err());
    }

    #[test]
    fn full_lattice_gap_and_covering() {
        let model = GeometryModel::full_lattice(0.25).unwrap();
        let real = sample_realization(&model, Rect::square(6.0), 8).unwrap();
        let rep = validate_hypotheses(&real, 0.5, 0.1, 0.4, 0.8, 0.05);
        assert!((rep.min_gap - 0.5).abs() < 1e-12);
        assert!(rep.separation_ok && rep.radii_ok && rep.covering_ok);
        assert!(rep.covering_almost_sure);
        let strict = validate_hypotheses(&real, 0.51, 0.1, 0.4, 0.8, 0.05);
        assert!(!strict.separation_ok);
        let tight = validate_hypotheses(&real, 0.5, 0.1, 0.4, 0.4, 0.01);
        assert!(!tight.covering_ok, "R0 = 0.4 < sqrt(2)/2 - 1/4");
    }

    #[test]
    fn no_disks_fails_covering() {
        let model = GeometryModel::empty();
        let real = sample_realization(&model, Rect::square(6.0), 8).unwrap();
        for r0 in [0.5, 2.0, 100.0] {
            assert!(!validate_hypotheses(&real, 0.1, 0.1, 0.4, r0, 0.1).covering_ok);
        }
    }
}
