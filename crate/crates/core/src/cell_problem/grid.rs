//! Rasterization of a periodic realization onto a uniform node grid.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::geometry::Realization;

use super::CellError;

/// Marker for nodes that carry no unknown.
pub const INACTIVE: u32 = u32::MAX;

/// Uniform `n x n` grid of square cells on the torus `[0, side)^2`.
///
/// A cell is interior when its center lies inside a disk. Nodes touching at
/// least one exterior cell are active unknowns; the rest are fixed at zero.
#[derive(Clone, Debug)]
pub struct CellGrid {
    pub side: usize,
    pub n: usize,
    pub h: f64,
    /// Per cell, row-major `j * n + i`.
    pub interior: Vec<bool>,
    /// Active index of every node, or [`INACTIVE`].
    pub node_to_active: Vec<u32>,
    /// Node index of every active unknown.
    pub active_nodes: Vec<u32>,
    /// Exterior cells with the active indices of their corners `(i, j)`,
    /// `(i + 1, j)`, `(i, j + 1)`, `(i + 1, j + 1)`.
    pub exterior_cells: Vec<[u32; 4]>,
}

impl CellGrid {
    pub fn new(real: &Realization, cells_per_unit: usize) -> Result<Self, CellError> {
        let side = real.torus.ok_or(CellError::NotPeriodic)?;
        if cells_per_unit == 0 {
            return Err(CellError::InvalidGrid);
        }
        let n = side * cells_per_unit;
        let h = 1.0 / cells_per_unit as f64;
        let mut interior = vec![false; n * n];
        for d in &real.disks {
            let reach = (d.radius / h).ceil() as i64 + 1;
            let ci = (d.center[0] / h).floor() as i64;
            let cj = (d.center[1] / h).floor() as i64;
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    let i = (ci + di).rem_euclid(n as i64) as usize;
                    let j = (cj + dj).rem_euclid(n as i64) as usize;
                    let c = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                    let v = real.displacement(d.center, c);
                    if v[0] * v[0] + v[1] * v[1] < d.radius * d.radius {
                        interior[j * n + i] = true;
                    }
                }
            }
        }
        Self::from_mask(side, n, h, interior)
    }

    pub fn from_mask(side: usize, n: usize, h: f64, interior: Vec<bool>) -> Result<Self, CellError> {
        let node = |i: usize, j: usize| (j % n) * n + (i % n);
        let mut touched = vec![false; n * n];
        for j in 0..n {
            for i in 0..n {
                if !interior[j * n + i] {
                    for (a, b) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                        touched[node(a, b)] = true;
                    }
                }
            }
        }
        let mut node_to_active = vec![INACTIVE; n * n];
        let mut active_nodes = Vec::new();
        for k in 0..n * n {
            if touched[k] {
                node_to_active[k] = active_nodes.len() as u32;
                active_nodes.push(k as u32);
            }
        }
        let mut exterior_cells = Vec::new();
        for j in 0..n {
            for i in 0..n {
                if !interior[j * n + i] {
                    exterior_cells.push([
                        node_to_active[node(i, j)],
                        node_to_active[node(i + 1, j)],
                        node_to_active[node(i, j + 1)],
                        node_to_active[node(i + 1, j + 1)],
                    ]);
                }
            }
        }
        let grid = Self { side, n, h, interior, node_to_active, active_nodes, exterior_cells };
        if !grid.exterior_connected() {
            return Err(CellError::MaskDegenerate);
        }
        Ok(grid)
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }

    pub fn n_active(&self) -> usize {
        self.active_nodes.len()
    }

    /// Fraction of interior cells.
    pub fn interior_fraction(&self) -> f64 {
        (self.n_cells() - self.exterior_cells.len()) as f64 / self.n_cells() as f64
    }

    fn exterior_connected(&self) -> bool {
        let n = self.n;
        let Some(start) = self.interior.iter().position(|&b| !b) else {
            return false;
        };
        let mut seen = vec![false; n * n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(k) = queue.pop_front() {
            let (i, j) = (k % n, k / n);
            for (a, b) in [(i + 1, j), (i + n - 1, j), (i, j + 1), (i, j + n - 1)] {
                let m = (b % n) * n + (a % n);
                if !self.interior[m] && !seen[m] {
                    seen[m] = true;
                    count += 1;
                    queue.push_back(m);
                }
            }
        }
        count == self.exterior_cells.len()
    }

    /// Scatters active values onto the full node grid (inactive nodes zero).
    pub fn to_full(&self, active: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n * self.n];
        for (a, &k) in self.active_nodes.iter().enumerate() {
            full[k as usize] = active[a];
        }
        full
    }

    pub fn to_active(&self, full: &[f64]) -> Vec<f64> {
        self.active_nodes.iter().map(|&k| full[k as usize]).collect()
    }
}
