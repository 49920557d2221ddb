//! Uniform hash-grid neighbor search with cell size equal to the query radius.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::state::Vec3;

type CellKey = [i64; 3];

#[derive(Clone, Debug)]
pub struct NeighborGrid {
    cell: f64,
    cells: HashMap<CellKey, Vec<usize>>,
}

impl NeighborGrid {
    pub fn build(points: &[Vec3], cell: f64) -> Self {
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    /// Calls `f(j, r2)` for every point within `radius` of `q` (strictly closer).
    /// `radius` must not exceed the cell size.
    pub fn for_each_within(
        &self,
        points: &[Vec3],
        q: &Vec3,
        radius: f64,
        mut f: impl FnMut(usize, f64),
    ) {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        let r2max = radius * radius;
        let c = key(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &j in bucket {
                            let r2 = (points[j] - q).norm_squared();
                            if r2 < r2max {
                                f(j, r2);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Sorted indices of points within `radius` of `q`.
    pub fn within(&self, points: &[Vec3], q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(points, q, radius, |j, _| out.push(j));
        out.sort_unstable();
        out
    }
}

#[inline]
fn key(p: &Vec3, cell: f64) -> CellKey {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}

/// Per-particle sorted lists of other particles strictly closer than `h`.
/// The relation is symmetric.
pub fn neighbor_lists(points: &[Vec3], h: f64) -> Vec<Vec<usize>> {
    let grid = NeighborGrid::build(points, h);
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut list = grid.within(points, &points[i], h);
            list.retain(|&j| j != i);
            list
        })
        .collect()
}
