//! Uniform-grid nearest-neighbor queries and symmetric chamfer residuals.

use nalgebra::Vector3;
use std::collections::HashMap;

/// Hash-grid spatial index over a fixed point set.
pub struct NnGrid {
    cell: f64,
    points: Vec<Vector3<f64>>,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl NnGrid {
    pub fn new(points: &[Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0 && !points.is_empty());
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self { cell, points: points.to_vec(), cells }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Index and distance of the nearest indexed point to `q`, searched in
    /// expanding cell rings.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let (kx, ky, kz) = Self::key(q, self.cell);
        let mut best = (0usize, f64::INFINITY);
        let mut ring = 0i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        // Only the surface of the ring is new.
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                            for &i in ids {
                                let d = (self.points[i as usize] - q).norm();
                                if d < best.1 {
                                    best = (i as usize, d);
                                }
                            }
                        }
                    }
                }
            }
            // Every unvisited cell (ring >= R+1) is at least R*cell away, so
            // once the best hit is within that bound it is exact.
            if best.1 <= (ring as f64) * self.cell {
                return best;
            }
            ring += 1;
        }
    }

    pub fn nearest_distance(&self, q: &Vector3<f64>) -> f64 {
        self.nearest(q).1
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        self.points[i]
    }
}

/// Mean distance from each transformed point to its nearest original point.
pub fn chamfer_to(grid: &NnGrid, transformed: &[Vector3<f64>]) -> f64 {
    let n = transformed.len().max(1) as f64;
    transformed.iter().map(|q| grid.nearest_distance(q)).sum::<f64>() / n
}
