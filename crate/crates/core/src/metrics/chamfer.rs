//! Mean-normalized symmetric squared Chamfer distance.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

fn check(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(())
}

/// O(mn) reference: `mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2`.
pub fn chamfer_brute_force(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check(a, b)?;
    let side = |from: &[Vector3<f64>], to: &[Vector3<f64>]| {
        let sum: f64 = from
            .iter()
            .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
            .sum();
        sum / from.len() as f64
    };
    Ok(side(a.points(), b.points()) + side(b.points(), a.points()))
}

/// Uniform bucket grid for nearest-neighbour queries.
struct Grid<'a> {
    points: &'a [Vector3<f64>],
    lo: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    /// Point indices sorted by cell; `starts[c]..starts[c + 1]` is cell `c`.
    order: Vec<usize>,
    starts: Vec<usize>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        // About two points per cell over the bounding box.
        let volume = ext.x.max(1e-9) * ext.y.max(1e-9) * ext.z.max(1e-9);
        let mut cell = (2.0 * volume / points.len() as f64).cbrt();
        let longest = ext.max();
        if !(cell > 0.0) || !cell.is_finite() {
            cell = 1.0;
        }
        if longest > 0.0 {
            cell = cell.max(longest / 64.0);
        }
        let dims = [0, 1, 2].map(|a| ((ext[a] / cell).floor() as usize + 1).min(64));
        let mut grid = Self { points, lo, cell, dims, order: Vec::new(), starts: Vec::new() };
        let ncell = dims[0] * dims[1] * dims[2];
        let keys: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
        let mut starts = vec![0usize; ncell + 1];
        for &k in &keys {
            starts[k + 1] += 1;
        }
        for c in 0..ncell {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let mut order = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k]] = i;
            fill[k] += 1;
        }
        grid.order = order;
        grid.starts = starts;
        grid
    }

    fn cell_of(&self, p: &Vector3<f64>) -> [isize; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.lo[a]) / self.cell).floor() as isize)
    }

    fn flat(&self, c: [isize; 3]) -> usize {
        let [x, y, z] = [0, 1, 2].map(|a| c[a].clamp(0, self.dims[a] as isize - 1) as usize);
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    /// Exact squared distance to the nearest point. Cells are visited in
    /// growing Chebyshev rings until no unvisited cell can be closer.
    fn nearest_sq(&self, p: &Vector3<f64>) -> f64 {
        let raw = self.cell_of(p);
        let c = [0, 1, 2].map(|a| raw[a].clamp(0, self.dims[a] as isize - 1));
        // Squared distance from p to the grid box.
        let outside_sq: f64 = (0..3)
            .map(|a| {
                let lo = self.lo[a];
                let hi = lo + self.dims[a] as f64 * self.cell;
                let d = (lo - p[a]).max(p[a] - hi).max(0.0);
                d * d
            })
            .sum();
        let max_ring = *self.dims.iter().max().expect("three axes") as isize;
        let mut best = f64::INFINITY;
        for r in 0..=max_ring {
            for z in c[2] - r..=c[2] + r {
                for y in c[1] - r..=c[1] + r {
                    for x in c[0] - r..=c[0] + r {
                        let on_shell = (z - c[2]).abs() == r || (y - c[1]).abs() == r || (x - c[0]).abs() == r;
                        let inside = x >= 0
                            && y >= 0
                            && z >= 0
                            && (x as usize) < self.dims[0]
                            && (y as usize) < self.dims[1]
                            && (z as usize) < self.dims[2];
                        if !on_shell || !inside {
                            continue;
                        }
                        let k = self.flat([x, y, z]);
                        for &i in &self.order[self.starts[k]..self.starts[k + 1]] {
                            best = best.min((p - self.points[i]).norm_squared());
                        }
                    }
                }
            }
            // An unvisited cell is more than r cells from p's cell along some
            // axis, on top of p's offset from the box on every axis.
            let ring = r as f64 * self.cell;
            if best < (outside_sq + ring * ring) * (1.0 - 1e-9) {
                break;
            }
        }
        best
    }
}

/// [`chamfer_brute_force`] with grid-accelerated nearest neighbours; the
/// result is bitwise identical because every per-point minimum is exact
/// and the sums run in the same order.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check(a, b)?;
    let side = |from: &[Vector3<f64>], to: &[Vector3<f64>]| {
        let grid = Grid::new(to);
        let sum: f64 = from.iter().map(|p| grid.nearest_sq(p)).sum();
        sum / from.len() as f64
    };
    Ok(side(a.points(), b.points()) + side(b.points(), a.points()))
}
