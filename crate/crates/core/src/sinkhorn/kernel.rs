//! Log-sum-exp kernel applications `out_i = log Σ_j exp(h_j − C_ij/ε)`.
//!
//! On grids the squared Euclidean cost separates into an x part and a y part, so the
//! two-dimensional reduction is two one-dimensional reductions along the axes. Each
//! one-dimensional reduction first finds the row maximum and then sums only the terms within
//! [`CUTOFF`] nats of it; the skipped terms are below `e^{-CUTOFF}` relative to the largest one and
//! cannot change the result at double precision.

use crate::measures::Grid2;

/// Terms more than this many nats below the row maximum are skipped.
pub const CUTOFF: f64 = 50.0;

/// A log-domain kernel for one transport problem at a fixed `ε`.
pub trait LogKernel: Sync {
    fn eps(&self) -> f64;
    fn n_source(&self) -> usize;
    fn n_target(&self) -> usize;
    /// `out_i = log Σ_j exp(h_j − C_ij/ε)` for every source point `i`.
    fn lse_over_target(&self, h: &[f64], out: &mut [f64]);
    /// `out_j = log Σ_i exp(h_i − C_ij/ε)` for every target point `j`.
    fn lse_over_source(&self, h: &[f64], out: &mut [f64]);
}

/// Ground cost that can produce a [`LogKernel`] for any `ε`.
pub trait Geometry: Sync {
    type Kernel: LogKernel;
    fn kernel(&self, eps: f64) -> Self::Kernel;
    /// Squared diameter of the joint support, the starting scale for ε annealing.
    fn diameter2(&self) -> f64;
    /// Row-major cost matrix when the problem is small enough to be held densely.
    fn dense_cost(&self) -> Option<&[f64]> {
        None
    }
}

/// One-dimensional reduction with a symmetric `n × n` table of `C/ε`.
#[inline]
fn lse_1d(table: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..n {
        let row = &table[r * n..(r + 1) * n];
        let mut m = f64::NEG_INFINITY;
        for c in 0..n {
            let a = v[c] - row[c];
            if a > m {
                m = a;
            }
        }
        if m == f64::NEG_INFINITY {
            out[r] = m;
            continue;
        }
        let floor = m - CUTOFF;
        let mut s = 0.0;
        for c in 0..n {
            let a = v[c] - row[c];
            if a > floor {
                s += (a - m).exp();
            }
        }
        out[r] = m + s.ln();
    }
}

/// Separable kernel for the squared Euclidean cost between the cell centers of a grid.
#[derive(Debug, Clone)]
pub struct GridKernel {
    grid: Grid2,
    eps: f64,
    cx: Vec<f64>,
    cy: Vec<f64>,
}

impl GridKernel {
    pub fn new(grid: Grid2, eps: f64) -> Self {
        let table = |n: usize, coord: &dyn Fn(usize) -> f64| {
            let mut t = vec![0.0; n * n];
            for r in 0..n {
                for c in 0..n {
                    let d = coord(r) - coord(c);
                    t[r * n + c] = d * d / eps;
                }
            }
            t
        };
        let cx = table(grid.width(), &|i| grid.x(i));
        let cy = table(grid.height(), &|j| grid.y(j));
        Self { grid, eps, cx, cy }
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    /// Two-dimensional reduction: along x inside every row, then along y inside every column.
    pub fn lse(&self, h: &[f64], out: &mut [f64]) {
        let (w, ht) = (self.grid.width(), self.grid.height());
        debug_assert_eq!(h.len(), w * ht);
        // Stage one writes the x-reduced rows transposed, so columns become contiguous.
        let mut row_out = vec![0.0; w];
        let mut transposed = vec![0.0; w * ht];
        for j in 0..ht {
            lse_1d(&self.cx, w, &h[j * w..(j + 1) * w], &mut row_out);
            for i in 0..w {
                transposed[i * ht + j] = row_out[i];
            }
        }
        let mut col_out = vec![0.0; ht];
        for i in 0..w {
            lse_1d(&self.cy, ht, &transposed[i * ht..(i + 1) * ht], &mut col_out);
            for j in 0..ht {
                out[j * w + i] = col_out[j];
            }
        }
    }
}

impl LogKernel for GridKernel {
    fn eps(&self) -> f64 {
        self.eps
    }

    fn n_source(&self) -> usize {
        self.grid.len()
    }

    fn n_target(&self) -> usize {
        self.grid.len()
    }

    fn lse_over_target(&self, h: &[f64], out: &mut [f64]) {
        self.lse(h, out)
    }

    fn lse_over_source(&self, h: &[f64], out: &mut [f64]) {
        self.lse(h, out)
    }
}

impl Geometry for Grid2 {
    type Kernel = GridKernel;

    fn kernel(&self, eps: f64) -> GridKernel {
        GridKernel::new(*self, eps)
    }

    fn diameter2(&self) -> f64 {
        Grid2::diameter2(self)
    }
}

/// Dense cost matrix between two point sets.
#[derive(Debug, Clone)]
pub struct DenseGeometry {
    n: usize,
    m: usize,
    cost: Vec<f64>,
    diam2: f64,
}

impl DenseGeometry {
    /// `cost` is row-major `n × m`.
    pub fn new(n: usize, m: usize, cost: Vec<f64>, diam2: f64) -> Self {
        assert_eq!(cost.len(), n * m);
        Self { n, m, cost, diam2 }
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }
}

/// Dense kernel holding `C/ε`.
#[derive(Debug, Clone)]
pub struct DenseKernel {
    n: usize,
    m: usize,
    eps: f64,
    scaled: Vec<f64>,
}

impl LogKernel for DenseKernel {
    fn eps(&self) -> f64 {
        self.eps
    }

    fn n_source(&self) -> usize {
        self.n
    }

    fn n_target(&self) -> usize {
        self.m
    }

    fn lse_over_target(&self, h: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.scaled[i * self.m..(i + 1) * self.m];
            let mx = h
                .iter()
                .zip(row)
                .map(|(a, c)| a - c)
                .fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = h.iter().zip(row).map(|(a, c)| (a - c - mx).exp()).sum();
            out[i] = mx + s.ln();
        }
    }

    fn lse_over_source(&self, h: &[f64], out: &mut [f64]) {
        for j in 0..self.m {
            let col = (0..self.n).map(|i| h[i] - self.scaled[i * self.m + j]);
            let mx = col.clone().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = col.map(|a| (a - mx).exp()).sum();
            out[j] = mx + s.ln();
        }
    }
}

impl Geometry for DenseGeometry {
    type Kernel = DenseKernel;

    fn kernel(&self, eps: f64) -> DenseKernel {
        DenseKernel {
            n: self.n,
            m: self.m,
            eps,
            scaled: self.cost.iter().map(|c| c / eps).collect(),
        }
    }

    fn diameter2(&self) -> f64 {
        self.diam2
    }

    fn dense_cost(&self) -> Option<&[f64]> {
        Some(&self.cost)
    }
}

/// Applies the Gibbs kernel `Σ_j exp(−|x_i − x_j|²/ε) v_j` on a grid, separably along each axis.
///
/// This is the scaling-domain counterpart of [`GridKernel`], provided for inspection and tests.
/// The solvers themselves stay in the log domain.
pub fn apply_gibbs_kernel(grid: &Grid2, values: &[f64], eps: f64) -> Vec<f64> {
    let (w, h) = (grid.width(), grid.height());
    assert_eq!(values.len(), w * h);
    let kx: Vec<f64> = (0..w * w)
        .map(|k| (-(grid.x(k / w) - grid.x(k % w)).powi(2) / eps).exp())
        .collect();
    let ky: Vec<f64> = (0..h * h)
        .map(|k| (-(grid.y(k / h) - grid.y(k % h)).powi(2) / eps).exp())
        .collect();
    let mut tmp = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            tmp[j * w + i] = (0..w).map(|c| kx[i * w + c] * values[j * w + c]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            out[j * w + i] = (0..h).map(|r| ky[j * h + r] * tmp[r * w + i]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_gibbs(grid: &Grid2, v: &[f64], eps: f64) -> Vec<f64> {
        (0..grid.len())
            .map(|a| {
                let ca = grid.center(a);
                (0..grid.len())
                    .map(|b| {
                        let cb = grid.center(b);
                        let d2 = (ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2);
                        (-d2 / eps).exp() * v[b]
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn gibbs_matches_dense_product() {
        let grid = Grid2::new(8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        for eps in [0.5, 0.05, 0.01] {
            let a = apply_gibbs_kernel(&grid, &v, eps);
            let b = dense_gibbs(&grid, &v, eps);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gibbs_of_delta_is_kernel_column() {
        let grid = Grid2::new(5, 4).unwrap();
        let mut v = vec![0.0; 20];
        let idx = grid.index(2, 1);
        v[idx] = 1.0;
        let out = apply_gibbs_kernel(&grid, &v, 0.1);
        for (a, o) in out.iter().enumerate() {
            let (ca, cb) = (grid.center(a), grid.center(idx));
            let d2 = (ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2);
            assert!((o - (-d2 / 0.1).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn gibbs_preserves_symmetry() {
        let grid = Grid2::new(7, 7).unwrap();
        let v: Vec<f64> = (0..49)
            .map(|k| {
                let (i, j) = ((k % 7) as f64 - 3.0, (k / 7) as f64 - 3.0);
                1.0 + i * i + 0.5 * j * j
            })
            .collect();
        let out = apply_gibbs_kernel(&grid, &v, 0.05);
        for j in 0..7 {
            for i in 0..7 {
                let a = out[grid.index(i, j)];
                let b = out[grid.index(6 - i, j)];
                assert!((a - b).abs() <= 1e-13 * a);
            }
        }
    }

    #[test]
    fn log_kernel_matches_dense_log_sum_exp() {
        let grid = Grid2::new(9, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for eps in [1.0, 1e-2, 1e-4] {
            let h: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let mut out = vec![0.0; grid.len()];
            GridKernel::new(grid, eps).lse(&h, &mut out);
            for a in 0..grid.len() {
                let ca = grid.center(a);
                let terms: Vec<f64> = (0..grid.len())
                    .map(|b| {
                        let cb = grid.center(b);
                        h[b] - ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2)) / eps
                    })
                    .collect();
                let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let dense = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
                assert!((out[a] - dense).abs() <= 1e-12 * dense.abs().max(1.0));
            }
        }
    }
}
