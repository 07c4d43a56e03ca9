//! Grid geometry, discrete measures on grid cells, point clouds and Gaussian parameters.
//!
//! A [`Grid2`] with width `M` and height `N` tiles the unit square with `M·N` cells of size
//! `1/M × 1/N`. Every cell carries one atom at its center `((i+½)/M, (j+½)/N)`. Weight vectors
//! are stored row-major with the y index as the row: cell `(i, j)` lives at `j·M + i`.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// Tolerance on the total mass of every constructed measure.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Offsets from unit mass above this are renormalized with a warning flag.
pub const RENORMALIZE_WARNING: f64 = 1e-6;

/// Uniform cell-centered grid on `[0,1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Grid2 {
    width: usize,
    height: usize,
}

impl Grid2 {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(invalid(format!(
                "grid must be at least 3x3, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of cells `M·N`.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    /// x coordinate of the centers in column `i`.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.width as f64
    }

    /// y coordinate of the centers in row `j`.
    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.height as f64
    }

    pub fn center(&self, idx: usize) -> [f64; 2] {
        [self.x(idx % self.width), self.y(idx / self.width)]
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (1.0 / self.width as f64, 1.0 / self.height as f64)
    }

    /// Squared distance between the two most distant cell centers.
    pub fn diameter2(&self) -> f64 {
        let dx = self.x(self.width - 1) - self.x(0);
        let dy = self.y(self.height - 1) - self.y(0);
        dx * dx + dy * dy
    }

    /// Signed offset `x_i - m` computed so that mirrored cells give exactly negated offsets
    /// when `m = 0.5`.
    #[inline]
    fn x_offset(&self, i: usize, m: f64) -> f64 {
        ((i as f64 + 0.5) - self.width as f64 * m) / self.width as f64
    }

    #[inline]
    fn y_offset(&self, j: usize, m: f64) -> f64 {
        ((j as f64 + 0.5) - self.height as f64 * m) / self.height as f64
    }
}

/// Probability weights on the cells of a [`Grid2`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    grid: Grid2,
    weights: Vec<f64>,
    renormalized: bool,
}

impl DiscreteMeasure {
    /// Builds a measure from weights that should already sum to one.
    ///
    /// Weights are always divided by their sum. When the input mass is off by more than
    /// [`RENORMALIZE_WARNING`] the `renormalized` flag is set.
    pub fn from_weights(grid: Grid2, weights: Vec<f64>) -> Result<Self> {
        let sum = check_nonnegative(&grid, &weights)?;
        let renormalized = (sum - 1.0).abs() > RENORMALIZE_WARNING;
        Ok(Self::normalized(grid, weights, sum, renormalized))
    }

    /// Uniform measure on every cell.
    pub fn uniform(grid: Grid2) -> Self {
        let n = grid.len();
        Self::normalized(grid, vec![1.0; n], n as f64, false)
    }

    /// All mass on the single cell `idx`.
    pub fn dirac(grid: Grid2, idx: usize) -> Result<Self> {
        if idx >= grid.len() {
            return Err(invalid(format!("cell index {idx} outside grid")));
        }
        let mut w = vec![0.0; grid.len()];
        w[idx] = 1.0;
        Ok(Self {
            grid,
            weights: w,
            renormalized: false,
        })
    }

    fn normalized(grid: Grid2, mut weights: Vec<f64>, sum: f64, renormalized: bool) -> Self {
        let inv = 1.0 / sum;
        weights.iter_mut().for_each(|w| *w *= inv);
        let total: f64 = weights.iter().sum();
        debug_assert!(
            (total - 1.0).abs() <= MASS_TOLERANCE,
            "normalized mass {total}"
        );
        Self {
            grid,
            weights,
            renormalized,
        }
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Whether construction had to fix a mass offset larger than [`RENORMALIZE_WARNING`].
    pub fn renormalized(&self) -> bool {
        self.renormalized
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Total-variation distance `½Σ|a−b|`.
    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

fn check_nonnegative(grid: &Grid2, weights: &[f64]) -> Result<f64> {
    if weights.len() != grid.len() {
        return Err(invalid(format!(
            "expected {} weights for a {}x{} grid, got {}",
            grid.len(),
            grid.width(),
            grid.height(),
            weights.len()
        )));
    }
    let mut sum = 0.0;
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() {
            return Err(invalid(format!("non-finite weight at index {index}")));
        }
        if value < 0.0 {
            return Err(Error::NegativeMass { index, value });
        }
        sum += value;
    }
    if sum <= 0.0 {
        return Err(Error::AllZero);
    }
    Ok(sum)
}

/// Normalizes a raw nonnegative density sampled on the grid cells.
pub fn measure_from_density_grid(grid: Grid2, raw: &[f64]) -> Result<DiscreteMeasure> {
    let sum = check_nonnegative(&grid, raw)?;
    Ok(DiscreteMeasure::normalized(grid, raw.to_vec(), sum, false))
}

/// Samples the density of a two-dimensional Gaussian at the cell centers and normalizes.
///
/// The log-density is shifted by its maximum before exponentiation, so even extremely
/// concentrated Gaussians keep their mass on the nearest cell.
pub fn rasterize_gaussian(g: &Gaussian, grid: Grid2) -> Result<DiscreteMeasure> {
    if g.dim() != 2 {
        return Err(invalid(format!(
            "rasterization needs a 2D Gaussian, got d = {}",
            g.dim()
        )));
    }
    let cov = g.covariance();
    let precision = cov
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotSpd("covariance is singular".into()))?;
    let (p00, p01, p11) = (precision[(0, 0)], precision[(0, 1)], precision[(1, 1)]);
    let (mx, my) = (g.mean()[0], g.mean()[1]);
    let mut logd = Vec::with_capacity(grid.len());
    for j in 0..grid.height() {
        let dy = grid.y_offset(j, my);
        for i in 0..grid.width() {
            let dx = grid.x_offset(i, mx);
            logd.push(-0.5 * (p00 * dx * dx + 2.0 * p01 * dx * dy + p11 * dy * dy));
        }
    }
    let max = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateRaster);
    }
    let dens: Vec<f64> = logd.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = dens.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateRaster);
    }
    Ok(DiscreteMeasure::normalized(grid, dens, sum, false))
}

/// Mean and covariance of a grid measure over the cell centers.
pub fn moments(mu: &DiscreteMeasure) -> (Vector2<f64>, Matrix2<f64>) {
    let grid = mu.grid();
    let mut mean = Vector2::zeros();
    for (idx, &w) in mu.weights().iter().enumerate() {
        let c = grid.center(idx);
        mean += w * Vector2::new(c[0], c[1]);
    }
    let mut cov = Matrix2::zeros();
    for (idx, &w) in mu.weights().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let c = grid.center(idx);
        let d = Vector2::new(c[0], c[1]) - mean;
        cov += w * d * d.transpose();
    }
    (mean, cov)
}

/// Equal-weight atoms in ℝ^d (d = 1 or 2), stored as a flat coordinate array.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid(format!("point clouds need d = 1 or 2, got {dim}")));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(invalid(format!(
                "coordinate array of length {} does not hold whole {dim}-dimensional points",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite point coordinate"));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(invalid("points have mixed dimensions"));
        }
        Self::new(dim, points.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, m: usize) -> &[f64] {
        &self.coords[m * self.dim..(m + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    /// Uniform-weight view for the generic transport solvers.
    pub fn to_weighted(&self) -> WeightedPoints {
        let n = self.len();
        WeightedPoints {
            dim: self.dim,
            coords: self.coords.clone(),
            weights: vec![1.0 / n as f64; n],
        }
    }
}

/// Atoms in ℝ^d with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedPoints {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedPoints {
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() != dim * weights.len() || weights.is_empty() {
            return Err(invalid(format!(
                "{} coordinates do not match {} weights in dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite point coordinate"));
        }
        let mut sum = 0.0;
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(invalid(format!("non-finite weight at index {index}")));
            }
            if value < 0.0 {
                return Err(Error::NegativeMass { index, value });
            }
            sum += value;
        }
        if sum <= 0.0 {
            return Err(Error::AllZero);
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self {
            dim,
            coords,
            weights,
        })
    }

    /// One-dimensional atoms.
    pub fn line(points: &[f64], weights: &[f64]) -> Result<Self> {
        Self::new(1, points.to_vec(), weights.to_vec())
    }

    /// One-dimensional atoms with equal weights.
    pub fn line_uniform(points: &[f64]) -> Result<Self> {
        let n = points.len();
        Self::new(1, points.to_vec(), vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Squared Euclidean distance between atom `i` of `self` and atom `j` of `other`.
    pub fn dist2(&self, i: usize, other: &Self, j: usize) -> f64 {
        sq_dist(self.point(i), other.point(j))
    }

    /// Squared diameter of the union of both supports.
    pub fn joint_diameter2(&self, other: &Self) -> f64 {
        let all: Vec<&[f64]> = (0..self.len())
            .map(|i| self.point(i))
            .chain((0..other.len()).map(|j| other.point(j)))
            .collect();
        let mut d = 0.0f64;
        for a in &all {
            for b in &all {
                d = d.max(sq_dist(a, b));
            }
        }
        d
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian `𝒩(m, σ²)` parametrised by its mean and symmetric positive-definite standard
/// deviation matrix `σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    std: DMatrix<f64>,
}

impl Gaussian {
    /// Validates symmetry and positive definiteness. Full matrices are supported for d ≤ 2,
    /// larger dimensions must be diagonal.
    pub fn new(mean: DVector<f64>, std: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || std.nrows() != d || std.ncols() != d {
            return Err(invalid(format!(
                "mean of length {d} does not match a {}x{} std matrix",
                std.nrows(),
                std.ncols()
            )));
        }
        if mean.iter().chain(std.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite Gaussian parameter"));
        }
        let scale = std.amax().max(1.0);
        for r in 0..d {
            for c in 0..r {
                if (std[(r, c)] - std[(c, r)]).abs() > 1e-12 * scale {
                    return Err(Error::NotSpd("std matrix is not symmetric".into()));
                }
            }
        }
        let diagonal = is_diagonal(&std);
        if d > 2 && !diagonal {
            return Err(invalid(
                "full std matrices are supported only for d <= 2; use a diagonal matrix",
            ));
        }
        let min_eig = if diagonal {
            std.diagonal().min()
        } else {
            SymmetricEigen::new(std.clone()).eigenvalues.min()
        };
        if !(min_eig > 0.0) {
            return Err(Error::NotSpd(format!("smallest eigenvalue {min_eig}")));
        }
        // Symmetrize exactly so downstream formulas see σ = σᵀ bit for bit.
        let std = (&std + std.transpose()) * 0.5;
        Ok(Self { mean, std })
    }

    /// Diagonal Gaussian from a mean and per-axis standard deviations.
    pub fn diagonal(mean: &[f64], stds: &[f64]) -> Result<Self> {
        if mean.len() != stds.len() {
            return Err(invalid("mean and std lengths differ"));
        }
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(stds)),
        )
    }

    /// One-dimensional Gaussian with mean `m` and standard deviation `s`.
    pub fn scalar(m: f64, s: f64) -> Result<Self> {
        Self::diagonal(&[m], &[s])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn std(&self) -> &DMatrix<f64> {
        &self.std
    }

    /// Covariance `σ²`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.std * &self.std
    }

    pub fn is_diagonal(&self) -> bool {
        is_diagonal(&self.std)
    }

    /// Diagonal of `σ`; equals the eigenvalues when `σ` is diagonal.
    pub fn diag_std(&self) -> Vec<f64> {
        self.std.diagonal().iter().copied().collect()
    }
}

pub(crate) fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|r| (0..m.ncols()).all(|c| r == c || m[(r, c)] == 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: usize, n: usize) -> Grid2 {
        Grid2::new(m, n).unwrap()
    }

    #[test]
    fn grid_rejects_small_sizes() {
        assert!(Grid2::new(2, 5).is_err());
        assert!(Grid2::new(3, 3).is_ok());
    }

    #[test]
    fn centers_strictly_inside() {
        let g = grid(3, 4);
        for idx in 0..g.len() {
            let c = g.center(idx);
            assert!(c[0] > 0.0 && c[0] < 1.0 && c[1] > 0.0 && c[1] < 1.0);
        }
    }

    #[test]
    fn uniform_raw_density_gives_uniform_weights() {
        let g = grid(4, 3);
        let mu = measure_from_density_grid(g, &[1.0; 12]).unwrap();
        assert!(mu.weights().iter().all(|&w| (w - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn two_cell_density_normalizes_to_halves() {
        let g = grid(3, 3);
        let mut raw = vec![0.0; 9];
        raw[0] = 2.0;
        raw[8] = 2.0;
        let mu = measure_from_density_grid(g, &raw).unwrap();
        assert_eq!(mu.weights()[0], 0.5);
        assert_eq!(mu.weights()[8], 0.5);
        assert_eq!(mu.weights().iter().filter(|&&w| w == 0.0).count(), 7);
    }

    #[test]
    fn density_errors() {
        let g = grid(3, 3);
        assert!(matches!(
            measure_from_density_grid(g, &[0.0; 9]),
            Err(Error::AllZero)
        ));
        let mut raw = vec![1.0; 9];
        raw[4] = -0.1;
        assert!(matches!(
            measure_from_density_grid(g, &raw),
            Err(Error::NegativeMass { index: 4, .. })
        ));
    }

    #[test]
    fn sampled_density_mean_within_one_cell() {
        let g = grid(64, 64);
        let raw: Vec<f64> = (0..g.len())
            .map(|idx| {
                let c = g.center(idx);
                let r2 = (c[0] - 0.5).powi(2) + (c[1] - 0.5).powi(2);
                (-r2 / (2.0 * 0.01)).exp()
            })
            .collect();
        let mu = measure_from_density_grid(g, &raw).unwrap();
        // Quadrature oracle: direct sum of x·ω.
        let mut mx = 0.0;
        let mut my = 0.0;
        for (idx, w) in mu.weights().iter().enumerate() {
            let c = g.center(idx);
            mx += c[0] * w;
            my += c[1] * w;
        }
        assert!((mx - 0.5).abs() < 1.0 / 64.0);
        assert!((my - 0.5).abs() < 1.0 / 64.0);
    }

    #[test]
    fn weights_renormalize_with_flag() {
        let g = grid(3, 3);
        let close = DiscreteMeasure::from_weights(g, vec![1.0 / 9.0 + 1e-9; 9]).unwrap();
        assert!(!close.renormalized());
        let far = DiscreteMeasure::from_weights(g, vec![0.2; 9]).unwrap();
        assert!(far.renormalized());
        let s: f64 = far.weights().iter().sum();
        assert!((s - 1.0).abs() <= MASS_TOLERANCE);
    }

    #[test]
    fn rasterized_gaussian_moments() {
        let g = grid(65, 65);
        let gauss = Gaussian::diagonal(&[0.5, 0.5], &[0.1, 0.1]).unwrap();
        let mu = rasterize_gaussian(&gauss, g).unwrap();
        let (m, c) = moments(&mu);
        assert!((m[0] - 0.5).abs() < 1.0 / 65.0 && (m[1] - 0.5).abs() < 1.0 / 65.0);
        assert!((c[(0, 0)].sqrt() - 0.1).abs() < 0.005);
        assert!((c[(1, 1)].sqrt() - 0.1).abs() < 0.005);
    }

    #[test]
    fn concentrated_gaussian_hits_one_cell() {
        let g = grid(65, 65);
        // Mean on a cell center (column 19, row 39) rather than on a cell edge.
        let gauss = Gaussian::diagonal(&[19.5 / 65.0, 39.5 / 65.0], &[1e-6, 1e-6]).unwrap();
        let mu = rasterize_gaussian(&gauss, g).unwrap();
        let max = mu.weights().iter().cloned().fold(0.0, f64::max);
        assert!(max >= 1.0 - 1e-6);
    }

    #[test]
    fn reflection_is_exact() {
        let g = grid(17, 13);
        let gauss = Gaussian::diagonal(&[0.5, 0.5], &[0.15, 0.1]).unwrap();
        let mu = rasterize_gaussian(&gauss, g).unwrap();
        let w = mu.weights();
        for j in 0..g.height() {
            for i in 0..g.width() {
                let mirrored = w[g.index(g.width() - 1 - i, j)];
                assert_eq!(w[g.index(i, j)], mirrored);
                let flipped = w[g.index(i, g.height() - 1 - j)];
                assert_eq!(w[g.index(i, j)], flipped);
            }
        }
    }

    #[test]
    fn rotation_by_quarter_turn_is_exact() {
        let g = grid(15, 15);
        let gauss = Gaussian::diagonal(&[0.5, 0.5], &[0.12, 0.07]).unwrap();
        let rotated = Gaussian::diagonal(&[0.5, 0.5], &[0.07, 0.12]).unwrap();
        let a = rasterize_gaussian(&gauss, g).unwrap();
        let b = rasterize_gaussian(&rotated, g).unwrap();
        for j in 0..15 {
            for i in 0..15 {
                // (x, y) -> (1 - y, x)
                let src = a.weights()[g.index(i, j)];
                let dst = b.weights()[g.index(14 - j, i)];
                assert!((src - dst).abs() <= 1e-15 * src.max(1e-300));
            }
        }
    }

    #[test]
    fn moments_of_delta_and_two_cells() {
        let g = grid(6, 3);
        let idx = g.index(2, 1);
        let d = DiscreteMeasure::dirac(g, idx).unwrap();
        let (m, c) = moments(&d);
        assert_eq!([m[0], m[1]], g.center(idx));
        assert_eq!(c, Matrix2::zeros());

        // Centers (0.25, 0.5) and (0.75, 0.5) on a 6x3 grid.
        let mut w = vec![0.0; g.len()];
        w[g.index(1, 1)] = 0.5;
        w[g.index(4, 1)] = 0.5;
        let mu = DiscreteMeasure::from_weights(g, w).unwrap();
        let (m, c) = moments(&mu);
        assert!((m[0] - 0.5).abs() < 1e-15 && (m[1] - 0.5).abs() < 1e-15);
        assert!((c[(0, 0)] - 0.0625).abs() < 1e-15);
        assert!(c[(1, 1)].abs() < 1e-15 && c[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn gaussian_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            Gaussian::new(DVector::zeros(2), bad),
            Err(Error::NotSpd(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(Gaussian::new(DVector::zeros(2), asym).is_err());
        assert!(Gaussian::diagonal(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0]).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn constructed_measures_have_unit_mass(raw in proptest::collection::vec(0.0f64..10.0, 9..=9)) {
                prop_assume!(raw.iter().any(|&r| r > 0.0));
                let mu = measure_from_density_grid(Grid2::new(3, 3).unwrap(), &raw).unwrap();
                let s: f64 = mu.weights().iter().sum();
                prop_assert!((s - 1.0).abs() <= MASS_TOLERANCE);
                prop_assert!(mu.weights().iter().all(|&w| w >= 0.0));
            }

            #[test]
            fn raster_moments_are_grid_consistent(
                mx in 0.48f64..0.52, my in 0.48f64..0.52,
                sx in 0.05f64..0.2, sy in 0.05f64..0.2,
            ) {
                let g = Grid2::new(65, 65).unwrap();
                let gauss = Gaussian::diagonal(&[mx, my], &[sx, sy]).unwrap();
                let mu = rasterize_gaussian(&gauss, g).unwrap();
                let (m, c) = moments(&mu);
                let h = 1.0 / 65.0;
                prop_assert!((m[0] - mx).abs() < h && (m[1] - my).abs() < h);
                prop_assert!((c[(0, 0)].sqrt() / sx - 1.0).abs() < 0.05);
                prop_assert!((c[(1, 1)].sqrt() / sy - 1.0).abs() < 0.05);
            }
        }
    }
}
