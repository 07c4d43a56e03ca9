//! Closed-form Bures–Wasserstein calculus for Gaussians `𝒩(m, σ²)` and the diagonal Gaussian
//! E-spline.
//!
//! With `S = (σ₁σ₂²σ₁)^{1/2}`:
//!
//! - `W²(g₁, g₂) = |m₁ − m₂|² + tr(σ₁² + σ₂² − 2S)`;
//! - the optimal map is `x ↦ m₂ + A(x − m₁)` with `A = σ₁⁻¹ S σ₁⁻¹`;
//! - the `t`-barycenter has mean `(1 − t)m₁ + t m₂` and std `(M Mᵀ)^{1/2}` with
//!   `M = (1 − t)σ₁ + t σ₁⁻¹S`, the factor of the pushed covariance `((1−t)I + tA)σ₁²((1−t)I + tA)`;
//! - the generalized barycenter with base `g` averages the two maps out of `g`.
//!
//! Diagonal (or commuting) Gaussians form a flat space: the spline energy separates into the
//! squared accelerations of the mean and of each eigenvalue of `σ`, so the E-spline is a classical
//! cubic spline per coordinate as long as the eigenvalue splines stay positive. When they do not,
//! or when a path regularization `δ > 0` or Hermite ends are requested, the discrete problem with
//! the box constraint `λ ≥ λ_min` is solved instead.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::measures::Gaussian;
use crate::spline::cubic::{cubic_spline_interpolate, PiecewiseCubic, SplineEnds};
use crate::spline::euclidean::{euclidean_discrete_spline, euclidean_spline_objective};
use crate::spline::BoundaryCondition;

/// Default positivity floor for eigenvalue splines.
pub const LAMBDA_MIN: f64 = 1e-4;

/// `σ^{1/2} = (tr σ + 2√det σ)^{−1/2} (σ + √det σ · I)` for a symmetric positive-definite 2×2 matrix.
pub fn sqrt2x2_spd(sigma: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let det = sigma.determinant();
    let tr = sigma.trace();
    if !(det > 0.0) || !(tr > 0.0) {
        return Err(Error::NotSpd(format!("det {det}, trace {tr}")));
    }
    let sd = det.sqrt();
    let s = (tr + 2.0 * sd).sqrt();
    let mut r = (sigma + Matrix2::identity() * sd) / s;
    let off = 0.5 * (r[(0, 1)] + r[(1, 0)]);
    r[(0, 1)] = off;
    r[(1, 0)] = off;
    Ok(r)
}

/// Square root of a symmetric positive-definite matrix: 1×1, 2×2, or diagonal of any size.
pub fn sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if crate::measures::is_diagonal(m) {
        if m.diagonal().iter().any(|v| !(*v > 0.0)) {
            return Err(Error::NotSpd("non-positive diagonal entry".into()));
        }
        return Ok(DMatrix::from_diagonal(&m.diagonal().map(f64::sqrt)));
    }
    if d == 2 {
        let r = sqrt2x2_spd(&Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]))?;
        return Ok(DMatrix::from_row_slice(2, 2, &[r[(0, 0)], r[(0, 1)], r[(1, 0)], r[(1, 1)]]));
    }
    Err(invalid("matrix square roots beyond 2x2 need diagonal matrices"))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn same_dim(g1: &Gaussian, g2: &Gaussian) -> Result<()> {
    if g1.dim() != g2.dim() {
        return Err(Error::BackendMismatch(format!(
            "Gaussians of dimension {} and {}",
            g1.dim(),
            g2.dim()
        )));
    }
    Ok(())
}

fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::NotSpd("singular std matrix".into()))
}

/// `(σ₁ σ₂² σ₁)^{1/2}`.
fn cross_root(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sqrt_spd(&symmetrize(s1 * s2 * s2 * s1))
}

/// Squared Wasserstein distance between two Gaussians.
pub fn bures_distance2(g1: &Gaussian, g2: &Gaussian) -> Result<f64> {
    same_dim(g1, g2)?;
    let dm = (g1.mean() - g2.mean()).norm_squared();
    let s = cross_root(g1.std(), g2.std())?;
    let tr = g1.covariance().trace() + g2.covariance().trace() - 2.0 * s.trace();
    Ok(dm + tr.max(0.0))
}

/// Affine map `x ↦ A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    /// Image of a Gaussian: mean `A m + b`, std `(A σ² Aᵀ)^{1/2}`.
    pub fn push_forward(&self, g: &Gaussian) -> Result<Gaussian> {
        let cov = symmetrize(&self.a * g.covariance() * self.a.transpose());
        Gaussian::new(self.apply(g.mean()), sqrt_spd(&cov)?)
    }
}

/// Optimal transport map from `g1` to `g2`.
pub fn gaussian_monge_map(g1: &Gaussian, g2: &Gaussian) -> Result<AffineMap> {
    same_dim(g1, g2)?;
    let inv = inverse(g1.std())?;
    let a = symmetrize(&inv * cross_root(g1.std(), g2.std())? * &inv);
    let b = g2.mean() - &a * g1.mean();
    Ok(AffineMap { a, b })
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("t = {t} is outside [0, 1]")));
    }
    Ok(())
}

/// Displacement interpolant `Bar^t(g1, g2)`.
pub fn gaussian_barycenter(g1: &Gaussian, g2: &Gaussian, t: f64) -> Result<Gaussian> {
    same_dim(g1, g2)?;
    check_t(t)?;
    let inv = inverse(g1.std())?;
    let m = g1.std() * (1.0 - t) + inv * cross_root(g1.std(), g2.std())? * t;
    let std = sqrt_spd(&symmetrize(&m * m.transpose()))?;
    Gaussian::new(g1.mean() * (1.0 - t) + g2.mean() * t, std)
}

/// Generalized barycenter `((1 − t)T₁ + tT₃)_# base` with `T_i` the optimal maps out of `base`.
pub fn gaussian_gen_barycenter(
    base: &Gaussian,
    g1: &Gaussian,
    g3: &Gaussian,
    t: f64,
) -> Result<Gaussian> {
    same_dim(base, g1)?;
    same_dim(base, g3)?;
    check_t(t)?;
    let inv = inverse(base.std())?;
    let n = &inv * cross_root(base.std(), g1.std())? * (1.0 - t)
        + &inv * cross_root(base.std(), g3.std())? * t;
    let std = sqrt_spd(&symmetrize(&n * n.transpose()))?;
    Gaussian::new(g1.mean() * (1.0 - t) + g3.mean() * t, std)
}

/// Polarization surrogate `½W²(g1, g2) + ½W²(g3, g2) − ¼W²(g1, g3)` of `W²(g2, Bar(g1, g3))`.
pub fn polarization_term(g1: &Gaussian, g2: &Gaussian, g3: &Gaussian) -> Result<f64> {
    Ok(0.5 * bures_distance2(g1, g2)? + 0.5 * bures_distance2(g3, g2)?
        - 0.25 * bures_distance2(g1, g3)?)
}

/// Times `t_k = k/K` and the Gaussians placed there.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCurveSample {
    pub times: Vec<f64>,
    pub gaussians: Vec<Gaussian>,
}

/// Continuous diagonal Gaussian curve: piecewise cubic mean and eigenvalue paths.
///
/// `basis` is the common eigenbasis when the keyframes were only simultaneously diagonalizable;
/// `σ(t) = R diag(λ(t)) Rᵀ` and `m(t) = R m̃(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussianPath {
    pub mean: Vec<PiecewiseCubic>,
    pub eig: Vec<PiecewiseCubic>,
    pub basis: Option<DMatrix<f64>>,
}

impl DiagGaussianPath {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Smallest eigenvalue over `[0, 1]`; the path is a valid Gaussian curve iff it is positive.
    pub fn min_eigenvalue(&self) -> f64 {
        self.eig
            .iter()
            .map(PiecewiseCubic::min_value)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn eval(&self, t: f64) -> Result<Gaussian> {
        let m = DVector::from_iterator(self.dim(), self.mean.iter().map(|c| c.eval(t)));
        let l = DVector::from_iterator(self.dim(), self.eig.iter().map(|c| c.eval(t)));
        match &self.basis {
            None => Gaussian::new(m, DMatrix::from_diagonal(&l)),
            Some(r) => Gaussian::new(
                r * m,
                symmetrize(r * DMatrix::from_diagonal(&l) * r.transpose()),
            ),
        }
    }
}

/// `∫|m̈|² + Σ_j ∫|λ̈^j|²`, exact for piecewise cubic paths.
pub fn diag_spline_energy(path: &DiagGaussianPath) -> f64 {
    path.mean
        .iter()
        .chain(&path.eig)
        .map(PiecewiseCubic::spline_energy)
        .sum()
}

/// `∫|ṁ|² + Σ_j ∫|λ̇^j|²`, exact for piecewise cubic paths.
pub fn diag_path_energy(path: &DiagGaussianPath) -> f64 {
    path.mean
        .iter()
        .chain(&path.eig)
        .map(PiecewiseCubic::path_energy)
        .sum()
}

/// Options for [`gaussian_espline`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EsplineOptions {
    pub lambda_min: f64,
    /// Weight of the path-energy regularization.
    pub delta: f64,
}

impl Default for EsplineOptions {
    fn default() -> Self {
        Self {
            lambda_min: LAMBDA_MIN,
            delta: 0.0,
        }
    }
}

/// Which problem produced the E-spline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "regime")]
pub enum EsplineRegime {
    /// Classical cubic splines of the mean and of every eigenvalue, sampled at `k/K`.
    CubicSpline,
    /// Discrete quadratic problem with `λ ≥ λ_min`; `active` counts knots on the bound.
    DiscreteQp { active: usize },
}

/// Diagonal Gaussian E-spline.
#[derive(Debug, Clone)]
pub struct EsplineResult {
    pub sample: GaussianCurveSample,
    pub path: DiagGaussianPath,
    pub regime: EsplineRegime,
    /// Discrete objective `𝐅^{δ,K}` of the sampled tuple (flat in these coordinates).
    pub objective: f64,
}

/// Mean and eigenvalue coordinates of keyframes in a shared eigenbasis.
struct Diagonalized {
    basis: Option<DMatrix<f64>>,
    means: Vec<Vec<f64>>,
    eigs: Vec<Vec<f64>>,
}

fn diagonalize(keys: &[&Gaussian]) -> Result<Diagonalized> {
    let d = keys[0].dim();
    if keys.iter().any(|g| g.dim() != d) {
        return Err(Error::BackendMismatch("keyframes of different dimensions".into()));
    }
    if keys.iter().all(|g| g.is_diagonal()) {
        return Ok(Diagonalized {
            basis: None,
            means: keys.iter().map(|g| g.mean().iter().copied().collect()).collect(),
            eigs: keys.iter().map(|g| g.diag_std()).collect(),
        });
    }
    // Only d = 2 can hold non-diagonal matrices. The eigenbasis of any non-scalar keyframe is
    // the only candidate for a shared one.
    let pivot = keys
        .iter()
        .find(|g| {
            let s = g.std();
            (s[(0, 0)] - s[(1, 1)]).abs() > 1e-12 || s[(0, 1)].abs() > 1e-12
        })
        .ok_or_else(|| invalid("no non-scalar keyframe"))?;
    let r = SymmetricEigen::new(pivot.std().clone()).eigenvectors;
    let mut means = Vec::new();
    let mut eigs = Vec::new();
    for g in keys {
        let rot = r.transpose() * g.std() * &r;
        let scale = rot.amax().max(1e-300);
        if rot[(0, 1)].abs() > 1e-10 * scale || rot[(1, 0)].abs() > 1e-10 * scale {
            return Err(invalid("keyframes are not simultaneously diagonalizable"));
        }
        means.push((r.transpose() * g.mean()).iter().copied().collect());
        eigs.push(vec![rot[(0, 0)], rot[(1, 1)]]);
    }
    Ok(Diagonalized {
        basis: Some(r),
        means,
        eigs,
    })
}

/// Frame index `K·t̄` of a keyframe time, if integral.
pub fn frame_index(k: usize, t: f64) -> Result<usize> {
    let x = k as f64 * t;
    let r = x.round();
    if (x - r).abs() > 1e-9 || r < 0.0 || r > k as f64 {
        return Err(invalid(format!("K*t not integral for t = {t} and K = {k}")));
    }
    Ok(r as usize)
}

/// Continuous cubic spline of one coordinate through the keyframes, as a curve on `[0, 1]`.
fn continuous_coordinate(times: &[f64], vals: &[f64], bc: BoundaryCondition) -> Result<PiecewiseCubic> {
    match bc {
        BoundaryCondition::Periodic => {
            let mut t = times.to_vec();
            let mut v = vals.to_vec();
            if *t.last().unwrap() == 1.0 && t[0] == 0.0 {
                t.pop();
                v.pop();
            } else if *t.last().unwrap() == 1.0 {
                // Frame 1 is frame 0; move it to the front.
                t.pop();
                let last = v.pop().unwrap();
                t.insert(0, 0.0);
                v.insert(0, last);
            }
            t.push(t[0] + 1.0);
            v.push(v[0]);
            cubic_spline_interpolate(&t, &v, SplineEnds::Periodic)?.wrapped_to_unit()
        }
        _ => Ok(cubic_spline_interpolate(times, vals, SplineEnds::Natural)?.extended_to(0.0, 1.0)),
    }
}

fn interpolating_path(knots: &[f64], bc: BoundaryCondition) -> Result<PiecewiseCubic> {
    let k = knots.len() - 1;
    let t: Vec<f64> = (0..=k).map(|j| j as f64 / k as f64).collect();
    let ends = if bc == BoundaryCondition::Periodic {
        SplineEnds::Periodic
    } else {
        SplineEnds::Natural
    };
    cubic_spline_interpolate(&t, knots, ends)
}

/// Gaussian E-spline through diagonal (or commuting) keyframes `(t̄_i, g_i)`.
///
/// Natural or periodic ends with `δ = 0` use classical cubic splines when every eigenvalue spline
/// stays at or above `λ_min`. Otherwise the discrete problem is solved with `λ ≥ λ_min`, and the
/// returned path is the natural (periodic) cubic interpolant of the discrete knots.
pub fn gaussian_espline(
    keyframes: &[(f64, Gaussian)],
    k: usize,
    bc: BoundaryCondition,
    opts: &EsplineOptions,
) -> Result<EsplineResult> {
    if k < 2 {
        return Err(invalid("K must be at least 2"));
    }
    if keyframes.len() < 2 {
        return Err(invalid("at least two keyframes are required"));
    }
    if keyframes.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(invalid("keyframe times must be strictly increasing"));
    }
    if !(opts.lambda_min > 0.0) || !(opts.delta >= 0.0) {
        return Err(invalid("lambda_min must be positive and delta nonnegative"));
    }
    let times: Vec<f64> = keyframes.iter().map(|k| k.0).collect();
    let idx: Vec<usize> = times
        .iter()
        .map(|&t| frame_index(k, t))
        .collect::<Result<_>>()?;
    if bc == BoundaryCondition::Hermite {
        for need in [0, 1, k - 1, k] {
            if !idx.contains(&need) {
                return Err(invalid(format!(
                    "hermite ends need a keyframe at frame {need}"
                )));
            }
        }
    }
    let keys: Vec<&Gaussian> = keyframes.iter().map(|k| &k.1).collect();
    let diag = diagonalize(&keys)?;
    if bc == BoundaryCondition::Periodic
        && idx.first() == Some(&0)
        && idx.last() == Some(&k)
        && (diag.means[0] != *diag.means.last().unwrap()
            || diag.eigs[0] != *diag.eigs.last().unwrap())
    {
        return Err(invalid("periodic keyframes at t = 0 and t = 1 differ"));
    }
    for (i, e) in diag.eigs.iter().enumerate() {
        if let Some(bad) = e.iter().find(|v| **v < opts.lambda_min) {
            return Err(Error::InfeasibleConstraint(format!(
                "keyframe {i} has eigenvalue {bad} below lambda_min = {}",
                opts.lambda_min
            )));
        }
    }
    let d = keys[0].dim();
    let column = |rows: &[Vec<f64>], c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let sample_times: Vec<f64> = (0..=k).map(|j| j as f64 / k as f64).collect();

    let to_result = |mean: Vec<PiecewiseCubic>,
                     eig: Vec<PiecewiseCubic>,
                     mean_knots: Vec<Vec<f64>>,
                     eig_knots: Vec<Vec<f64>>,
                     regime: EsplineRegime|
     -> Result<EsplineResult> {
        let path = DiagGaussianPath {
            mean,
            eig,
            basis: diag.basis.clone(),
        };
        let gaussians = (0..=k)
            .map(|j| {
                let m = DVector::from_iterator(d, (0..d).map(|c| mean_knots[c][j]));
                let l = DVector::from_iterator(d, (0..d).map(|c| eig_knots[c][j]));
                match &diag.basis {
                    None => Gaussian::new(m, DMatrix::from_diagonal(&l)),
                    Some(r) => Gaussian::new(
                        r * m,
                        symmetrize(r * DMatrix::from_diagonal(&l) * r.transpose()),
                    ),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let objective = mean_knots
            .iter()
            .chain(&eig_knots)
            .map(|x| euclidean_spline_objective(x, bc, opts.delta))
            .sum();
        Ok(EsplineResult {
            sample: GaussianCurveSample {
                times: sample_times.clone(),
                gaussians,
            },
            path,
            regime,
            objective,
        })
    };

    if bc != BoundaryCondition::Hermite && opts.delta == 0.0 {
        let mean: Vec<PiecewiseCubic> = (0..d)
            .map(|c| continuous_coordinate(&times, &column(&diag.means, c), bc))
            .collect::<Result<_>>()?;
        let eig: Vec<PiecewiseCubic> = (0..d)
            .map(|c| continuous_coordinate(&times, &column(&diag.eigs, c), bc))
            .collect::<Result<_>>()?;
        if eig.iter().all(|e| e.min_value() >= opts.lambda_min) {
            let mk = mean
                .iter()
                .map(|p| sample_times.iter().map(|&t| p.eval(t)).collect())
                .collect();
            let ek = eig
                .iter()
                .map(|p| sample_times.iter().map(|&t| p.eval(t)).collect())
                .collect();
            return to_result(mean, eig, mk, ek, EsplineRegime::CubicSpline);
        }
    }

    let pins = |c: usize, rows: &[Vec<f64>]| -> Vec<(usize, f64)> {
        idx.iter().zip(rows).map(|(i, r)| (*i, r[c])).collect()
    };
    let mut active = 0;
    let mut mean_knots = Vec::with_capacity(d);
    let mut eig_knots = Vec::with_capacity(d);
    for c in 0..d {
        let m = euclidean_discrete_spline(k, &pins(c, &diag.means), bc, opts.delta, None)?;
        mean_knots.push(m.values);
        let e = euclidean_discrete_spline(
            k,
            &pins(c, &diag.eigs),
            bc,
            opts.delta,
            Some(opts.lambda_min),
        )?;
        active += e.active.len();
        eig_knots.push(e.values);
    }
    let mean = mean_knots
        .iter()
        .map(|x| interpolating_path(x, bc))
        .collect::<Result<_>>()?;
    let eig = eig_knots
        .iter()
        .map(|x| interpolating_path(x, bc))
        .collect::<Result<_>>()?;
    to_result(
        mean,
        eig,
        mean_knots,
        eig_knots,
        EsplineRegime::DiscreteQp { active },
    )
}
