//! Discrete path and spline energies of measure tuples `μ_0..μ_K`.
//!
//! ```text
//! 𝐄ᴷ     = K  Σ_{k=0}^{K−1} W²(μ_k, μ_{k+1})
//! 𝐅ᴷ     = 4K³ Σ_k W²(μ_k, Bar^{½}(μ_{k−1}, μ_{k+1}))
//! 𝐅_Gᴷ   = 4K³ Σ_k W²(μ_k, Bar^{½}_{μ_k}(μ_{k−1}, μ_{k+1}))
//! 𝐅^{δ,K} = 𝐅ᴷ + δ 𝐄ᴷ
//! ```
//!
//! Spline terms run over `k = 1..K−1` for natural and Hermite ends and over all `k = 0..K−1`
//! with cyclic neighbours for periodic ends, where `μ_K` is the same frame as `μ_0`. Every
//! energy is written once against the [`Backend`] trait and evaluated with exact small-instance
//! transport, 1D quantiles, closed-form Gaussians, entropic grid transport or optimal
//! assignments between equal-weight point clouds.

pub mod cubic;
pub mod euclidean;
pub mod extension;

pub use cubic::{cubic_spline_interpolate, PiecewiseCubic, SplineEnds};
pub use euclidean::{
    euclidean_discrete_spline, euclidean_discrete_spline_points, euclidean_spline_objective,
    DiscreteSpline,
};
pub use extension::{
    knot_path_energy, knot_spline_energy, path_energy_gap_bound, temporal_extension,
    TemporalExtension,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::{
    bures_distance2, gaussian_barycenter, gaussian_gen_barycenter, frame_index,
};
use crate::measures::{DiscreteMeasure, Gaussian, PointCloud, WeightedPoints};
use crate::ot_exact::{
    monotone_plan_1d, optimal_assignment, wasserstein2_1d, wasserstein2_exact_small,
};
use crate::sinkhorn::{entropic_barycenter, grid_divergence, point_plan, SinkhornParams};

/// Boundary conditions of the discrete problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    /// End frames are free.
    #[default]
    Natural,
    /// Frames `0, 1, K−1, K` are pinned, encoding end positions and velocities.
    Hermite,
    /// `μ_K ≡ μ_0` with wrap-around spline terms.
    Periodic,
}

/// How the spline term of step `k` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplineTermKind {
    /// `W²(μ_k, Bar(μ_{k−1}, μ_{k+1}))`.
    #[default]
    Barycenter,
    /// `W²(μ_k, Bar_{μ_k}(μ_{k−1}, μ_{k+1}))`.
    Generalized,
    /// `½W²(μ_{k−1}, μ_k) + ½W²(μ_k, μ_{k+1}) − ¼W²(μ_{k−1}, μ_{k+1})`, which agrees with the
    /// generalized term up to fifth order in the step size.
    Polarization,
}

/// A source of squared distances and barycenters for one kind of measure.
pub trait Backend: Sync {
    type Measure: Clone + PartialEq + Send + Sync;

    fn name(&self) -> &'static str;

    fn distance2(&self, a: &Self::Measure, b: &Self::Measure) -> Result<f64>;

    /// `Bar^t(a, b)`.
    fn barycenter(&self, a: &Self::Measure, b: &Self::Measure, t: f64) -> Result<Self::Measure>;

    /// `Bar^t_base(a, b)`.
    fn gen_barycenter(
        &self,
        _base: &Self::Measure,
        _a: &Self::Measure,
        _b: &Self::Measure,
        _t: f64,
    ) -> Result<Self::Measure> {
        Err(Error::BackendMismatch(format!(
            "backend '{}' has no generalized barycenter",
            self.name()
        )))
    }

    /// Entropic ε reported with energies, if any.
    fn eps(&self) -> Option<f64> {
        None
    }
}

/// Exact transport between small weighted point sets (at most 64 atoms in total per pair).
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactSmallBackend;

fn interpolate_plan(
    a: &WeightedPoints,
    b: &WeightedPoints,
    entries: impl Iterator<Item = (usize, usize, f64)>,
    t: f64,
) -> Result<WeightedPoints> {
    let dim = a.dim();
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for (i, j, w) in entries {
        if w <= 0.0 {
            continue;
        }
        let (x, y) = (a.point(i), b.point(j));
        coords.extend(x.iter().zip(y).map(|(p, q)| (1.0 - t) * p + t * q));
        weights.push(w);
    }
    WeightedPoints::new(dim, coords, weights)
}

impl Backend for ExactSmallBackend {
    type Measure = WeightedPoints;

    fn name(&self) -> &'static str {
        "exact-small"
    }

    fn distance2(&self, a: &WeightedPoints, b: &WeightedPoints) -> Result<f64> {
        Ok(wasserstein2_exact_small(a, b)?.0)
    }

    fn barycenter(&self, a: &WeightedPoints, b: &WeightedPoints, t: f64) -> Result<WeightedPoints> {
        let (_, plan) = wasserstein2_exact_small(a, b)?;
        let entries =
            (0..plan.rows()).flat_map(|i| (0..plan.cols()).map(move |j| (i, j))).map(|(i, j)| {
                (i, j, plan.get(i, j))
            });
        // Tiny plan entries are numerical leftovers of the flow solver.
        interpolate_plan(a, b, entries.filter(|e| e.2 > 1e-15), t)
    }
}

/// One-dimensional transport by quantile matching.
///
/// The generalized barycenter coincides with the plain one on the line: all optimal maps are
/// monotone, so averaging the maps out of the base point averages quantile functions.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuantileBackend;

impl Backend for QuantileBackend {
    type Measure = WeightedPoints;

    fn name(&self) -> &'static str {
        "1d"
    }

    fn distance2(&self, a: &WeightedPoints, b: &WeightedPoints) -> Result<f64> {
        wasserstein2_1d(a, b)
    }

    fn barycenter(&self, a: &WeightedPoints, b: &WeightedPoints, t: f64) -> Result<WeightedPoints> {
        interpolate_plan(a, b, monotone_plan_1d(a, b)?.into_iter(), t)
    }

    fn gen_barycenter(
        &self,
        _base: &WeightedPoints,
        a: &WeightedPoints,
        b: &WeightedPoints,
        t: f64,
    ) -> Result<WeightedPoints> {
        self.barycenter(a, b, t)
    }
}

/// Largest cloud size solved with the exact Hungarian method; bigger clouds round an entropic
/// plan.
pub const EXACT_ASSIGNMENT_LIMIT: usize = 64;

/// Optimal assignment between two equal-size clouds: atom `i` of `a` goes to atom `perm[i]` of
/// `b`.
///
/// Up to [`EXACT_ASSIGNMENT_LIMIT`] atoms the assignment is exact, with ties resolved towards
/// the lowest index. Larger clouds solve an entropic problem at `ε = 10⁻³ · diam²` and round its
/// plan greedily, largest entries first and ties in lexicographic `(i, j)` order.
pub fn cloud_assignment(a: &PointCloud, b: &PointCloud) -> Result<Vec<usize>> {
    if a.dim() != b.dim() || a.len() != b.len() {
        return Err(Error::BackendMismatch(format!(
            "clouds of {} and {} atoms in dimensions {} and {}",
            a.len(),
            b.len(),
            a.dim(),
            b.dim()
        )));
    }
    let n = a.len();
    if n <= EXACT_ASSIGNMENT_LIMIT {
        let cost: Vec<f64> = (0..n * n)
            .map(|k| crate::measures::sq_dist(a.point(k / n), b.point(k % n)))
            .collect();
        return optimal_assignment(&cost, n);
    }
    let (wa, wb) = (a.to_weighted(), b.to_weighted());
    let params = SinkhornParams {
        eps: 1e-3 * wa.joint_diameter2(&wb).max(f64::MIN_POSITIVE),
        debias: false,
        tol: 1e-6 / n as f64,
        ..SinkhornParams::default()
    };
    let plan = point_plan(&wa, &wb, &params)?;
    let mut order: Vec<usize> = (0..n * n).collect();
    order.sort_by(|&x, &y| plan[y].total_cmp(&plan[x]).then(x.cmp(&y)));
    let mut perm = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    let mut left = n;
    for k in order {
        let (i, j) = (k / n, k % n);
        if perm[i] == usize::MAX && !taken[j] {
            perm[i] = j;
            taken[j] = true;
            left -= 1;
            if left == 0 {
                break;
            }
        }
    }
    Ok(perm)
}

/// Equal-weight point clouds of a common size, transported by optimal assignments.
#[derive(Debug, Clone, Copy, Default)]
pub struct AssignmentBackend;

impl Backend for AssignmentBackend {
    type Measure = PointCloud;

    fn name(&self) -> &'static str {
        "assignment"
    }

    fn distance2(&self, a: &PointCloud, b: &PointCloud) -> Result<f64> {
        let perm = cloud_assignment(a, b)?;
        let s: f64 = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| crate::measures::sq_dist(a.point(i), b.point(j)))
            .sum();
        Ok(s / a.len() as f64)
    }

    fn barycenter(&self, a: &PointCloud, b: &PointCloud, t: f64) -> Result<PointCloud> {
        let perm = cloud_assignment(a, b)?;
        let coords = perm
            .iter()
            .enumerate()
            .flat_map(|(i, &j)| {
                a.point(i)
                    .iter()
                    .zip(b.point(j))
                    .map(|(p, q)| (1.0 - t) * p + t * q)
                    .collect::<Vec<_>>()
            })
            .collect();
        PointCloud::new(a.dim(), coords)
    }
}

/// Closed-form Gaussian transport.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianBackend;

impl Backend for GaussianBackend {
    type Measure = Gaussian;

    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn distance2(&self, a: &Gaussian, b: &Gaussian) -> Result<f64> {
        bures_distance2(a, b)
    }

    fn barycenter(&self, a: &Gaussian, b: &Gaussian, t: f64) -> Result<Gaussian> {
        gaussian_barycenter(a, b, t)
    }

    fn gen_barycenter(&self, base: &Gaussian, a: &Gaussian, b: &Gaussian, t: f64) -> Result<Gaussian> {
        gaussian_gen_barycenter(base, a, b, t)
    }
}

/// Entropic transport on a shared grid: debiased divergences and barycenters by default.
#[derive(Debug, Clone, Copy)]
pub struct EntropicGridBackend {
    pub params: SinkhornParams,
}

impl Backend for EntropicGridBackend {
    type Measure = DiscreteMeasure;

    fn name(&self) -> &'static str {
        "sinkhorn"
    }

    fn distance2(&self, a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
        Ok(grid_divergence(a, b, &self.params, None)?.value)
    }

    fn barycenter(&self, a: &DiscreteMeasure, b: &DiscreteMeasure, t: f64) -> Result<DiscreteMeasure> {
        Ok(entropic_barycenter(a, b, t, &self.params)?.result)
    }

    fn eps(&self) -> Option<f64> {
        Some(self.params.eps)
    }
}

fn check_tuple<M>(tuple: &[M]) -> Result<usize> {
    if tuple.len() < 3 {
        return Err(invalid("a tuple needs K + 1 >= 3 measures"));
    }
    Ok(tuple.len() - 1)
}

/// Interior steps with their neighbours.
fn spline_steps(k: usize, periodic: bool) -> Vec<(usize, usize, usize)> {
    if periodic {
        (0..k).map(|j| ((j + k - 1) % k, j, (j + 1) % k)).collect()
    } else {
        (1..k).map(|j| (j - 1, j, j + 1)).collect()
    }
}

/// `W²(μ_k, μ_{k+1})` for `k = 0..K−1`.
pub fn path_terms<B: Backend>(tuple: &[B::Measure], backend: &B) -> Result<Vec<f64>> {
    let k = check_tuple(tuple)?;
    (0..k)
        .into_par_iter()
        .map(|j| backend.distance2(&tuple[j], &tuple[j + 1]))
        .collect()
}

/// Per-step spline terms.
pub fn spline_terms<B: Backend>(
    tuple: &[B::Measure],
    backend: &B,
    kind: SplineTermKind,
    periodic: bool,
) -> Result<Vec<f64>> {
    let k = check_tuple(tuple)?;
    spline_steps(k, periodic)
        .into_par_iter()
        .map(|(p, c, n)| {
            let (prev, cur, next) = (&tuple[p], &tuple[c], &tuple[n]);
            match kind {
                SplineTermKind::Barycenter => {
                    backend.distance2(cur, &backend.barycenter(prev, next, 0.5)?)
                }
                SplineTermKind::Generalized => {
                    backend.distance2(cur, &backend.gen_barycenter(cur, prev, next, 0.5)?)
                }
                SplineTermKind::Polarization => Ok(0.5 * backend.distance2(prev, cur)?
                    + 0.5 * backend.distance2(cur, next)?
                    - 0.25 * backend.distance2(prev, next)?),
            }
        })
        .collect()
}

/// `𝐄ᴷ`.
pub fn discrete_path_energy<B: Backend>(tuple: &[B::Measure], backend: &B) -> Result<f64> {
    let k = check_tuple(tuple)? as f64;
    Ok(k * path_terms(tuple, backend)?.iter().sum::<f64>())
}

/// `𝐅ᴷ` with natural-end spline terms.
pub fn discrete_spline_energy<B: Backend>(tuple: &[B::Measure], backend: &B) -> Result<f64> {
    let k = check_tuple(tuple)? as f64;
    let s: f64 = spline_terms(tuple, backend, SplineTermKind::Barycenter, false)?
        .iter()
        .sum();
    Ok(4.0 * k.powi(3) * s)
}

/// `𝐅_Gᴷ` with natural-end spline terms.
pub fn discrete_gen_spline_energy<B: Backend>(tuple: &[B::Measure], backend: &B) -> Result<f64> {
    let k = check_tuple(tuple)? as f64;
    let s: f64 = spline_terms(tuple, backend, SplineTermKind::Generalized, false)?
        .iter()
        .sum();
    Ok(4.0 * k.powi(3) * s)
}

/// A constrained spline interpolation instance.
#[derive(Debug, Clone)]
pub struct SplineProblem<M> {
    pub k: usize,
    pub times: Vec<f64>,
    pub keyframes: Vec<M>,
    pub delta: f64,
    /// Entropic regularization for grid problems.
    pub eps: Option<f64>,
    pub bc: BoundaryCondition,
}

/// All problems with the time layout of a problem, without building it.
pub fn problem_violations(k: usize, times: &[f64], bc: BoundaryCondition, delta: f64) -> Vec<String> {
    let mut out = Vec::new();
    if k < 2 {
        out.push(format!("K = {k} must be at least 2"));
    }
    if times.len() < 2 {
        out.push(format!("{} keyframes given, at least 2 required", times.len()));
    }
    if !(delta >= 0.0) {
        out.push(format!("delta = {delta} must be nonnegative"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        out.push("keyframe times must be strictly increasing".into());
    }
    for &t in times {
        if !(0.0..=1.0).contains(&t) {
            out.push(format!("keyframe time {t} outside [0, 1]"));
        } else if k >= 1 && frame_index(k, t).is_err() {
            out.push(format!("K*t not integral: K = {k}, t = {t}"));
        }
    }
    if bc == BoundaryCondition::Hermite && k >= 2 {
        let idx: Vec<usize> = times.iter().filter_map(|&t| frame_index(k, t).ok()).collect();
        for need in [0, 1, k - 1, k] {
            if !idx.contains(&need) {
                out.push(format!("hermite b.c. needs a keyframe at frame {need}"));
            }
        }
    }
    out
}

impl<M: Clone + PartialEq> SplineProblem<M> {
    pub fn new(
        k: usize,
        times: Vec<f64>,
        keyframes: Vec<M>,
        delta: f64,
        eps: Option<f64>,
        bc: BoundaryCondition,
    ) -> Result<Self> {
        if times.len() != keyframes.len() {
            return Err(invalid("one time per keyframe is required"));
        }
        if let Some(v) = problem_violations(k, &times, bc, delta).into_iter().next() {
            return Err(invalid(v));
        }
        if let Some(e) = eps {
            if !(e > 0.0) {
                return Err(invalid("eps must be positive"));
            }
        }
        let p = Self {
            k,
            times,
            keyframes,
            delta,
            eps,
            bc,
        };
        if bc == BoundaryCondition::Periodic {
            let pins = p.pins();
            let at0 = pins.iter().find(|x| x.0 == 0);
            let at_k = pins.iter().find(|x| x.0 == k);
            if let (Some(a), Some(b)) = (at0, at_k) {
                if p.keyframes[a.1] != p.keyframes[b.1] {
                    return Err(invalid("periodic keyframes at t = 0 and t = 1 differ"));
                }
            }
        }
        Ok(p)
    }

    /// `(frame index, keyframe index)` pairs.
    pub fn pins(&self) -> Vec<(usize, usize)> {
        self.times
            .iter()
            .enumerate()
            .map(|(i, &t)| (frame_index(self.k, t).expect("validated"), i))
            .collect()
    }

    /// Keyframe pinned at `frame`, honouring the periodic identification of frames 0 and K.
    pub fn pinned(&self, frame: usize) -> Option<&M> {
        let pins = self.pins();
        let direct = pins.iter().find(|p| p.0 == frame);
        let alias = if self.bc == BoundaryCondition::Periodic {
            match frame {
                0 => pins.iter().find(|p| p.0 == self.k),
                f if f == self.k => pins.iter().find(|p| p.0 == 0),
                _ => None,
            }
        } else {
            None
        };
        direct.or(alias).map(|p| &self.keyframes[p.1])
    }

    /// Frames the optimizer may change. In periodic mode frame `K` always copies frame 0.
    pub fn free_frames(&self) -> Vec<usize> {
        (0..=self.k)
            .filter(|&f| {
                !(self.bc == BoundaryCondition::Periodic && f == self.k) && self.pinned(f).is_none()
            })
            .collect()
    }

    /// Checks the interpolation constraints of a tuple.
    pub fn check_tuple(&self, tuple: &[M]) -> Result<()> {
        if tuple.len() != self.k + 1 {
            return Err(invalid(format!(
                "tuple has {} measures, expected K + 1 = {}",
                tuple.len(),
                self.k + 1
            )));
        }
        for f in 0..=self.k {
            if let Some(key) = self.pinned(f) {
                if tuple[f] != *key {
                    return Err(Error::ConstraintViolated { index: f });
                }
            }
        }
        if self.bc == BoundaryCondition::Periodic && tuple[self.k] != tuple[0] {
            return Err(Error::ConstraintViolated { index: self.k });
        }
        Ok(())
    }
}

/// Energy breakdown in the JSON layout used by the tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total: f64,
    /// Raw per-step spline terms (before the `4K³` factor).
    pub spline_terms: Vec<f64>,
    /// Raw per-step path terms (before the `δK` factor).
    pub path_terms: Vec<f64>,
    pub backend: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub delta: f64,
    pub eps: Option<f64>,
}

impl EnergyReport {
    pub fn spline_energy(&self) -> f64 {
        4.0 * (self.k as f64).powi(3) * self.spline_terms.iter().sum::<f64>()
    }

    pub fn path_energy(&self) -> f64 {
        self.k as f64 * self.path_terms.iter().sum::<f64>()
    }
}

/// A tuple with its energy breakdown.
#[derive(Debug, Clone)]
pub struct SplineSolution<M> {
    pub measures: Vec<M>,
    pub energy: EnergyReport,
}

/// Energy report of a tuple without constraint checks.
pub fn energy_report<B: Backend>(
    tuple: &[B::Measure],
    backend: &B,
    kind: SplineTermKind,
    bc: BoundaryCondition,
    delta: f64,
) -> Result<EnergyReport> {
    let k = check_tuple(tuple)?;
    let st = spline_terms(tuple, backend, kind, bc == BoundaryCondition::Periodic)?;
    let pt = if delta > 0.0 {
        path_terms(tuple, backend)?
    } else {
        Vec::new()
    };
    let kf = k as f64;
    let total =
        4.0 * kf.powi(3) * st.iter().sum::<f64>() + delta * kf * pt.iter().sum::<f64>();
    Ok(EnergyReport {
        total,
        spline_terms: st,
        path_terms: pt,
        backend: backend.name().to_string(),
        k,
        delta,
        eps: backend.eps(),
    })
}

/// `𝐅^{δ,K}` of a tuple satisfying the problem's constraints.
pub fn full_objective<B: Backend>(
    problem: &SplineProblem<B::Measure>,
    tuple: &[B::Measure],
    backend: &B,
    kind: SplineTermKind,
) -> Result<SplineSolution<B::Measure>> {
    problem.check_tuple(tuple)?;
    let energy = energy_report(tuple, backend, kind, problem.bc, problem.delta)?;
    Ok(SplineSolution {
        measures: tuple.to_vec(),
        energy,
    })
}
