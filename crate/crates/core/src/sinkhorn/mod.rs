//! Log-domain entropic optimal transport.
//!
//! Conventions used throughout:
//!
//! - The entropic cost is `W_ε(μ,ν) = min_π ⟨C,π⟩ + ε KL(π | μ⊗ν)` with `C = |x − y|²`.
//! - Potentials `f, g` are in cost units. The plan is `π_ij = μ_i ν_j exp((f_i + g_j − C_ij)/ε)`
//!   and the reported cost is `⟨f,μ⟩ + ⟨g,ν⟩ − ε(Σπ − 1)`.
//! - The debiased divergence is `S_ε(μ,ν) = W_ε(μ,ν) − ½W_ε(μ,μ) − ½W_ε(ν,ν)`.
//! - Weights are floored at [`WEIGHT_FLOOR`] and renormalized before solving. Floored cells get
//!   a zero gradient.
//! - Convergence is the L∞ violation of the target marginal after an exact source update,
//!   `max_j ν_j |exp((g_j − g'_j)/ε) − 1|` where `g'` is the next target update.
//!
//! Cold starts anneal ε from the squared support diameter down to the target by halving, with a
//! symmetric (averaged) update at every level.

mod barycenter;
mod kernel;

pub use barycenter::{
    entropic_barycenter, entropic_barycenter_with, BarycenterParams, EntropicBarycenter,
};
pub use kernel::{apply_gibbs_kernel, DenseGeometry, DenseKernel, Geometry, GridKernel, LogKernel};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{DiscreteMeasure, WeightedPoints};

/// Weights below this are raised to it before solving.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Solver knobs shared by distances, divergences and barycenters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornParams {
    /// Regularization strength in squared-length units.
    pub eps: f64,
    /// L∞ marginal violation at which iterations stop.
    pub tol: f64,
    pub max_iter: usize,
    /// Report `S_ε` instead of the raw `W_ε`.
    pub debias: bool,
    /// Anneal ε from the support diameter on cold starts.
    pub eps_scaling: bool,
    /// Keep the per-iteration violation history in the state.
    pub record_history: bool,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            tol: 1e-7,
            max_iter: 10_000,
            debias: true,
            eps_scaling: true,
            record_history: false,
        }
    }
}

impl SinkhornParams {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Marginal prepared for the log-domain solver.
#[derive(Debug, Clone)]
pub struct Marginal {
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub floored: Vec<bool>,
}

impl Marginal {
    pub fn new(raw: &[f64]) -> Self {
        let floored: Vec<bool> = raw.iter().map(|&w| w < WEIGHT_FLOOR).collect();
        let mut weights: Vec<f64> = raw.iter().map(|&w| w.max(WEIGHT_FLOOR)).collect();
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Self {
            weights,
            log_weights,
            floored,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Dual potentials and diagnostics of one entropic transport problem.
#[derive(Debug, Clone, Serialize)]
pub struct SinkhornState {
    pub eps: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    /// Final L∞ marginal violation.
    pub violation: f64,
    pub converged: bool,
    /// Raw entropic cost `W_ε`.
    pub cost: f64,
    pub floored_source: Vec<bool>,
    pub floored_target: Vec<bool>,
    /// Violation after every iteration, when requested.
    pub history: Vec<f64>,
}

/// Which marginal a gradient refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Solution of a symmetric problem `W_ε(μ,μ)` with its single potential.
#[derive(Debug, Clone, Serialize)]
pub struct SymmetricState {
    pub eps: f64,
    pub p: Vec<f64>,
    pub iterations: usize,
    pub violation: f64,
    pub cost: f64,
}

/// Debiased divergence with the three underlying solves.
#[derive(Debug, Clone)]
pub struct Divergence {
    /// `S_ε` when debiased, `W_ε` otherwise.
    pub value: f64,
    pub cross: SinkhornState,
    pub self_source: Option<SymmetricState>,
    pub self_target: Option<SymmetricState>,
}

impl Divergence {
    /// Centered gradient of the value with respect to the weights on `side`.
    pub fn gradient(&self, side: Side) -> Result<Vec<f64>> {
        let (pot, selfp, floored) = match side {
            Side::Source => (&self.cross.f, &self.self_source, &self.cross.floored_source),
            Side::Target => (&self.cross.g, &self.self_target, &self.cross.floored_target),
        };
        if !self.cross.converged {
            return Err(Error::NotConverged);
        }
        let raw: Vec<f64> = match selfp {
            Some(s) => pot.iter().zip(&s.p).map(|(a, b)| a - b).collect(),
            None => pot.clone(),
        };
        Ok(center(&raw, floored))
    }
}

fn center(raw: &[f64], floored: &[bool]) -> Vec<f64> {
    let active = floored.iter().filter(|f| !**f).count().max(1);
    let mean = raw
        .iter()
        .zip(floored)
        .filter(|(_, f)| !**f)
        .map(|(v, _)| v)
        .sum::<f64>()
        / active as f64;
    raw.iter()
        .zip(floored)
        .map(|(v, f)| if *f { 0.0 } else { v - mean })
        .collect()
}

/// Warm-start potentials for a divergence solve.
#[derive(Debug, Clone, Default)]
pub struct DivergenceWarm {
    pub f: Option<Vec<f64>>,
    pub g: Option<Vec<f64>>,
    pub p_source: Option<Vec<f64>>,
    pub p_target: Option<Vec<f64>>,
}

impl Divergence {
    pub fn warm(&self) -> DivergenceWarm {
        DivergenceWarm {
            f: Some(self.cross.f.clone()),
            g: Some(self.cross.g.clone()),
            p_source: self.self_source.as_ref().map(|s| s.p.clone()),
            p_target: self.self_target.as_ref().map(|s| s.p.clone()),
        }
    }
}

fn annealing_ladder(diam2: f64, eps: f64) -> Vec<f64> {
    let mut ladder = Vec::new();
    let mut e = diam2.max(eps);
    while e > eps * 2.0 {
        ladder.push(e);
        e *= 0.5;
    }
    ladder
}

fn check_finite(v: &[f64], eps: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::EpsTooSmall { eps })
    }
}

/// `out_i = −ε · log Σ_j exp(log ν_j + g_j/ε − C_ij/ε)`.
fn update_source<K: LogKernel>(k: &K, lb: &[f64], g: &[f64], h: &mut [f64], out: &mut [f64]) {
    let eps = k.eps();
    for ((hj, l), gj) in h.iter_mut().zip(lb).zip(g) {
        *hj = l + gj / eps;
    }
    k.lse_over_target(h, out);
    out.iter_mut().for_each(|o| *o *= -eps);
}

fn update_target<K: LogKernel>(k: &K, la: &[f64], f: &[f64], h: &mut [f64], out: &mut [f64]) {
    let eps = k.eps();
    for ((hi, l), fi) in h.iter_mut().zip(la).zip(f) {
        *hi = l + fi / eps;
    }
    k.lse_over_source(h, out);
    out.iter_mut().for_each(|o| *o *= -eps);
}

/// Solves `W_ε(a, b)` on an arbitrary geometry.
pub fn solve<G: Geometry>(
    geom: &G,
    a: &Marginal,
    b: &Marginal,
    params: &SinkhornParams,
    warm: Option<(&[f64], &[f64])>,
) -> Result<SinkhornState> {
    params.validate()?;
    let (n, m) = (a.len(), b.len());
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut hn = vec![0.0; n];
    let mut hm = vec![0.0; m];
    let mut tmp_n = vec![0.0; n];
    let mut tmp_m = vec![0.0; m];
    match warm {
        Some((wf, wg)) if wf.len() == n && wg.len() == m => {
            f.copy_from_slice(wf);
            g.copy_from_slice(wg);
        }
        Some(_) => return Err(invalid("warm-start potentials have the wrong length")),
        None if params.eps_scaling => {
            for e in annealing_ladder(geom.diameter2(), params.eps) {
                let k = geom.kernel(e);
                update_source(&k, &b.log_weights, &g, &mut hm, &mut tmp_n);
                update_target(&k, &a.log_weights, &f, &mut hn, &mut tmp_m);
                for (x, y) in f.iter_mut().zip(&tmp_n) {
                    *x = 0.5 * (*x + y);
                }
                for (x, y) in g.iter_mut().zip(&tmp_m) {
                    *x = 0.5 * (*x + y);
                }
                check_finite(&f, e)?;
                check_finite(&g, e)?;
            }
        }
        None => {}
    }
    let k = geom.kernel(params.eps);
    let eps = params.eps;
    let mut history = Vec::new();
    let mut violation = f64::INFINITY;
    let mut mass = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut newton_done = false;
    while iterations < params.max_iter {
        iterations += 1;
        update_source(&k, &b.log_weights, &g, &mut hm, &mut f);
        update_target(&k, &a.log_weights, &f, &mut hn, &mut tmp_m);
        check_finite(&f, eps)?;
        check_finite(&tmp_m, eps)?;
        violation = 0.0;
        mass = 0.0;
        for j in 0..m {
            let r = ((g[j] - tmp_m[j]) / eps).exp();
            mass += b.weights[j] * r;
            violation = f64::max(violation, b.weights[j] * (r - 1.0).abs());
        }
        if params.record_history {
            history.push(violation);
        }
        if violation <= params.tol {
            converged = true;
            break;
        }
        g.copy_from_slice(&tmp_m);
        if let Some(cost) = geom.dense_cost() {
            if !newton_done && iterations >= NEWTON_AFTER {
                newton_done = true;
                newton_polish(cost, a, b, eps, &mut f, &mut g, params.tol);
            }
        }
    }
    let cost = dot(&f, &a.weights) + dot(&g, &b.weights) - eps * (mass - 1.0);
    let state = SinkhornState {
        eps,
        f,
        g,
        iterations,
        violation,
        converged,
        cost,
        floored_source: a.floored.clone(),
        floored_target: b.floored.clone(),
        history,
    };
    if converged {
        Ok(state)
    } else {
        Err(Error::NoConvergence {
            iterations,
            residual: violation,
            state: Some(Box::new(state)),
        })
    }
}

/// Solves the symmetric problem `W_ε(a, a)` with averaged fixed-point updates.
pub fn solve_symmetric<G: Geometry>(
    geom: &G,
    a: &Marginal,
    params: &SinkhornParams,
    warm: Option<&[f64]>,
) -> Result<SymmetricState> {
    params.validate()?;
    let n = a.len();
    let mut p = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut t = vec![0.0; n];
    match warm {
        Some(w) if w.len() == n => p.copy_from_slice(w),
        Some(_) => return Err(invalid("warm-start potential has the wrong length")),
        None if params.eps_scaling => {
            for e in annealing_ladder(geom.diameter2(), params.eps) {
                let k = geom.kernel(e);
                update_source(&k, &a.log_weights, &p, &mut h, &mut t);
                for (x, y) in p.iter_mut().zip(&t) {
                    *x = 0.5 * (*x + y);
                }
                check_finite(&p, e)?;
            }
        }
        None => {}
    }
    let k = geom.kernel(params.eps);
    let eps = params.eps;
    let mut iterations = 0;
    let mut violation;
    let mut mass;
    loop {
        iterations += 1;
        update_source(&k, &a.log_weights, &p, &mut h, &mut t);
        check_finite(&t, eps)?;
        violation = 0.0;
        mass = 0.0;
        for i in 0..n {
            let r = ((p[i] - t[i]) / eps).exp();
            mass += a.weights[i] * r;
            violation = f64::max(violation, a.weights[i] * (r - 1.0).abs());
        }
        if violation <= params.tol {
            break;
        }
        if iterations >= params.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: violation,
                state: None,
            });
        }
        for (x, y) in p.iter_mut().zip(&t) {
            *x = 0.5 * (*x + y);
        }
        if let Some(cost) = geom.dense_cost() {
            if iterations == NEWTON_AFTER {
                let (mut f, mut g) = (p.clone(), p.clone());
                newton_polish(cost, a, a, eps, &mut f, &mut g, params.tol);
                for ((x, fi), gi) in p.iter_mut().zip(&f).zip(&g) {
                    *x = 0.5 * (fi + gi);
                }
            }
        }
    }
    let cost = 2.0 * dot(&p, &a.weights) - eps * (mass - 1.0);
    Ok(SymmetricState {
        eps,
        p,
        iterations,
        violation,
        cost,
    })
}

/// Sinkhorn sweeps on dense problems before switching to Newton steps.
const NEWTON_AFTER: usize = 100;
const NEWTON_MAX_STEPS: usize = 60;

/// Damped Newton ascent on the dual of a small dense problem.
///
/// Plain Sinkhorn converges linearly with a rate that degrades like `1 − e^{−Δ/ε}` on nearly
/// degenerate plans (for example equal-size uniform point sets, whose optimal plan is a
/// permutation). The dual is smooth and concave, so Newton steps with a backtracking line search
/// finish those problems in a handful of iterations. The gauge `g_{m−1}` is held fixed.
fn newton_polish(
    cost: &[f64],
    a: &Marginal,
    b: &Marginal,
    eps: f64,
    f: &mut [f64],
    g: &mut [f64],
    tol: f64,
) {
    use nalgebra::{DMatrix, DVector};
    let (n, m) = (a.len(), b.len());
    let plan = |f: &[f64], g: &[f64]| -> Vec<f64> {
        (0..n * m)
            .map(|k| {
                let (i, j) = (k / m, k % m);
                (a.log_weights[i] + b.log_weights[j] + (f[i] + g[j] - cost[k]) / eps).exp()
            })
            .collect()
    };
    let dual = |f: &[f64], g: &[f64], pi: &[f64]| {
        dot(f, &a.weights) + dot(g, &b.weights) - eps * pi.iter().sum::<f64>()
    };
    let dim = n + m - 1;
    let mut pi = plan(f, g);
    let mut value = dual(f, g, &pi);
    for _ in 0..NEWTON_MAX_STEPS {
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        let mut worst = 0.0f64;
        for i in 0..n {
            let r: f64 = pi[i * m..(i + 1) * m].iter().sum();
            grad[i] = a.weights[i] - r;
            worst = worst.max(grad[i].abs());
            hess[(i, i)] = r / eps;
            for j in 0..m - 1 {
                hess[(i, n + j)] = pi[i * m + j] / eps;
                hess[(n + j, i)] = pi[i * m + j] / eps;
            }
        }
        for j in 0..m {
            let c: f64 = (0..n).map(|i| pi[i * m + j]).sum();
            worst = worst.max((b.weights[j] - c).abs());
            if j < m - 1 {
                grad[n + j] = b.weights[j] - c;
                hess[(n + j, n + j)] = c / eps;
            }
        }
        if worst <= 0.1 * tol {
            break;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match hess.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let nf: Vec<f64> = (0..n).map(|i| f[i] + t * step[i]).collect();
            let ng: Vec<f64> = (0..m)
                .map(|j| if j < m - 1 { g[j] + t * step[n + j] } else { g[j] })
                .collect();
            let npi = plan(&nf, &ng);
            let nv = dual(&nf, &ng, &npi);
            if nv.is_finite() && nv >= value + 1e-4 * t * slope {
                f.copy_from_slice(&nf);
                g.copy_from_slice(&ng);
                pi = npi;
                value = nv;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Debiased (or raw) divergence on a geometry whose self-problems use `geom_aa`, `geom_bb`.
pub fn divergence_with<G: Geometry>(
    geom_ab: &G,
    geom_aa: &G,
    geom_bb: &G,
    a: &Marginal,
    b: &Marginal,
    params: &SinkhornParams,
    warm: Option<&DivergenceWarm>,
) -> Result<Divergence> {
    let w = warm.cloned().unwrap_or_default();
    let cross_warm = match (&w.f, &w.g) {
        (Some(f), Some(g)) => Some((f.as_slice(), g.as_slice())),
        _ => None,
    };
    let cross = solve(geom_ab, a, b, params, cross_warm)?;
    if !params.debias {
        return Ok(Divergence {
            value: cross.cost,
            cross,
            self_source: None,
            self_target: None,
        });
    }
    let sa = solve_symmetric(geom_aa, a, params, w.p_source.as_deref())?;
    let sb = solve_symmetric(geom_bb, b, params, w.p_target.as_deref())?;
    Ok(Divergence {
        value: cross.cost - 0.5 * sa.cost - 0.5 * sb.cost,
        cross,
        self_source: Some(sa),
        self_target: Some(sb),
    })
}

fn same_grid(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.grid() != nu.grid() {
        return Err(Error::BackendMismatch(format!(
            "measures live on different grids ({}x{} vs {}x{})",
            mu.grid().width(),
            mu.grid().height(),
            nu.grid().width(),
            nu.grid().height()
        )));
    }
    Ok(())
}

/// Divergence between two grid measures with optional warm start.
pub fn grid_divergence(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    params: &SinkhornParams,
    warm: Option<&DivergenceWarm>,
) -> Result<Divergence> {
    same_grid(mu, nu)?;
    let g = *mu.grid();
    divergence_with(
        &g,
        &g,
        &g,
        &Marginal::new(mu.weights()),
        &Marginal::new(nu.weights()),
        params,
        warm,
    )
}

/// Entropic distance between two grid measures.
///
/// Returns `S_ε` when `params.debias` is set and `W_ε` otherwise, together with the state of the
/// cross problem.
pub fn sinkhorn_distance(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    params: &SinkhornParams,
) -> Result<(f64, SinkhornState)> {
    let d = grid_divergence(mu, nu, params, None)?;
    Ok((d.value, d.cross))
}

/// Centered dual potential of one side of a converged state: the gradient of `W_ε` with respect
/// to that side's weights, tangent to the simplex, and zero on floored cells.
pub fn sinkhorn_grad_weights(state: &SinkhornState, side: Side) -> Result<Vec<f64>> {
    if !state.converged {
        return Err(Error::NotConverged);
    }
    Ok(match side {
        Side::Source => center(&state.f, &state.floored_source),
        Side::Target => center(&state.g, &state.floored_target),
    })
}

fn point_geometry(x: &WeightedPoints, y: &WeightedPoints) -> DenseGeometry {
    let cost = (0..x.len())
        .flat_map(|i| (0..y.len()).map(move |j| (i, j)))
        .map(|(i, j)| x.dist2(i, y, j))
        .collect();
    DenseGeometry::new(x.len(), y.len(), cost, x.joint_diameter2(y))
}

/// Divergence between weighted point sets with a dense cost matrix.
pub fn point_divergence(
    mu: &WeightedPoints,
    nu: &WeightedPoints,
    params: &SinkhornParams,
) -> Result<Divergence> {
    if mu.dim() != nu.dim() {
        return Err(Error::BackendMismatch("point sets of different dimension".into()));
    }
    divergence_with(
        &point_geometry(mu, nu),
        &point_geometry(mu, mu),
        &point_geometry(nu, nu),
        &Marginal::new(mu.weights()),
        &Marginal::new(nu.weights()),
        params,
        None,
    )
}

/// Plan entries `π_ij` of a converged state on a dense geometry (row-major).
pub fn dense_plan(geom: &DenseGeometry, a: &Marginal, b: &Marginal, state: &SinkhornState) -> Vec<f64> {
    let m = b.len();
    (0..a.len() * m)
        .map(|k| {
            let (i, j) = (k / m, k % m);
            a.weights[i]
                * b.weights[j]
                * ((state.f[i] + state.g[j] - geom.cost()[k]) / state.eps).exp()
        })
        .collect()
}

/// Entropic plan between two point sets, for rounding to assignments.
pub fn point_plan(
    mu: &WeightedPoints,
    nu: &WeightedPoints,
    params: &SinkhornParams,
) -> Result<Vec<f64>> {
    let geom = point_geometry(mu, nu);
    let a = Marginal::new(mu.weights());
    let b = Marginal::new(nu.weights());
    let state = solve(&geom, &a, &b, params, None)?;
    Ok(dense_plan(&geom, &a, &b, &state))
}
