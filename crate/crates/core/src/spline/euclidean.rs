//! Discrete splines of real sequences: the Euclidean reduction of the measure-valued energies.
//!
//! For scalar knots `x_0..x_K` the regularized discrete energy is
//!
//! ```text
//! J(x) = 4K³ Σ_{k∈S} (x_k − (x_{k−1} + x_{k+1})/2)² + δK Σ_{k∈P} (x_{k+1} − x_k)²
//! ```
//!
//! with `S = 1..K−1`, `P = 0..K−1` for natural and Hermite ends and cyclic index sets for periodic
//! ends (`x_K ≡ x_0`). Minimizing `J` under pinned values is a positive semidefinite quadratic
//! program; the unconstrained problem is one linear solve, and a lower bound on the free values is
//! handled by accelerated projected gradient followed by an active-set polish.

use nalgebra::{DMatrix, DVector};

use super::BoundaryCondition;
use crate::error::{invalid, Error, Result};

/// Outcome of [`euclidean_discrete_spline`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpline {
    /// `x_0..x_K` (for periodic ends `x_K == x_0`).
    pub values: Vec<f64>,
    /// Free knots sitting on the lower bound.
    pub active: Vec<usize>,
    /// Projected-gradient iterations used (0 when no bound was active).
    pub iterations: usize,
}

fn n_vars(k: usize, bc: BoundaryCondition) -> usize {
    match bc {
        BoundaryCondition::Periodic => k,
        _ => k + 1,
    }
}

/// Linear forms `(weight, [(index, coefficient)])` whose weighted squares make up `J`.
fn terms(k: usize, bc: BoundaryCondition, delta: f64) -> Vec<(f64, Vec<(usize, f64)>)> {
    let kf = k as f64;
    let n = n_vars(k, bc);
    let mut out = Vec::new();
    let spline_idx: Vec<usize> = match bc {
        BoundaryCondition::Periodic => (0..k).collect(),
        _ => (1..k).collect(),
    };
    for j in spline_idx {
        let prev = (j + n - 1) % n;
        let next = (j + 1) % n;
        out.push((
            4.0 * kf.powi(3),
            vec![(j, 1.0), (prev, -0.5), (next, -0.5)],
        ));
    }
    if delta > 0.0 {
        for j in 0..k {
            out.push((delta * kf, vec![(j, -1.0), ((j + 1) % n, 1.0)]));
        }
    }
    out
}

/// `J(x)` for `x = (x_0..x_K)`.
pub fn euclidean_spline_objective(x: &[f64], bc: BoundaryCondition, delta: f64) -> f64 {
    let k = x.len() - 1;
    terms(k, bc, delta)
        .iter()
        .map(|(w, form)| w * form.iter().map(|(i, c)| c * x[*i]).sum::<f64>().powi(2))
        .sum()
}

fn hessian(k: usize, bc: BoundaryCondition, delta: f64) -> DMatrix<f64> {
    let n = n_vars(k, bc);
    let mut h = DMatrix::zeros(n, n);
    for (w, form) in terms(k, bc, delta) {
        for (i, ci) in &form {
            for (j, cj) in &form {
                h[(*i, *j)] += 2.0 * w * ci * cj;
            }
        }
    }
    h
}

/// Minimizes `J` over `x_0..x_K` with `pins` fixed and, optionally, free values bounded below.
///
/// In periodic mode a pin at index `K` is the same constraint as a pin at index 0.
pub fn euclidean_discrete_spline(
    k: usize,
    pins: &[(usize, f64)],
    bc: BoundaryCondition,
    delta: f64,
    lower: Option<f64>,
) -> Result<DiscreteSpline> {
    if k < 2 {
        return Err(invalid("K must be at least 2"));
    }
    if !(delta >= 0.0) {
        return Err(invalid("delta must be nonnegative"));
    }
    let n = n_vars(k, bc);
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for &(idx, v) in pins {
        if idx > k || !v.is_finite() {
            return Err(invalid(format!("bad pin at index {idx}")));
        }
        let slot = idx % n;
        if let Some(prev) = fixed[slot] {
            if (prev - v).abs() > 1e-12 * prev.abs().max(1.0) {
                return Err(invalid(format!("conflicting pins at index {idx}")));
            }
        }
        fixed[slot] = Some(v);
    }
    let free: Vec<usize> = (0..n).filter(|i| fixed[*i].is_none()).collect();
    let h = hessian(k, bc, delta);
    let mut x: Vec<f64> = fixed.iter().map(|v| v.unwrap_or(0.0)).collect();

    let finish = |x: Vec<f64>, active: Vec<usize>, iterations: usize| {
        let mut values = x;
        if bc == BoundaryCondition::Periodic {
            values.push(values[0]);
        }
        DiscreteSpline {
            values,
            active,
            iterations,
        }
    };
    if free.is_empty() {
        return Ok(finish(x, Vec::new(), 0));
    }

    // Solves the reduced system with the free set `free_now` and the others held at `x`.
    let solve_on = |free_now: &[usize], x: &[f64]| -> Result<Vec<f64>> {
        let m = free_now.len();
        let mut a = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        let is_free = {
            let mut f = vec![false; n];
            for &i in free_now {
                f[i] = true;
            }
            f
        };
        for (r, &i) in free_now.iter().enumerate() {
            for (c, &j) in free_now.iter().enumerate() {
                a[(r, c)] = h[(i, j)];
            }
            rhs[r] = -(0..n)
                .filter(|j| !is_free[*j])
                .map(|j| h[(i, j)] * x[j])
                .sum::<f64>();
        }
        let sol = a.cholesky().ok_or(Error::SingularSystem)?.solve(&rhs);
        let mut out = x.to_vec();
        for (r, &i) in free_now.iter().enumerate() {
            out[i] = sol[r];
        }
        Ok(out)
    };

    let unconstrained = solve_on(&free, &x)?;
    let Some(lb) = lower else {
        return Ok(finish(unconstrained, Vec::new(), 0));
    };
    if free.iter().all(|&i| unconstrained[i] >= lb) {
        return Ok(finish(unconstrained, Vec::new(), 0));
    }
    if fixed.iter().flatten().any(|v| *v < lb) {
        return Err(Error::InfeasibleConstraint(format!(
            "a pinned value lies below the bound {lb}"
        )));
    }

    // Accelerated projected gradient with the bound L ≥ ‖H‖ from ‖D₂ᵀD₂‖, ‖D₁ᵀD₁‖ ≤ 4.
    let kf = k as f64;
    let lip = 32.0 * kf.powi(3) + 8.0 * delta * kf;
    for &i in &free {
        x[i] = unconstrained[i].max(lb);
    }
    let grad = |x: &[f64]| -> Vec<f64> {
        let v = &h * DVector::from_column_slice(x);
        v.iter().copied().collect()
    };
    let mut y = x.clone();
    let mut tk = 1.0f64;
    let max_iter = 200_000;
    let mut iterations = 0;
    let mut prev_active: Vec<usize> = Vec::new();
    let mut stable = 0;
    while iterations < max_iter {
        iterations += 1;
        let g = grad(&y);
        let mut next = x.clone();
        for &i in &free {
            next[i] = (y[i] - g[i] / lip).max(lb);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let mom = (tk - 1.0) / t_next;
        // Gradient-based restart keeps the iteration monotone in practice.
        let restart: f64 = free.iter().map(|&i| (y[i] - next[i]) * (next[i] - x[i])).sum();
        for &i in &free {
            y[i] = if restart > 0.0 {
                next[i]
            } else {
                next[i] + mom * (next[i] - x[i])
            };
        }
        tk = if restart > 0.0 { 1.0 } else { t_next };
        x = next;
        let active: Vec<usize> = free.iter().copied().filter(|&i| x[i] <= lb).collect();
        if active == prev_active {
            stable += 1;
        } else {
            stable = 0;
            prev_active = active;
        }
        if stable >= 50 && iterations % 50 == 0 {
            if let Some(polished) = polish(&free, &prev_active, &x, lb, &h, &solve_on) {
                let active = prev_active.clone();
                return Ok(finish(polished, active, iterations));
            }
        }
    }
    Ok(finish(x, prev_active, iterations))
}

/// Active-set refinement: fix `active` at the bound, solve for the rest and check the KKT signs.
fn polish(
    free: &[usize],
    active: &[usize],
    x: &[f64],
    lb: f64,
    h: &DMatrix<f64>,
    solve_on: &dyn Fn(&[usize], &[f64]) -> Result<Vec<f64>>,
) -> Option<Vec<f64>> {
    let mut base = x.to_vec();
    for &i in active {
        base[i] = lb;
    }
    let inner: Vec<usize> = free.iter().copied().filter(|i| !active.contains(i)).collect();
    let cand = if inner.is_empty() {
        base
    } else {
        solve_on(&inner, &base).ok()?
    };
    if inner.iter().any(|&i| cand[i] < lb) {
        return None;
    }
    let g = h * DVector::from_column_slice(&cand);
    let scale = g.amax().max(1.0);
    if active.iter().any(|&i| g[i] < -1e-9 * scale) {
        return None;
    }
    Some(cand)
}

/// Per-coordinate discrete spline of vector knots (no bounds).
pub fn euclidean_discrete_spline_points(
    k: usize,
    pins: &[(usize, Vec<f64>)],
    bc: BoundaryCondition,
    delta: f64,
) -> Result<Vec<Vec<f64>>> {
    let dim = pins.first().map(|p| p.1.len()).unwrap_or(0);
    if dim == 0 || pins.iter().any(|p| p.1.len() != dim) {
        return Err(invalid("pins need equal non-zero dimension"));
    }
    let per_coord = (0..dim)
        .map(|d| {
            let p: Vec<(usize, f64)> = pins.iter().map(|(i, v)| (*i, v[d])).collect();
            euclidean_discrete_spline(k, &p, bc, delta, None).map(|s| s.values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..=k)
        .map(|j| per_coord.iter().map(|c| c[j]).collect())
        .collect())
}
