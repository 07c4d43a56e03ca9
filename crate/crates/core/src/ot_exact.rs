//! Exact optimal transport for tiny instances and the one-dimensional quantile formulas.
//!
//! These solvers are test oracles. [`wasserstein2_exact_small`] solves the transport linear
//! program by successive shortest augmenting paths on the dense bipartite residual graph
//! (Bellman–Ford distances, so negative reverse edges are handled directly). Every augmentation
//! moves mass along a cheapest path, which keeps the partial plan optimal for the shipped mass
//! and makes the final plan optimal.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::measures::WeightedPoints;

/// Largest combined support handled by the exact solver.
pub const ORACLE_LIMIT: usize = 64;

const MASS_EPS: f64 = 1e-15;

/// A transport plan between two weighted point sets.
#[derive(Debug, Clone, Serialize)]
pub struct Coupling {
    pub source: WeightedPoints,
    pub target: WeightedPoints,
    /// Row-major `n × m` plan.
    pub plan: Vec<f64>,
}

impl Coupling {
    pub fn rows(&self) -> usize {
        self.source.len()
    }

    pub fn cols(&self) -> usize {
        self.target.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols() + j]
    }

    /// Transport cost `Σ Π_ij |x_i − y_j|²`.
    pub fn cost(&self) -> f64 {
        let mut c = 0.0;
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                let p = self.get(i, j);
                if p > 0.0 {
                    c += p * self.source.dist2(i, &self.target, j);
                }
            }
        }
        c
    }

    /// Largest deviation of row and column sums from the marginal weights.
    pub fn marginal_error(&self) -> f64 {
        let mut err = 0.0f64;
        for i in 0..self.rows() {
            let s: f64 = (0..self.cols()).map(|j| self.get(i, j)).sum();
            err = err.max((s - self.source.weights()[i]).abs());
        }
        for j in 0..self.cols() {
            let s: f64 = (0..self.rows()).map(|i| self.get(i, j)).sum();
            err = err.max((s - self.target.weights()[j]).abs());
        }
        err
    }
}

/// Exact squared Wasserstein distance and an optimal plan for small weighted point sets.
pub fn wasserstein2_exact_small(
    mu: &WeightedPoints,
    nu: &WeightedPoints,
) -> Result<(f64, Coupling)> {
    if mu.dim() != nu.dim() {
        return Err(invalid("point sets live in different dimensions"));
    }
    let (n, m) = (mu.len(), nu.len());
    if n + m > ORACLE_LIMIT {
        return Err(Error::TooLarge {
            size: n + m,
            limit: ORACLE_LIMIT,
        });
    }
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| mu.dist2(i, nu, j))
        .collect();
    let plan = min_cost_transport(&cost, mu.weights(), nu.weights());
    let coupling = Coupling {
        source: mu.clone(),
        target: nu.clone(),
        plan,
    };
    Ok((coupling.cost(), coupling))
}

/// Successive shortest paths for the dense transportation problem.
///
/// Nodes `0..n` are sources and `n..n+m` sinks. Forward edges `i → j` have infinite capacity and
/// cost `C_ij`; reverse edges `j → i` carry the current flow with cost `−C_ij`.
fn min_cost_transport(cost: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let (n, m) = (a.len(), b.len());
    let mut plan = vec![0.0; n * m];
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    loop {
        let open_rows: Vec<usize> = (0..n).filter(|&i| supply[i] > MASS_EPS).collect();
        if open_rows.is_empty() || demand.iter().all(|&d| d <= MASS_EPS) {
            break;
        }
        // Multi-source Bellman–Ford over the residual graph.
        let mut dist = vec![f64::INFINITY; n + m];
        let mut pred = vec![usize::MAX; n + m];
        for &i in &open_rows {
            dist[i] = 0.0;
        }
        for _ in 0..(n + m) {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..m {
                        let nd = dist[i] + cost[i * m + j];
                        if nd < dist[n + j] - 1e-15 {
                            dist[n + j] = nd;
                            pred[n + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..m {
                if dist[n + j].is_finite() {
                    for i in 0..n {
                        if plan[i * m + j] > MASS_EPS {
                            let nd = dist[n + j] - cost[i * m + j];
                            if nd < dist[i] - 1e-15 {
                                dist[i] = nd;
                                pred[i] = n + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        // Cheapest reachable sink with remaining demand; ties go to the lowest index.
        let sink = (0..m)
            .filter(|&j| demand[j] > MASS_EPS && dist[n + j].is_finite())
            .min_by(|&x, &y| dist[n + x].total_cmp(&dist[n + y]))
            .expect("a feasible transport problem always has an augmenting path");
        // Walk back to the source to get the path and its bottleneck.
        // Only open source rows keep an unset predecessor, so the walk ends at one of them.
        let mut path = vec![n + sink];
        let mut node = n + sink;
        while pred[node] != usize::MAX {
            node = pred[node];
            path.push(node);
        }
        let start = *path.last().unwrap();
        let mut delta = supply[start].min(demand[sink]);
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from >= n {
                // Reverse edge sink `from` → source `to`.
                delta = delta.min(plan[to * m + (from - n)]);
            }
        }
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from < n {
                plan[from * m + (to - n)] += delta;
            } else {
                plan[to * m + (from - n)] -= delta;
            }
        }
        supply[start] -= delta;
        demand[sink] -= delta;
    }
    plan
}

/// Optimal assignment for a square cost matrix (Hungarian method with potentials).
///
/// Returns `perm` with row `i` assigned to column `perm[i]`. Ties are resolved towards the
/// lowest column index, so results are deterministic.
pub fn optimal_assignment(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(invalid(format!(
            "assignment needs an {n}x{n} cost matrix, got {} entries",
            cost.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based arrays as in the classical potential formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    Ok(perm)
}

fn require_line(mu: &WeightedPoints) -> Result<()> {
    if mu.dim() != 1 {
        return Err(invalid(format!(
            "one-dimensional measure expected, got d = {}",
            mu.dim()
        )));
    }
    Ok(())
}

fn sorted_atoms(mu: &WeightedPoints) -> Vec<(usize, f64, f64)> {
    let mut atoms: Vec<(usize, f64, f64)> = (0..mu.len())
        .map(|i| (i, mu.coords()[i], mu.weights()[i]))
        .filter(|a| a.2 > 0.0)
        .collect();
    atoms.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    atoms
}

/// Monotone (north-west corner on sorted atoms) plan between two 1D measures.
///
/// Entries are `(source index, target index, mass)` with original atom indices.
pub fn monotone_plan_1d(mu: &WeightedPoints, nu: &WeightedPoints) -> Result<Vec<(usize, usize, f64)>> {
    require_line(mu)?;
    require_line(nu)?;
    let xs = sorted_atoms(mu);
    let ys = sorted_atoms(nu);
    let mut plan = Vec::with_capacity(xs.len() + ys.len());
    let (mut p, mut q) = (0usize, 0usize);
    let (mut ra, mut rb) = (xs[0].2, ys[0].2);
    loop {
        let mass = ra.min(rb);
        if mass > 0.0 {
            plan.push((xs[p].0, ys[q].0, mass));
        }
        ra -= mass;
        rb -= mass;
        // Advance whichever side is exhausted; on a tie advance both.
        let adv_a = ra <= rb;
        let adv_b = rb <= ra;
        if adv_a {
            p += 1;
            if p == xs.len() {
                break;
            }
            ra = xs[p].2;
        }
        if adv_b {
            q += 1;
            if q == ys.len() {
                break;
            }
            rb = ys[q].2;
        }
    }
    Ok(plan)
}

/// Squared 1D Wasserstein distance by quantile matching.
pub fn wasserstein2_1d(mu: &WeightedPoints, nu: &WeightedPoints) -> Result<f64> {
    let plan = monotone_plan_1d(mu, nu)?;
    Ok(plan
        .iter()
        .map(|&(i, j, w)| w * (mu.coords()[i] - nu.coords()[j]).powi(2))
        .sum())
}

/// Monotone transport map sampled on the atoms of `mu` (in their original order).
///
/// Each atom is sent to the barycentric projection of the monotone plan, which is the Monge map
/// whenever the plan is induced by a map (for example equal-size uniform measures).
pub fn monge_map_1d(mu: &WeightedPoints, nu: &WeightedPoints) -> Result<Vec<f64>> {
    let plan = monotone_plan_1d(mu, nu)?;
    let mut num = vec![0.0; mu.len()];
    let mut den = vec![0.0; mu.len()];
    for &(i, j, w) in &plan {
        num[i] += w * nu.coords()[j];
        den[i] += w;
    }
    Ok((0..mu.len())
        .map(|i| {
            if den[i] > 0.0 {
                num[i] / den[i]
            } else {
                mu.coords()[i]
            }
        })
        .collect())
}

/// Left-continuous quantile function of a 1D measure: the smallest atom `x` with `F(x) ≥ u`.
pub fn quantile_1d(mu: &WeightedPoints, u: f64) -> Result<f64> {
    require_line(mu)?;
    let atoms = sorted_atoms(mu);
    let mut acc = 0.0;
    for &(_, x, w) in &atoms {
        acc += w;
        if acc >= u - 1e-15 {
            return Ok(x);
        }
    }
    Ok(atoms.last().map(|a| a.1).unwrap_or(f64::NAN))
}
