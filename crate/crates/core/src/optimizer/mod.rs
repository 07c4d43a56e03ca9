//! Inertial block minimisation of the discrete spline objective.
//!
//! Both solvers treat every free frame as one block and sweep the blocks in a seeded random
//! order. A block step is a linearised (proximal) step from an inertially extrapolated point,
//! accepted only when the tracked surrogate objective does not increase. A rejected step first
//! drops the inertia and then halves the step size, which is the restart safeguard of iPALM.
//!
//! - [`solve_grid_spline`] moves the cell weights of grid frames with entropic transport.
//! - [`solve_pointcloud_spline`] moves the atoms of equal-weight point clouds with frozen
//!   optimal assignments.

mod cloud;
mod grid;

pub use cloud::{solve_pointcloud_spline, solve_pointcloud_spline_observed};
pub use grid::{solve_grid_spline, solve_grid_spline_observed};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spline::{BoundaryCondition, SplineProblem};

/// Step-size policy of the block updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Always try `step` times the block's natural step; a step that increases the objective
    /// is discarded.
    Fixed,
    /// Halve the step until the objective does not increase, then let it grow again.
    #[default]
    Backtracking,
}

/// Objective minimised by the grid solver between refreshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    /// `4K³ Σ_k [½S(μ_{k−1},μ_k) + ½S(μ_k,μ_{k+1}) − ¼S(μ_{k−1},μ_{k+1})] + δK Σ_k S(μ_k,μ_{k+1})`.
    #[default]
    Polarization,
    /// `4K³ Σ_k S(μ_k, ρ_k) + δK Σ_k S(μ_k,μ_{k+1})` with `ρ_k = Bar_ε(μ_{k−1},μ_{k+1})` held fixed
    /// between refreshes.
    FrozenBarycenter,
}

/// Geometry of the grid weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Multiplicative (entropic mirror) step `μ ← μ·exp(−τ∇)/Z`.
    #[default]
    Mirror,
    /// Euclidean gradient step followed by [`simplex_project`].
    Projected,
}

/// Algorithmic knobs of both solvers, read from the `optimizer` block of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Outer sweeps per ε stage.
    pub max_outer: usize,
    /// Final entropic regularization of the grid solver.
    pub eps: f64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    /// Inertia `β ∈ [0, 1)`.
    pub beta: f64,
    /// Outer sweeps between refreshes of barycenters (grid) or assignments (point clouds).
    pub refresh_every: usize,
    pub step_rule: StepRule,
    /// Multiplier of each block's natural step size.
    pub step: f64,
    /// A stage stops once one sweep lowers the surrogate by less than this relative amount.
    pub stop_tol: f64,
    /// Seed of the block order.
    pub seed: u64,
    /// Use debiased divergences.
    pub debias: bool,
    pub surrogate: Surrogate,
    pub update: UpdateRule,
    /// Decreasing ε values ending at `eps`; empty means a single stage at `eps`.
    pub eps_ladder: Vec<f64>,
    /// Halvings per block before the block is left unchanged for the sweep.
    pub max_halvings: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_outer: 200,
            eps: 1e-3,
            sinkhorn_tol: 1e-6,
            sinkhorn_max_iter: 20_000,
            beta: 0.8,
            refresh_every: 10,
            step_rule: StepRule::Backtracking,
            step: 1.0,
            stop_tol: 1e-6,
            seed: 0,
            debias: true,
            surrogate: Surrogate::Polarization,
            update: UpdateRule::Mirror,
            eps_ladder: Vec::new(),
            max_halvings: 30,
        }
    }
}

impl OptimizerConfig {
    /// Checks the invariants; the message starts with the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(invalid(format!("{key}: {msg}")));
        if self.max_outer == 0 {
            return bad("max_outer", "must be at least 1".into());
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return bad("eps", format!("must be positive, got {}", self.eps));
        }
        if !(self.sinkhorn_tol > 0.0) {
            return bad("sinkhorn_tol", format!("must be positive, got {}", self.sinkhorn_tol));
        }
        if self.sinkhorn_max_iter == 0 {
            return bad("sinkhorn_max_iter", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad("beta", format!("must lie in [0, 1), got {}", self.beta));
        }
        if self.refresh_every == 0 {
            return bad("refresh_every", "must be at least 1".into());
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return bad("step", format!("must be positive, got {}", self.step));
        }
        if !(self.stop_tol >= 0.0) {
            return bad("stop_tol", format!("must be nonnegative, got {}", self.stop_tol));
        }
        if !self.eps_ladder.is_empty() {
            if self.eps_ladder.iter().any(|e| !(*e > 0.0)) {
                return bad("eps_ladder", "values must be positive".into());
            }
            if self.eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
                return bad("eps_ladder", "values must be strictly decreasing".into());
            }
            if *self.eps_ladder.last().expect("non-empty") != self.eps {
                return bad(
                    "eps_ladder",
                    format!("must end at eps = {}", self.eps),
                );
            }
        }
        Ok(())
    }

    /// The ε stages of the grid solver.
    pub fn ladder(&self) -> Vec<f64> {
        if self.eps_ladder.is_empty() {
            vec![self.eps]
        } else {
            self.eps_ladder.clone()
        }
    }
}

/// One outer sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    /// Global sweep counter, starting at 1.
    pub iteration: usize,
    /// Index into the ε ladder (always 0 for point clouds).
    pub stage: usize,
    pub eps: Option<f64>,
    /// Surrogate objective after the sweep.
    pub objective: f64,
    /// Step size of every node after the sweep, zero for pinned nodes.
    pub steps: Vec<f64>,
    /// Blocks whose step was accepted in this sweep.
    pub accepted: usize,
    /// Whether barycenters or assignments were refreshed after this sweep. The surrogate may
    /// jump at a refresh.
    pub refreshed: bool,
    /// True objective evaluated at the refresh, when available.
    pub true_objective: Option<f64>,
    /// Seconds since the solver started.
    pub elapsed: f64,
}

/// Why the solver returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The relative decrease fell below `stop_tol` in the last stage.
    Converged,
    MaxOuter,
    /// Every block failed to decrease the objective in one sweep.
    Stalled,
    /// No free frames.
    NothingToDo,
}

/// Append-only record of a solve.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizerTrace {
    /// Surrogate objective of the initial tuple.
    pub initial_objective: f64,
    pub rows: Vec<TraceRow>,
    pub stop: StopReason,
    pub wall_time: f64,
}

impl OptimizerTrace {
    /// Whether the surrogate never increased between refreshes and stage changes, up to the
    /// roundoff of re-summing the terms (`10⁻¹²` relative).
    pub fn is_monotone(&self) -> bool {
        let mut prev = self.initial_objective;
        let mut stage = 0;
        let mut fresh = true;
        for row in &self.rows {
            if row.stage != stage {
                stage = row.stage;
                fresh = true;
            }
            if !fresh && row.objective > prev + 1e-12 * prev.abs() {
                return false;
            }
            prev = row.objective;
            fresh = row.refreshed;
        }
        true
    }

    /// The trace without timings, for reproducibility checks.
    pub fn iterates(&self) -> Vec<(usize, usize, f64, Vec<f64>, usize, bool)> {
        self.rows
            .iter()
            .map(|r| {
                (
                    r.iteration,
                    r.stage,
                    r.objective,
                    r.steps.clone(),
                    r.accepted,
                    r.refreshed,
                )
            })
            .collect()
    }
}

/// Euclidean projection onto the probability simplex `{ω ≥ 0, Σω = 1}` by sorting.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Frame-to-node layout shared by both solvers. Periodic problems identify frame `K` with
/// frame 0, so they have `K` nodes; the others have `K + 1`.
#[derive(Debug, Clone)]
struct Layout {
    k: usize,
    periodic: bool,
    /// Keyframe index pinned at each node.
    pinned: Vec<Option<usize>>,
}

impl Layout {
    fn new<M: Clone + PartialEq>(p: &SplineProblem<M>) -> Self {
        let periodic = p.bc == BoundaryCondition::Periodic;
        let nodes = if periodic { p.k } else { p.k + 1 };
        let mut pinned = vec![None; nodes];
        for (frame, key) in p.pins() {
            pinned[if periodic { frame % p.k } else { frame }] = Some(key);
        }
        Self {
            k: p.k,
            periodic,
            pinned,
        }
    }

    fn nodes(&self) -> usize {
        self.pinned.len()
    }

    fn node(&self, frame: usize) -> usize {
        if self.periodic {
            frame % self.k
        } else {
            frame
        }
    }

    fn free(&self) -> Vec<usize> {
        (0..self.nodes()).filter(|&n| self.pinned[n].is_none()).collect()
    }

    /// Interior steps `(prev, centre, next)` as node indices.
    fn steps(&self) -> Vec<(usize, usize, usize)> {
        let k = self.k;
        if self.periodic {
            (0..k).map(|j| ((j + k - 1) % k, j, (j + 1) % k)).collect()
        } else {
            (1..k).map(|j| (j - 1, j, j + 1)).collect()
        }
    }

    /// Consecutive pairs `(k, k+1)` as node indices.
    fn path_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.k).map(|j| (self.node(j), self.node(j + 1))).collect()
    }

    /// For every free node, the pinned nodes bracketing it and its interpolation parameter.
    /// Nodes outside the pinned range copy the nearest pin (`t` = 0).
    fn brackets(&self) -> Vec<(usize, usize, usize, f64)> {
        let pins: Vec<usize> = (0..self.nodes()).filter(|&n| self.pinned[n].is_some()).collect();
        let mut out = Vec::new();
        for n in self.free() {
            let before = pins.iter().rev().find(|&&p| p < n).copied();
            let after = pins.iter().find(|&&p| p > n).copied();
            let entry = match (before, after) {
                (Some(a), Some(b)) => (n, a, b, (n - a) as f64 / (b - a) as f64),
                (Some(a), None) if self.periodic => {
                    let b = pins[0] + self.k;
                    (n, a, pins[0], (n - a) as f64 / (b - a) as f64)
                }
                (None, Some(b)) if self.periodic => {
                    let a = *pins.last().expect("at least one pin");
                    let (af, nf) = (a as f64 - self.k as f64, n as f64);
                    (n, a, b, (nf - af) / (b as f64 - af))
                }
                (Some(a), None) => (n, a, a, 0.0),
                (None, Some(b)) => (n, b, b, 0.0),
                (None, None) => unreachable!("problems have at least two keyframes"),
            };
            out.push(entry);
        }
        out
    }
}

/// Deterministic block order for one sweep.
fn sweep_order(free: &[usize], seed: u64, iteration: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9));
    let mut order = free.to_vec();
    order.shuffle(&mut rng);
    order
}
