//! Grid solver: block updates of frame weights under entropic transport.
//!
//! Every surrogate is a weighted sum of cross terms `W_ε(ν_a, ν_b)` over nodes plus self terms
//! `W_ε(ν_i, ν_i)`, where the nodes are the frames and, for the frozen-barycenter surrogate, the
//! frozen barycenters. A debiased pair `S_ε(a, b)` with weight `w` contributes `w` to the cross
//! term and `−w/2` to both self terms. The gradient of a cross term with respect to the weights
//! of one side is that side's dual potential and the gradient of a self term is twice its
//! symmetric potential, so a block gradient is assembled from the cached potentials of every
//! term touching the block. Changing a block re-solves exactly those terms, warm-started.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use super::{sweep_order, Layout, OptimizerConfig, OptimizerTrace, StepRule, StopReason, Surrogate,
    TraceRow, UpdateRule, simplex_project};
use crate::error::{invalid, Error, Result};
use crate::measures::{DiscreteMeasure, Grid2};
use crate::sinkhorn::{
    entropic_barycenter, solve, solve_symmetric, Marginal, SinkhornParams, SinkhornState,
    SymmetricState,
};
use crate::spline::{
    energy_report, EntropicGridBackend, SplineProblem, SplineSolution, SplineTermKind,
};

/// `w · W_ε(ν_a, ν_b)`.
#[derive(Debug, Clone, Copy)]
struct Term {
    a: usize,
    b: usize,
    w: f64,
}

/// Total-variation tolerance of the barycenters that seed the free frames; they only serve as a
/// starting point.
const INIT_BARYCENTER_TOL: f64 = 1e-5;
/// Growth of a block step after an accepted step.
const STEP_GROWTH: f64 = 1.25;
/// Largest block step relative to its natural size.
const MAX_STEP_GROWTH: f64 = 1e3;

struct Engine {
    grid: Grid2,
    params: SinkhornParams,
    terms: Vec<Term>,
    node_terms: Vec<Vec<usize>>,
    self_coef: Vec<f64>,
    weights: Vec<Vec<f64>>,
    marg: Vec<Marginal>,
    cross: Vec<SinkhornState>,
    selfs: Vec<Option<SymmetricState>>,
}

/// Result of re-solving every term touching one node.
struct Trial {
    weights: Vec<f64>,
    marg: Marginal,
    cross: Vec<(usize, SinkhornState)>,
    selfs: Option<SymmetricState>,
    value: f64,
}

enum Job {
    Cross(usize),
    SelfTerm,
}

enum Solved {
    Cross(usize, SinkhornState),
    SelfTerm(SymmetricState),
}

impl Engine {
    fn new(grid: Grid2, params: SinkhornParams, raw_terms: &[Term], weights: Vec<Vec<f64>>) -> Self {
        let nodes = weights.len();
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for t in raw_terms {
            if t.a != t.b && t.w != 0.0 {
                *merged.entry((t.a.min(t.b), t.a.max(t.b))).or_insert(0.0) += t.w;
            }
        }
        let terms: Vec<Term> = merged
            .into_iter()
            .filter(|(_, w)| *w != 0.0)
            .map(|((a, b), w)| Term { a, b, w })
            .collect();
        let mut node_terms = vec![Vec::new(); nodes];
        let mut self_coef = vec![0.0; nodes];
        for (idx, t) in terms.iter().enumerate() {
            node_terms[t.a].push(idx);
            node_terms[t.b].push(idx);
            if params.debias {
                self_coef[t.a] -= 0.5 * t.w;
                self_coef[t.b] -= 0.5 * t.w;
            }
        }
        let marg = weights.iter().map(|w| Marginal::new(w)).collect();
        Self {
            grid,
            params,
            terms,
            node_terms,
            self_coef,
            weights,
            marg,
            cross: Vec::new(),
            selfs: Vec::new(),
        }
    }

    fn solve_cross(&self, t: usize, ma: &Marginal, mb: &Marginal, warm: bool) -> Result<SinkhornState> {
        let w = if warm {
            self.cross
                .get(t)
                .map(|s| (s.f.as_slice(), s.g.as_slice()))
        } else {
            None
        };
        solve(&self.grid, ma, mb, &self.params, w)
    }

    fn solve_self(&self, i: usize, m: &Marginal, warm: bool) -> Result<SymmetricState> {
        let w = if warm {
            self.selfs.get(i).and_then(|s| s.as_ref()).map(|s| s.p.as_slice())
        } else {
            None
        };
        solve_symmetric(&self.grid, m, &self.params, w)
    }

    /// Solves every term, warm-started from the cached potentials when `warm` is set.
    fn solve_all(&mut self, warm: bool) -> Result<()> {
        let cross = (0..self.terms.len())
            .into_par_iter()
            .map(|t| {
                let term = self.terms[t];
                self.solve_cross(t, &self.marg[term.a], &self.marg[term.b], warm)
            })
            .collect::<Result<Vec<_>>>()?;
        let selfs = (0..self.weights.len())
            .into_par_iter()
            .map(|i| {
                if self.self_coef[i] == 0.0 {
                    Ok(None)
                } else {
                    self.solve_self(i, &self.marg[i], warm).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.cross = cross;
        self.selfs = selfs;
        Ok(())
    }

    fn value(&self) -> f64 {
        let c: f64 = self
            .terms
            .iter()
            .zip(&self.cross)
            .map(|(t, s)| t.w * s.cost)
            .sum();
        let s: f64 = self
            .selfs
            .iter()
            .zip(&self.self_coef)
            .filter_map(|(s, c)| s.as_ref().map(|s| c * s.cost))
            .sum();
        c + s
    }

    /// Sum of the terms involving node `i`.
    fn local_value(&self, i: usize) -> f64 {
        let c: f64 = self.node_terms[i]
            .iter()
            .map(|&t| self.terms[t].w * self.cross[t].cost)
            .sum();
        c + self.selfs[i]
            .as_ref()
            .map_or(0.0, |s| self.self_coef[i] * s.cost)
    }

    /// Total absolute weight of the terms touching node `i`, self terms counted twice.
    fn curvature(&self, i: usize) -> f64 {
        let c: f64 = self.node_terms[i].iter().map(|&t| self.terms[t].w.abs()).sum();
        c + 2.0 * self.self_coef[i].abs()
    }

    /// Gradient of the surrogate with respect to the (unnormalised) weights of node `i`.
    fn gradient(&self, i: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.grid.len()];
        for &t in &self.node_terms[i] {
            let term = self.terms[t];
            let pot = if term.a == i { &self.cross[t].f } else { &self.cross[t].g };
            for (gi, p) in g.iter_mut().zip(pot) {
                *gi += term.w * p;
            }
        }
        if let Some(s) = &self.selfs[i] {
            let c = 2.0 * self.self_coef[i];
            for (gi, p) in g.iter_mut().zip(&s.p) {
                *gi += c * p;
            }
        }
        g
    }

    fn trial(&self, i: usize, weights: Vec<f64>) -> Result<Trial> {
        let marg = Marginal::new(&weights);
        let mut jobs: Vec<Job> = self.node_terms[i].iter().map(|&t| Job::Cross(t)).collect();
        if self.self_coef[i] != 0.0 {
            jobs.push(Job::SelfTerm);
        }
        let solved = jobs
            .into_par_iter()
            .map(|job| match job {
                Job::Cross(t) => {
                    let term = self.terms[t];
                    let (ma, mb) = if term.a == i {
                        (&marg, &self.marg[term.b])
                    } else {
                        (&self.marg[term.a], &marg)
                    };
                    self.solve_cross(t, ma, mb, true).map(|s| Solved::Cross(t, s))
                }
                Job::SelfTerm => self.solve_self(i, &marg, true).map(Solved::SelfTerm),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cross = Vec::new();
        let mut selfs = None;
        let mut value = 0.0;
        for s in solved {
            match s {
                Solved::Cross(t, st) => {
                    value += self.terms[t].w * st.cost;
                    cross.push((t, st));
                }
                Solved::SelfTerm(st) => {
                    value += self.self_coef[i] * st.cost;
                    selfs = Some(st);
                }
            }
        }
        Ok(Trial {
            weights,
            marg,
            cross,
            selfs,
            value,
        })
    }

    fn commit(&mut self, i: usize, trial: Trial) {
        self.weights[i] = trial.weights;
        self.marg[i] = trial.marg;
        for (t, st) in trial.cross {
            self.cross[t] = st;
        }
        if trial.selfs.is_some() {
            self.selfs[i] = trial.selfs;
        }
    }

    /// Replaces a fixed node's weights and re-solves its terms.
    fn reset_node(&mut self, i: usize, weights: Vec<f64>) -> Result<()> {
        let trial = self.trial(i, weights)?;
        self.commit(i, trial);
        Ok(())
    }
}

fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|x| x.max(f64::MIN_POSITIVE).ln()).collect()
}

fn softmax(lw: &[f64]) -> Vec<f64> {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = lw.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Per-node step state.
#[derive(Debug, Clone)]
struct BlockState {
    natural: f64,
    step: f64,
    previous: Vec<f64>,
}

/// Candidate weights for node `i` at step `tau` with inertia `beta`.
fn candidate(update: UpdateRule, w: &[f64], prev: &[f64], g: &[f64], tau: f64, beta: f64) -> Vec<f64> {
    match update {
        UpdateRule::Mirror => {
            let lw = log_weights(w);
            let lp = log_weights(prev);
            let z: Vec<f64> = lw
                .iter()
                .zip(&lp)
                .zip(g)
                .map(|((x, p), gi)| x - tau * gi + beta * (x - p))
                .collect();
            softmax(&z)
        }
        UpdateRule::Projected => {
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            let z: Vec<f64> = w
                .iter()
                .zip(prev)
                .zip(g)
                .map(|((x, p), gi)| x - tau * (gi - mean) + beta * (x - p))
                .collect();
            simplex_project(&z)
        }
    }
}

/// Natural step of a block whose terms have total absolute weight `curvature`.
///
/// In log-weight coordinates the Hessian of `W_ε` is bounded by a multiple of `ε`, so the
/// entropic mirror step scales like `1/(curvature · ε)`. The Euclidean step additionally scales
/// with the largest weight, the local inverse metric of the entropy.
fn natural_step(update: UpdateRule, w: &[f64], curvature: f64, eps: f64) -> f64 {
    let base = 1.0 / (curvature * eps).max(f64::MIN_POSITIVE);
    match update {
        UpdateRule::Mirror => base,
        UpdateRule::Projected => base * w.iter().cloned().fold(0.0, f64::max),
    }
}

fn build_terms(layout: &Layout, surrogate: Surrogate, delta: f64) -> (Vec<Term>, Vec<(usize, usize, usize)>) {
    let kf = layout.k as f64;
    let c = 4.0 * kf.powi(3);
    let mut terms = Vec::new();
    let steps = layout.steps();
    let mut frozen = Vec::new();
    match surrogate {
        Surrogate::Polarization => {
            for &(p, m, n) in &steps {
                terms.push(Term { a: p, b: m, w: 0.5 * c });
                terms.push(Term { a: m, b: n, w: 0.5 * c });
                terms.push(Term { a: p, b: n, w: -0.25 * c });
            }
        }
        Surrogate::FrozenBarycenter => {
            for (j, &(p, m, n)) in steps.iter().enumerate() {
                let rho = layout.nodes() + j;
                terms.push(Term { a: m, b: rho, w: c });
                frozen.push((rho, p, n));
            }
        }
    }
    if delta > 0.0 {
        for (a, b) in layout.path_pairs() {
            terms.push(Term { a, b, w: delta * kf });
        }
    }
    (terms, frozen)
}

fn params_at(config: &OptimizerConfig, eps: f64) -> SinkhornParams {
    SinkhornParams {
        eps,
        tol: config.sinkhorn_tol,
        max_iter: config.sinkhorn_max_iter,
        debias: config.debias,
        eps_scaling: true,
        record_history: false,
    }
}

fn frozen_barycenters(
    engine: &Engine,
    frozen: &[(usize, usize, usize)],
) -> Result<Vec<Vec<f64>>> {
    frozen
        .par_iter()
        .map(|&(_, p, n)| {
            let a = DiscreteMeasure::from_weights(engine.grid, engine.weights[p].clone())?;
            let b = DiscreteMeasure::from_weights(engine.grid, engine.weights[n].clone())?;
            Ok(entropic_barycenter(&a, &b, 0.5, &engine.params)?.result.into_weights())
        })
        .collect()
}

fn assemble(
    problem: &SplineProblem<DiscreteMeasure>,
    layout: &Layout,
    engine: &Engine,
) -> Result<Vec<DiscreteMeasure>> {
    (0..=problem.k)
        .map(|f| match problem.pinned(f) {
            Some(key) => Ok(key.clone()),
            None => DiscreteMeasure::from_weights(engine.grid, engine.weights[layout.node(f)].clone()),
        })
        .collect()
}

/// Minimises the grid spline objective over the weights of the free frames.
///
/// Free frames start at the piecewise debiased barycenters between adjacent keyframes, computed
/// at the first ε of the ladder. Each ε stage sweeps the free blocks at most `max_outer` times
/// and ends early once a sweep lowers the surrogate by less than `stop_tol` relatively. The
/// returned energy report is the barycentric objective `𝐅_ε^{δ,K}` of the final tuple at the final
/// ε, computed from fresh barycenters.
pub fn solve_grid_spline(
    problem: &SplineProblem<DiscreteMeasure>,
    config: &OptimizerConfig,
) -> Result<(SplineSolution<DiscreteMeasure>, OptimizerTrace)> {
    solve_grid_spline_observed(problem, config, &mut |_| {})
}

/// [`solve_grid_spline`] that hands every trace row to `observer` as soon as its sweep ends.
pub fn solve_grid_spline_observed(
    problem: &SplineProblem<DiscreteMeasure>,
    config: &OptimizerConfig,
    observer: &mut dyn FnMut(&TraceRow),
) -> Result<(SplineSolution<DiscreteMeasure>, OptimizerTrace)> {
    config.validate()?;
    let grid = *problem.keyframes[0].grid();
    if problem.keyframes.iter().any(|m| *m.grid() != grid) {
        return Err(Error::BackendMismatch("keyframes live on different grids".into()));
    }
    let start = Instant::now();
    let layout = Layout::new(problem);
    let ladder = config.ladder();
    let mut params = params_at(config, ladder[0]);

    let init_params = SinkhornParams {
        tol: config.sinkhorn_tol.max(INIT_BARYCENTER_TOL),
        ..params
    };
    let brackets = layout.brackets();
    let key_of = |node: usize| &problem.keyframes[layout.pinned[node].expect("pinned node")];
    let init: Vec<(usize, Vec<f64>)> = brackets
        .par_iter()
        .map(|&(n, a, b, t)| {
            let w = if t == 0.0 {
                key_of(a).weights().to_vec()
            } else {
                entropic_barycenter(key_of(a), key_of(b), t, &init_params)?
                    .result
                    .into_weights()
            };
            Ok((n, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut weights: Vec<Vec<f64>> = (0..layout.nodes())
        .map(|n| match layout.pinned[n] {
            Some(key) => problem.keyframes[key].weights().to_vec(),
            None => Vec::new(),
        })
        .collect();
    for (n, w) in init {
        weights[n] = w;
    }

    let (terms, frozen) = build_terms(&layout, config.surrogate, problem.delta);
    weights.extend(frozen.iter().map(|_| vec![1.0 / grid.len() as f64; grid.len()]));
    let mut engine = Engine::new(grid, params, &terms, weights);
    if !frozen.is_empty() {
        for (&(rho, _, _), w) in frozen.iter().zip(frozen_barycenters(&engine, &frozen)?) {
            engine.weights[rho] = w;
            engine.marg[rho] = Marginal::new(&engine.weights[rho]);
        }
    }
    engine.solve_all(false)?;

    let free = layout.free();
    let mut trace = OptimizerTrace {
        initial_objective: engine.value(),
        rows: Vec::new(),
        stop: StopReason::NothingToDo,
        wall_time: 0.0,
    };
    let mut blocks: Vec<Option<BlockState>> = vec![None; engine.weights.len()];
    let mut iteration = 0;
    let mut ever_accepted = false;

    if !free.is_empty() {
        'stages: for (stage, &eps) in ladder.iter().enumerate() {
            if stage > 0 {
                params = params_at(config, eps);
                engine.params = params;
                if !frozen.is_empty() {
                    for (&(rho, _, _), w) in frozen.iter().zip(frozen_barycenters(&engine, &frozen)?) {
                        engine.weights[rho] = w;
                        engine.marg[rho] = Marginal::new(&engine.weights[rho]);
                    }
                }
                engine.solve_all(true)?;
                for &i in &free {
                    if let Some(b) = blocks[i].as_mut() {
                        b.natural = natural_step(config.update, &engine.weights[i], engine.curvature(i), eps);
                        b.step = b.natural * config.step;
                    }
                }
            }
            for &i in &free {
                if let Some(b) = blocks[i].as_mut() {
                    b.previous = engine.weights[i].clone();
                }
            }
            let last_stage = stage + 1 == ladder.len();
            let mut stage_iter = 0;
            loop {
                iteration += 1;
                stage_iter += 1;
                let before = engine.value();
                let mut accepted = 0;
                for i in sweep_order(&free, config.seed, iteration) {
                    let g = engine.gradient(i);
                    let w = engine.weights[i].clone();
                    let block = blocks[i].get_or_insert_with(|| {
                        let natural = natural_step(config.update, &w, engine.curvature(i), eps);
                        BlockState {
                            natural,
                            step: natural * config.step,
                            previous: w.clone(),
                        }
                    });
                    let old = engine.local_value(i);
                    let mut beta = config.beta;
                    let mut tau = block.step;
                    let mut taken = None;
                    let attempts = match config.step_rule {
                        StepRule::Backtracking => config.max_halvings + 1,
                        StepRule::Fixed => 2,
                    };
                    for _ in 0..attempts {
                        let cand = candidate(config.update, &w, &block.previous, &g, tau, beta);
                        let tr = engine.trial(i, cand);
                        if let Ok(trial) = tr {
                            if trial.value <= old {
                                taken = Some(trial);
                                break;
                            }
                        }
                        if beta > 0.0 {
                            beta = 0.0;
                        } else if config.step_rule == StepRule::Backtracking {
                            tau *= 0.5;
                        } else {
                            break;
                        }
                    }
                    match taken {
                        Some(trial) => {
                            accepted += 1;
                            block.previous = w;
                            block.step = match config.step_rule {
                                StepRule::Backtracking => {
                                    (STEP_GROWTH * tau).min(MAX_STEP_GROWTH * block.natural)
                                }
                                StepRule::Fixed => tau,
                            };
                            engine.commit(i, trial);
                        }
                        None => {
                            block.previous = w;
                            block.step = tau;
                        }
                    }
                }
                let after = engine.value();
                ever_accepted |= accepted > 0;
                if !ever_accepted {
                    return Err(Error::NoProgress { iteration });
                }
                let refresh = iteration % config.refresh_every == 0;
                let mut true_objective = None;
                if refresh {
                    if frozen.is_empty() {
                        let tuple = assemble(problem, &layout, &engine)?;
                        let backend = EntropicGridBackend { params };
                        true_objective = Some(
                            energy_report(
                                &tuple,
                                &backend,
                                SplineTermKind::Barycenter,
                                problem.bc,
                                problem.delta,
                            )?
                            .total,
                        );
                    } else {
                        for (&(rho, _, _), w) in
                            frozen.iter().zip(frozen_barycenters(&engine, &frozen)?)
                        {
                            engine.reset_node(rho, w)?;
                        }
                        true_objective = Some(engine.value());
                    }
                }
                let steps = (0..layout.nodes())
                    .map(|n| blocks[n].as_ref().map_or(0.0, |b| b.step))
                    .collect();
                let row = TraceRow {
                    iteration,
                    stage,
                    eps: Some(eps),
                    objective: after,
                    steps,
                    accepted,
                    refreshed: refresh,
                    true_objective,
                    elapsed: start.elapsed().as_secs_f64(),
                };
                observer(&row);
                trace.rows.push(row);
                let rel = (before - after) / before.abs().max(f64::MIN_POSITIVE);
                if accepted == 0 {
                    trace.stop = StopReason::Stalled;
                    if last_stage {
                        break 'stages;
                    }
                    break;
                }
                if rel < config.stop_tol {
                    trace.stop = StopReason::Converged;
                    break;
                }
                if stage_iter >= config.max_outer {
                    trace.stop = StopReason::MaxOuter;
                    break;
                }
            }
        }
    }

    let measures = assemble(problem, &layout, &engine)?;
    let backend = EntropicGridBackend {
        params: params_at(config, *ladder.last().expect("non-empty ladder")),
    };
    let energy = energy_report(
        &measures,
        &backend,
        SplineTermKind::Barycenter,
        problem.bc,
        problem.delta,
    )?;
    trace.wall_time = start.elapsed().as_secs_f64();
    if measures.len() != problem.k + 1 {
        return Err(invalid("internal error: wrong number of frames"));
    }
    Ok((SplineSolution { measures, energy }, trace))
}
