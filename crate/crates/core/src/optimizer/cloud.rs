//! Point-cloud solver: block updates of atom locations under frozen optimal assignments.
//!
//! With every assignment fixed, each energy term is a mean of squared residuals that are linear
//! in the atom locations:
//!
//! ```text
//! spline step (p, c, n):  r_i = x_c[i] − ½ x_p[τ(i)] − ½ x_n[σ(τ(i))]     weight 4K³
//! path pair (a, b):       r_i = x_a[i] − x_b[π(i)]                        weight δK
//! ```
//!
//! where `σ` matches frame `p` to frame `n`, `τ` matches frame `c` to the midpoints of that
//! matching and `π` matches consecutive frames. The gradient with respect to an atom `x` of the
//! centre frame is `2(x − target(x))` per unit weight, the target being the matched midpoint.
//! The objective is then a convex quadratic whose Hessian restricted to one frame is a multiple
//! `L_k` of the identity, so a block step of `1/L_k` is the exact block minimiser. Assignments
//! are recomputed at every refresh.

use std::time::Instant;

use rayon::prelude::*;

use super::{sweep_order, Layout, OptimizerConfig, OptimizerTrace, StepRule, StopReason, TraceRow};
use crate::error::{invalid, Error, Result};
use crate::measures::PointCloud;
use crate::spline::{
    cloud_assignment, energy_report, AssignmentBackend, SplineProblem, SplineSolution,
    SplineTermKind,
};

/// One residual entry: `coef · x_node[atom]`.
type Entry = (usize, usize, f64);

/// `(w/M) Σ_i |Σ_{entries of row i} coef · x|²`.
#[derive(Debug, Clone)]
struct Residual {
    w: f64,
    rows: Vec<Vec<Entry>>,
}

struct Model {
    dim: usize,
    atoms: usize,
    pos: Vec<Vec<f64>>,
    residuals: Vec<Residual>,
    node_residuals: Vec<Vec<usize>>,
    /// Assignments the residuals were built from, to detect when a refresh changes nothing.
    assignments: Vec<Vec<usize>>,
}

impl Model {
    fn cloud(&self, node: usize) -> Result<PointCloud> {
        PointCloud::new(self.dim, self.pos[node].clone())
    }

    fn point<'a>(&'a self, pos: &'a [Vec<f64>], node: usize, atom: usize) -> &'a [f64] {
        &pos[node][atom * self.dim..(atom + 1) * self.dim]
    }

    /// Rebuilds all residuals from fresh assignments of the current locations.
    fn refresh(&mut self, layout: &Layout, delta: f64) -> Result<bool> {
        let kf = layout.k as f64;
        let clouds = (0..layout.nodes())
            .map(|n| self.cloud(n))
            .collect::<Result<Vec<_>>>()?;
        let steps = layout.steps();
        let spline = steps
            .par_iter()
            .map(|&(p, c, n)| {
                let sigma = cloud_assignment(&clouds[p], &clouds[n])?;
                let mid: Vec<f64> = (0..self.atoms)
                    .flat_map(|j| {
                        clouds[p]
                            .point(j)
                            .iter()
                            .zip(clouds[n].point(sigma[j]))
                            .map(|(a, b)| 0.5 * (a + b))
                            .collect::<Vec<_>>()
                    })
                    .collect();
                let tau = cloud_assignment(&clouds[c], &PointCloud::new(self.dim, mid)?)?;
                Ok((sigma, tau))
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs = if delta > 0.0 { layout.path_pairs() } else { Vec::new() };
        let path = pairs
            .par_iter()
            .map(|&(a, b)| cloud_assignment(&clouds[a], &clouds[b]))
            .collect::<Result<Vec<_>>>()?;

        let mut residuals = Vec::new();
        let mut assignments = Vec::new();
        for (&(p, c, n), (sigma, tau)) in steps.iter().zip(spline) {
            let rows = (0..self.atoms)
                .map(|i| vec![(c, i, 1.0), (p, tau[i], -0.5), (n, sigma[tau[i]], -0.5)])
                .collect();
            residuals.push(Residual {
                w: 4.0 * kf.powi(3),
                rows,
            });
            assignments.push(sigma);
            assignments.push(tau);
        }
        for (&(a, b), pi) in pairs.iter().zip(path) {
            let rows = (0..self.atoms)
                .map(|i| vec![(a, i, 1.0), (b, pi[i], -1.0)])
                .collect();
            residuals.push(Residual { w: delta * kf, rows });
            assignments.push(pi);
        }
        let mut node_residuals = vec![Vec::new(); layout.nodes()];
        for (r, res) in residuals.iter().enumerate() {
            let mut nodes: Vec<usize> = res.rows[0].iter().map(|e| e.0).collect();
            nodes.sort_unstable();
            nodes.dedup();
            for n in nodes {
                node_residuals[n].push(r);
            }
        }
        let changed = assignments != self.assignments;
        self.residuals = residuals;
        self.node_residuals = node_residuals;
        self.assignments = assignments;
        Ok(changed)
    }

    fn row_residual(&self, pos: &[Vec<f64>], row: &[Entry], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(node, atom, coef) in row {
            for (o, x) in out.iter_mut().zip(self.point(pos, node, atom)) {
                *o += coef * x;
            }
        }
    }

    fn residual_value(&self, pos: &[Vec<f64>], r: usize) -> f64 {
        let res = &self.residuals[r];
        let mut buf = vec![0.0; self.dim];
        let s: f64 = res
            .rows
            .iter()
            .map(|row| {
                self.row_residual(pos, row, &mut buf);
                buf.iter().map(|v| v * v).sum::<f64>()
            })
            .sum();
        res.w * s / self.atoms as f64
    }

    fn value(&self) -> f64 {
        (0..self.residuals.len())
            .map(|r| self.residual_value(&self.pos, r))
            .sum()
    }

    fn local_value(&self, pos: &[Vec<f64>], node: usize) -> f64 {
        self.node_residuals[node]
            .iter()
            .map(|&r| self.residual_value(pos, r))
            .sum()
    }

    fn gradient(&self, pos: &[Vec<f64>], node: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.atoms * self.dim];
        let mut buf = vec![0.0; self.dim];
        for &r in &self.node_residuals[node] {
            let res = &self.residuals[r];
            let scale = 2.0 * res.w / self.atoms as f64;
            for row in &res.rows {
                self.row_residual(pos, row, &mut buf);
                for &(n, atom, coef) in row {
                    if n == node {
                        for (gi, v) in g[atom * self.dim..(atom + 1) * self.dim].iter_mut().zip(&buf)
                        {
                            *gi += scale * coef * v;
                        }
                    }
                }
            }
        }
        g
    }

    /// Block Lipschitz constant of the gradient with respect to one node.
    fn lipschitz(&self, node: usize) -> f64 {
        self.node_residuals[node]
            .iter()
            .map(|&r| {
                let res = &self.residuals[r];
                let worst = res
                    .rows
                    .iter()
                    .map(|row| {
                        row.iter()
                            .filter(|e| e.0 == node)
                            .map(|e| e.2.abs())
                            .sum::<f64>()
                            .powi(2)
                    })
                    .fold(0.0, f64::max);
                2.0 * res.w * worst / self.atoms as f64
            })
            .sum()
    }
}

/// Minimises the point-cloud spline objective over the atom locations of the free frames.
///
/// Free frames start on the straight lines between matched atoms of adjacent keyframes.
/// Assignments are refreshed every `refresh_every` sweeps and whenever a sweep lowers the
/// objective by less than `stop_tol` relatively; the solver stops when such a refresh leaves all
/// assignments unchanged, or after `max_outer` sweeps. The returned energy report uses optimal
/// assignments of the final tuple.
pub fn solve_pointcloud_spline(
    problem: &SplineProblem<PointCloud>,
    config: &OptimizerConfig,
) -> Result<(SplineSolution<PointCloud>, OptimizerTrace)> {
    solve_pointcloud_spline_observed(problem, config, &mut |_| {})
}

/// [`solve_pointcloud_spline`] that hands every trace row to `observer` as soon as its sweep ends.
pub fn solve_pointcloud_spline_observed(
    problem: &SplineProblem<PointCloud>,
    config: &OptimizerConfig,
    observer: &mut dyn FnMut(&TraceRow),
) -> Result<(SplineSolution<PointCloud>, OptimizerTrace)> {
    config.validate()?;
    let dim = problem.keyframes[0].dim();
    let atoms = problem.keyframes[0].len();
    if problem
        .keyframes
        .iter()
        .any(|c| c.dim() != dim || c.len() != atoms)
    {
        return Err(Error::BackendMismatch(
            "point-cloud keyframes need a common dimension and atom count".into(),
        ));
    }
    let start = Instant::now();
    let layout = Layout::new(problem);
    let key_of = |node: usize| &problem.keyframes[layout.pinned[node].expect("pinned node")];
    let mut pos: Vec<Vec<f64>> = (0..layout.nodes())
        .map(|n| match layout.pinned[n] {
            Some(key) => problem.keyframes[key].coords().to_vec(),
            None => Vec::new(),
        })
        .collect();
    let init = layout
        .brackets()
        .par_iter()
        .map(|&(n, a, b, t)| {
            let (xa, xb) = (key_of(a), key_of(b));
            if t == 0.0 {
                return Ok((n, xa.coords().to_vec()));
            }
            let pi = cloud_assignment(xa, xb)?;
            let coords = (0..atoms)
                .flat_map(|i| {
                    xa.point(i)
                        .iter()
                        .zip(xb.point(pi[i]))
                        .map(|(p, q)| (1.0 - t) * p + t * q)
                        .collect::<Vec<_>>()
                })
                .collect();
            Ok((n, coords))
        })
        .collect::<Result<Vec<_>>>()?;
    for (n, c) in init {
        pos[n] = c;
    }
    let mut model = Model {
        dim,
        atoms,
        pos,
        residuals: Vec::new(),
        node_residuals: Vec::new(),
        assignments: Vec::new(),
    };
    model.refresh(&layout, problem.delta)?;

    let free = layout.free();
    let mut trace = OptimizerTrace {
        initial_objective: model.value(),
        rows: Vec::new(),
        stop: StopReason::NothingToDo,
        wall_time: 0.0,
    };
    let mut steps: Vec<f64> = vec![0.0; layout.nodes()];
    let mut previous: Vec<Vec<f64>> = model.pos.clone();
    let mut ever_accepted = false;
    let mut iteration = 0;
    while !free.is_empty() {
        iteration += 1;
        let before = model.value();
        let mut accepted = 0;
        for node in sweep_order(&free, config.seed, iteration) {
            let lip = model.lipschitz(node);
            if lip == 0.0 {
                continue;
            }
            let natural = config.step / lip;
            let x = model.pos[node].clone();
            let old = model.local_value(&model.pos, node);
            let mut beta = config.beta;
            let mut tau = natural;
            let mut trial = model.pos.clone();
            let mut taken = false;
            let attempts = match config.step_rule {
                StepRule::Backtracking => config.max_halvings + 1,
                StepRule::Fixed => 2,
            };
            for _ in 0..attempts {
                let y: Vec<f64> = x
                    .iter()
                    .zip(&previous[node])
                    .map(|(a, p)| a + beta * (a - p))
                    .collect();
                trial[node] = y.clone();
                let g = model.gradient(&trial, node);
                trial[node] = y.iter().zip(&g).map(|(a, b)| a - tau * b).collect();
                if model.local_value(&trial, node) <= old {
                    taken = true;
                    break;
                }
                if beta > 0.0 {
                    beta = 0.0;
                } else if config.step_rule == StepRule::Backtracking {
                    tau *= 0.5;
                } else {
                    break;
                }
            }
            previous[node] = x;
            steps[node] = tau;
            if taken {
                accepted += 1;
                model.pos[node] = trial.swap_remove(node);
            }
        }
        let after = model.value();
        ever_accepted |= accepted > 0;
        if !ever_accepted {
            return Err(Error::NoProgress { iteration });
        }
        let rel = (before - after) / before.abs().max(f64::MIN_POSITIVE);
        let small = rel < config.stop_tol || accepted == 0;
        let refresh = small || iteration % config.refresh_every == 0;
        let changed = if refresh {
            model.refresh(&layout, problem.delta)?
        } else {
            false
        };
        let row = TraceRow {
            iteration,
            stage: 0,
            eps: None,
            objective: after,
            steps: steps.clone(),
            accepted,
            refreshed: refresh,
            true_objective: refresh.then(|| model.value()),
            elapsed: start.elapsed().as_secs_f64(),
        };
        observer(&row);
        trace.rows.push(row);
        if small && !changed {
            trace.stop = if accepted == 0 {
                StopReason::Stalled
            } else {
                StopReason::Converged
            };
            break;
        }
        if iteration >= config.max_outer {
            trace.stop = StopReason::MaxOuter;
            break;
        }
    }

    let measures = (0..=problem.k)
        .map(|f| match problem.pinned(f) {
            Some(key) => Ok(key.clone()),
            None => model.cloud(layout.node(f)),
        })
        .collect::<Result<Vec<_>>>()?;
    if measures.len() != problem.k + 1 {
        return Err(invalid("internal error: wrong number of frames"));
    }
    let energy = energy_report(
        &measures,
        &AssignmentBackend,
        SplineTermKind::Barycenter,
        problem.bc,
        problem.delta,
    )?;
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok((SplineSolution { measures, energy }, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::{euclidean_discrete_spline_points, BoundaryCondition};

    fn tight() -> OptimizerConfig {
        OptimizerConfig {
            max_outer: 20_000,
            stop_tol: 1e-15,
            ..Default::default()
        }
    }

    fn cloud(points: &[[f64; 2]]) -> PointCloud {
        PointCloud::from_points(&points.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_atom_is_the_euclidean_discrete_spline() {
        let keys = [[0.0, 0.0], [0.5, 1.0], [1.0, 0.0]];
        let p = SplineProblem::new(
            8,
            vec![0.0, 0.5, 1.0],
            keys.iter().map(|k| cloud(&[*k])).collect(),
            1e-6,
            None,
            BoundaryCondition::Natural,
        )
        .unwrap();
        let (sol, trace) = solve_pointcloud_spline(&p, &tight()).unwrap();
        assert!(trace.is_monotone());
        let pins: Vec<(usize, Vec<f64>)> =
            [0, 4, 8].iter().zip(&keys).map(|(f, k)| (*f, k.to_vec())).collect();
        let oracle =
            euclidean_discrete_spline_points(8, &pins, BoundaryCondition::Natural, 1e-6).unwrap();
        for (m, o) in sol.measures.iter().zip(&oracle) {
            for (a, b) in m.point(0).iter().zip(o) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rigid_translates_move_every_atom_along_its_spline() {
        let base = [[0.0, 0.0], [0.3, 0.1], [0.1, 0.4], [0.5, 0.5], [0.2, 0.9]];
        let shifts = [[0.0, 0.0], [0.2, 0.3], [0.6, 0.1], [0.9, 0.4]];
        let keys: Vec<PointCloud> = shifts
            .iter()
            .map(|s| cloud(&base.map(|b| [b[0] + s[0], b[1] + s[1]])))
            .collect();
        let times = vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        let p = SplineProblem::new(6, times, keys, 0.05, None, BoundaryCondition::Natural).unwrap();
        let (sol, trace) = solve_pointcloud_spline(&p, &tight()).unwrap();
        assert!(trace.is_monotone());
        let pins: Vec<(usize, Vec<f64>)> =
            [0, 2, 4, 6].iter().zip(&shifts).map(|(f, s)| (*f, s.to_vec())).collect();
        let offsets =
            euclidean_discrete_spline_points(6, &pins, BoundaryCondition::Natural, 0.05).unwrap();
        for (frame, off) in sol.measures.iter().zip(&offsets) {
            for (i, b) in base.iter().enumerate() {
                let x = frame.point(i);
                assert!((x[0] - b[0] - off[0]).abs() < 1e-6);
                assert!((x[1] - b[1] - off[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_keyframes_give_straight_lines() {
        let a = cloud(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let b = cloud(&[[2.0, 2.0], [0.5, 3.0], [3.0, 0.5]]);
        let p = SplineProblem::new(
            5,
            vec![0.0, 1.0],
            vec![a.clone(), b.clone()],
            0.3,
            None,
            BoundaryCondition::Natural,
        )
        .unwrap();
        let (sol, _) = solve_pointcloud_spline(&p, &tight()).unwrap();
        let pi = cloud_assignment(&a, &b).unwrap();
        // The pinned last frame keeps the keyframe's own atom order.
        for (k, frame) in sol.measures.iter().enumerate().take(5) {
            let t = k as f64 / 5.0;
            for i in 0..3 {
                for d in 0..2 {
                    let line = (1.0 - t) * a.point(i)[d] + t * b.point(pi[i])[d];
                    assert!((frame.point(i)[d] - line).abs() < 1e-7);
                }
            }
        }
        assert!(sol.energy.spline_energy() < 1e-10);
    }

    #[test]
    fn periodic_frames_close_and_traces_repeat() {
        let keys = vec![
            cloud(&[[0.0, 0.0], [0.2, 0.0]]),
            cloud(&[[1.0, 0.5], [1.2, 0.6]]),
            cloud(&[[0.4, 1.0], [0.5, 1.1]]),
            cloud(&[[0.0, 0.0], [0.2, 0.0]]),
        ];
        let p = SplineProblem::new(
            9,
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            keys,
            0.1,
            None,
            BoundaryCondition::Periodic,
        )
        .unwrap();
        let c = OptimizerConfig {
            seed: 5,
            max_outer: 50,
            ..Default::default()
        };
        let (s1, t1) = solve_pointcloud_spline(&p, &c).unwrap();
        let (s2, t2) = solve_pointcloud_spline(&p, &c).unwrap();
        assert_eq!(s1.measures[0], s1.measures[9]);
        assert_eq!(s1.measures, s2.measures);
        assert_eq!(t1.iterates(), t2.iterates());
        assert!(t1.is_monotone());
        assert!(t1.rows.last().unwrap().objective < t1.initial_objective);
    }

    #[test]
    fn mismatched_clouds_are_rejected() {
        let p = SplineProblem::new(
            2,
            vec![0.0, 1.0],
            vec![cloud(&[[0.0, 0.0]]), cloud(&[[0.0, 0.0], [1.0, 1.0]])],
            0.0,
            None,
            BoundaryCondition::Natural,
        )
        .unwrap();
        assert!(matches!(
            solve_pointcloud_spline(&p, &tight()),
            Err(Error::BackendMismatch(_))
        ));
    }
}
