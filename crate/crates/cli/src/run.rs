//! The `run` subcommand: builds the problem of one mode, solves it and writes the artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use wspline_core::baselines::{t_spline_1d, TKeyframes};
use wspline_core::gaussian::{diag_path_energy, diag_spline_energy, gaussian_espline, EsplineOptions};
use wspline_core::io::{load_density, write_csv, write_pgm};
use wspline_core::measures::{moments, rasterize_gaussian};
use wspline_core::optimizer::{
    solve_grid_spline_observed, solve_pointcloud_spline_observed, OptimizerTrace, TraceRow,
};
use wspline_core::sinkhorn::SinkhornParams;
use wspline_core::spline::{
    energy_report, knot_path_energy, knot_spline_energy, path_energy_gap_bound, temporal_extension,
    EntropicGridBackend, SplineProblem,
};
use wspline_core::{DiscreteMeasure, Gaussian, Grid2, PointCloud, WeightedPoints};

use crate::config::{read_points, Format, KeyframeSpec, Loaded, Mode, Violation};

/// Default sample count of the T-spline.
const DEFAULT_TSPLINE_SAMPLES: usize = 512;
/// Default evaluation points per knot interval of the temporal extension.
const DEFAULT_EXTENSION_SAMPLES: usize = 16;

/// Why a run failed; each kind maps to its own exit code.
#[derive(Debug)]
pub enum RunError {
    Config(Vec<Violation>),
    Solver(wspline_core::Error),
    Output(String),
}

impl From<Violation> for RunError {
    fn from(v: Violation) -> Self {
        RunError::Config(vec![v])
    }
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Output(format!("{}: {e}", path.display()))
}

/// One summary row: frame index, time, per-axis means and standard deviations.
struct SummaryRow {
    frame: usize,
    t: f64,
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Validates, runs the configured mode and writes everything into the output directory.
pub fn run(loaded: &Loaded) -> Result<PathBuf, RunError> {
    let violations = crate::config::violations(loaded);
    if !violations.is_empty() {
        return Err(RunError::Config(violations));
    }
    let dir = loaded.output_dir();
    fs::create_dir_all(&dir).map_err(|e| output_err(&dir, e))?;
    match loaded.config.mode {
        Mode::Grid => run_grid(loaded, &dir)?,
        Mode::Gaussian => run_gaussian(loaded, &dir)?,
        Mode::Pointcloud => run_pointcloud(loaded, &dir)?,
        Mode::Tspline => run_tspline(loaded, &dir)?,
        Mode::Energy => run_energy(loaded, &dir)?,
        Mode::Extend => run_extend(loaded, &dir)?,
    }
    Ok(dir)
}

fn times(loaded: &Loaded) -> Vec<f64> {
    loaded.config.problem.keyframes.iter().map(|f| f.t).collect()
}

fn k_of(loaded: &Loaded) -> usize {
    loaded.config.problem.k.expect("validated")
}

fn keyframe_gaussian(i: usize, f: &KeyframeSpec) -> Result<Gaussian, RunError> {
    let (mean, std) = (f.mean.as_ref().expect("validated"), f.std.as_ref().expect("validated"));
    Gaussian::diagonal(mean, std)
        .map_err(|e| Violation::new(format!("problem.keyframes[{i}].std"), e.to_string()).into())
}

fn grid_keyframes(loaded: &Loaded) -> Result<Vec<DiscreteMeasure>, RunError> {
    let p = &loaded.config.problem;
    p.keyframes
        .iter()
        .enumerate()
        .map(|(i, f)| match &f.file {
            Some(file) => load_density(&loaded.resolve(file)).map_err(|e| {
                Violation::new(format!("problem.keyframes[{i}].file"), e.to_string()).into()
            }),
            None => {
                let spec = p.grid.expect("validated");
                let grid = Grid2::new(spec.width, spec.height)
                    .map_err(|e| Violation::new("problem.grid", e.to_string()))?;
                rasterize_gaussian(&keyframe_gaussian(i, f)?, grid).map_err(|e| {
                    Violation::new(format!("problem.keyframes[{i}].mean"), e.to_string()).into()
                })
            }
        })
        .collect()
}

fn keyframe_points(loaded: &Loaded, i: usize, f: &KeyframeSpec) -> Result<Vec<Vec<f64>>, RunError> {
    match (&f.points, &f.file) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(file)) => read_points(&loaded.resolve(file))
            .map_err(|e| Violation::new(format!("problem.keyframes[{i}].file"), e).into()),
        (None, None) => unreachable!("validated"),
    }
}

/// Streams trace rows to `trace.csv` so the record survives a solver failure.
struct TraceWriter {
    path: PathBuf,
    out: csv::Writer<fs::File>,
    error: Option<String>,
}

impl TraceWriter {
    fn create(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join("trace.csv");
        let mut out = csv::Writer::from_path(&path).map_err(|e| output_err(&path, e))?;
        out.write_record([
            "iteration",
            "stage",
            "eps",
            "objective",
            "accepted",
            "refreshed",
            "true_objective",
            "elapsed",
            "steps",
        ])
        .and_then(|_| out.flush().map_err(Into::into))
        .map_err(|e| output_err(&path, e))?;
        Ok(Self {
            path,
            out,
            error: None,
        })
    }

    fn push(&mut self, row: &TraceRow) {
        if self.error.is_some() {
            return;
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let steps: Vec<String> = row.steps.iter().map(f64::to_string).collect();
        let record = [
            row.iteration.to_string(),
            row.stage.to_string(),
            opt(row.eps),
            row.objective.to_string(),
            row.accepted.to_string(),
            row.refreshed.to_string(),
            opt(row.true_objective),
            row.elapsed.to_string(),
            steps.join(";"),
        ];
        let written = self
            .out
            .write_record(&record)
            .and_then(|_| self.out.flush().map_err(Into::into));
        if let Err(e) = written {
            self.error = Some(e.to_string());
        }
    }

    fn finish(self) -> Result<(), RunError> {
        match self.error {
            Some(e) => Err(output_err(&self.path, e)),
            None => Ok(()),
        }
    }
}

fn write_json(path: &Path, value: &Value) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| output_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| output_err(path, e))
}

fn write_summary(loaded: &Loaded, dir: &Path, rows: &[SummaryRow]) -> Result<(), RunError> {
    if !loaded.config.output.summary || rows.is_empty() {
        return Ok(());
    }
    let path = dir.join("summary.csv");
    let dim = rows[0].mean.len();
    let mut header = vec!["frame".to_string(), "t".to_string()];
    header.extend((0..dim).map(|d| format!("mean_{d}")));
    header.extend((0..dim).map(|d| format!("std_{d}")));
    let mut out = csv::Writer::from_path(&path).map_err(|e| output_err(&path, e))?;
    out.write_record(&header).map_err(|e| output_err(&path, e))?;
    for r in rows {
        let mut record = vec![r.frame.to_string(), r.t.to_string()];
        record.extend(r.mean.iter().chain(&r.std).map(f64::to_string));
        out.write_record(&record).map_err(|e| output_err(&path, e))?;
    }
    out.flush().map_err(|e| output_err(&path, e))
}

fn grid_summary(frames: &[DiscreteMeasure]) -> Vec<SummaryRow> {
    let k = frames.len() - 1;
    frames
        .iter()
        .enumerate()
        .map(|(j, mu)| {
            let (m, c) = moments(mu);
            SummaryRow {
                frame: j,
                t: j as f64 / k as f64,
                mean: vec![m[0], m[1]],
                std: vec![c[(0, 0)].max(0.0).sqrt(), c[(1, 1)].max(0.0).sqrt()],
            }
        })
        .collect()
}

fn write_grid_frames(loaded: &Loaded, dir: &Path, frames: &[DiscreteMeasure]) -> Result<(), RunError> {
    for (j, mu) in frames.iter().enumerate() {
        for format in &loaded.config.output.formats {
            let (path, written) = match format {
                Format::Csv => {
                    let path = dir.join(format!("frame_{j:03}.csv"));
                    let w = write_csv(mu, &path);
                    (path, w)
                }
                Format::Pgm => {
                    let path = dir.join(format!("frame_{j:03}.pgm"));
                    let w = write_pgm(mu, &path);
                    (path, w)
                }
            };
            written.map_err(|e| output_err(&path, e))?;
        }
    }
    Ok(())
}

fn solver_json(trace: &OptimizerTrace) -> Value {
    json!({
        "stop": trace.stop,
        "sweeps": trace.rows.len(),
        "initial_objective": trace.initial_objective,
        "wall_time": trace.wall_time,
    })
}

fn run_grid(loaded: &Loaded, dir: &Path) -> Result<(), RunError> {
    let p = &loaded.config.problem;
    let config = loaded.optimizer();
    let keys = grid_keyframes(loaded)?;
    let problem = SplineProblem::new(k_of(loaded), times(loaded), keys, p.delta, Some(config.eps), p.bc)
        .map_err(|e| Violation::new("problem", e.to_string()))?;
    let mut trace_out = TraceWriter::create(dir)?;
    let solved = solve_grid_spline_observed(&problem, &config, &mut |row| trace_out.push(row));
    trace_out.finish()?;
    let (solution, trace) = solved.map_err(RunError::Solver)?;
    write_grid_frames(loaded, dir, &solution.measures)?;
    write_json(
        &dir.join("energies.json"),
        &json!({
            "mode": "grid",
            "energy": solution.energy,
            "solver": solver_json(&trace),
        }),
    )?;
    write_summary(loaded, dir, &grid_summary(&solution.measures))
}

fn run_pointcloud(loaded: &Loaded, dir: &Path) -> Result<(), RunError> {
    let p = &loaded.config.problem;
    let config = loaded.optimizer();
    let keys = p
        .keyframes
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let pts = keyframe_points(loaded, i, f)?;
            PointCloud::from_points(&pts).map_err(|e| {
                RunError::from(Violation::new(format!("problem.keyframes[{i}]"), e.to_string()))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let problem = SplineProblem::new(k_of(loaded), times(loaded), keys, p.delta, None, p.bc)
        .map_err(|e| Violation::new("problem", e.to_string()))?;
    let mut trace_out = TraceWriter::create(dir)?;
    let solved = solve_pointcloud_spline_observed(&problem, &config, &mut |row| trace_out.push(row));
    trace_out.finish()?;
    let (solution, trace) = solved.map_err(RunError::Solver)?;

    let k = solution.measures.len() - 1;
    let mut summary = Vec::new();
    for (j, cloud) in solution.measures.iter().enumerate() {
        let path = dir.join(format!("frame_{j:03}.csv"));
        let mut out = csv::Writer::from_path(&path).map_err(|e| output_err(&path, e))?;
        let header: Vec<String> = (0..cloud.dim()).map(|d| format!("x{d}")).collect();
        out.write_record(&header).map_err(|e| output_err(&path, e))?;
        for m in 0..cloud.len() {
            let record: Vec<String> = cloud.point(m).iter().map(f64::to_string).collect();
            out.write_record(&record).map_err(|e| output_err(&path, e))?;
        }
        out.flush().map_err(|e| output_err(&path, e))?;

        let n = cloud.len() as f64;
        let mean: Vec<f64> = (0..cloud.dim())
            .map(|d| (0..cloud.len()).map(|m| cloud.point(m)[d]).sum::<f64>() / n)
            .collect();
        let std = (0..cloud.dim())
            .map(|d| {
                let var = (0..cloud.len())
                    .map(|m| (cloud.point(m)[d] - mean[d]).powi(2))
                    .sum::<f64>()
                    / n;
                var.sqrt()
            })
            .collect();
        summary.push(SummaryRow {
            frame: j,
            t: j as f64 / k as f64,
            mean,
            std,
        });
    }
    write_json(
        &dir.join("energies.json"),
        &json!({
            "mode": "pointcloud",
            "energy": solution.energy,
            "solver": solver_json(&trace),
        }),
    )?;
    write_summary(loaded, dir, &summary)
}

fn run_gaussian(loaded: &Loaded, dir: &Path) -> Result<(), RunError> {
    let p = &loaded.config.problem;
    let keys = p
        .keyframes
        .iter()
        .enumerate()
        .map(|(i, f)| Ok((f.t, keyframe_gaussian(i, f)?)))
        .collect::<Result<Vec<_>, RunError>>()?;
    let mut opts = EsplineOptions {
        delta: p.delta,
        ..EsplineOptions::default()
    };
    if let Some(l) = p.lambda_min {
        opts.lambda_min = l;
    }
    let result = gaussian_espline(&keys, k_of(loaded), p.bc, &opts).map_err(RunError::Solver)?;
    let summary: Vec<SummaryRow> = result
        .sample
        .times
        .iter()
        .zip(&result.sample.gaussians)
        .enumerate()
        .map(|(j, (&t, g))| SummaryRow {
            frame: j,
            t,
            mean: g.mean().iter().copied().collect(),
            std: (0..g.dim()).map(|d| g.std()[(d, d)]).collect(),
        })
        .collect();
    write_json(
        &dir.join("energies.json"),
        &json!({
            "mode": "gaussian",
            "objective": result.objective,
            "regime": result.regime,
            "spline_energy": diag_spline_energy(&result.path),
            "path_energy": diag_path_energy(&result.path),
            "min_eigenvalue": result.path.min_eigenvalue(),
        }),
    )?;
    write_summary(loaded, dir, &summary)
}

fn run_tspline(loaded: &Loaded, dir: &Path) -> Result<(), RunError> {
    let p = &loaded.config.problem;
    let k = k_of(loaded);
    let keys = if p.keyframes.iter().all(|f| f.mean.is_some()) {
        TKeyframes::Gaussians(
            p.keyframes
                .iter()
                .enumerate()
                .map(|(i, f)| keyframe_gaussian(i, f))
                .collect::<Result<_, _>>()?,
        )
    } else {
        TKeyframes::Measures(
            p.keyframes
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let xs: Vec<f64> = keyframe_points(loaded, i, f)?.iter().map(|x| x[0]).collect();
                    WeightedPoints::line_uniform(&xs).map_err(|e| {
                        RunError::from(Violation::new(format!("problem.keyframes[{i}].points"), e.to_string()))
                    })
                })
                .collect::<Result<_, _>>()?,
        )
    };
    let query: Vec<f64> = (0..=k).map(|j| j as f64 / k as f64).collect();
    let n = p.samples.unwrap_or(DEFAULT_TSPLINE_SAMPLES);
    let result = t_spline_1d(&keys, &times(loaded), n, &query).map_err(RunError::Solver)?;

    let path = dir.join("trajectories.csv");
    let mut out = csv::Writer::from_path(&path).map_err(|e| output_err(&path, e))?;
    let mut header = vec!["frame".to_string(), "t".to_string()];
    header.extend((0..n).map(|i| format!("s{i}")));
    out.write_record(&header).map_err(|e| output_err(&path, e))?;
    for (j, (t, values)) in query.iter().zip(&result.values).enumerate() {
        let mut record = vec![j.to_string(), t.to_string()];
        record.extend(values.iter().map(f64::to_string));
        out.write_record(&record).map_err(|e| output_err(&path, e))?;
    }
    out.flush().map_err(|e| output_err(&path, e))?;

    let count = result.trajectories.len() as f64;
    write_json(
        &dir.join("energies.json"),
        &json!({
            "mode": "tspline",
            "samples": n,
            "mean_spline_energy":
                result.trajectories.iter().map(|c| c.spline_energy()).sum::<f64>() / count,
            "mean_path_energy":
                result.trajectories.iter().map(|c| c.path_energy()).sum::<f64>() / count,
        }),
    )?;
    let summary: Vec<SummaryRow> = query
        .iter()
        .enumerate()
        .map(|(j, &t)| SummaryRow {
            frame: j,
            t,
            mean: vec![result.mean[j]],
            std: vec![result.std[j]],
        })
        .collect();
    write_summary(loaded, dir, &summary)
}

/// Sinkhorn settings used to evaluate stored frames, taken from the optimizer block.
pub fn energy_params(loaded: &Loaded) -> SinkhornParams {
    let o = loaded.optimizer();
    SinkhornParams {
        eps: o.eps,
        tol: o.sinkhorn_tol,
        max_iter: o.sinkhorn_max_iter,
        debias: o.debias,
        ..SinkhornParams::default()
    }
}

fn run_energy(loaded: &Loaded, dir: &Path) -> Result<(), RunError> {
    let p = &loaded.config.problem;
    let frames = p
        .frames
        .as_ref()
        .expect("validated")
        .iter()
        .enumerate()
        .map(|(i, f)| {
            load_density(&loaded.resolve(f))
                .map_err(|e| RunError::from(Violation::new(format!("problem.frames[{i}]"), e.to_string())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let backend = EntropicGridBackend {
        params: energy_params(loaded),
    };
    let report = energy_report(&frames, &backend, p.term, p.bc, p.delta).map_err(RunError::Solver)?;
    write_json(
        &dir.join("energies.json"),
        &json!({ "mode": "energy", "energy": report }),
    )?;
    write_summary(loaded, dir, &grid_summary(&frames))
}

fn run_extend(loaded: &Loaded, dir: &Path) -> Result<(), RunError> {
    let p = &loaded.config.problem;
    let knots = p.knots.as_ref().expect("validated");
    let ext = temporal_extension(knots).map_err(RunError::Solver)?;
    let per = p.samples.unwrap_or(DEFAULT_EXTENSION_SAMPLES).max(1);
    let total = ext.k * per;

    let path = dir.join("extension.csv");
    let file = fs::File::create(&path).map_err(|e| output_err(&path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let dim = knots[0].len();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..dim).map(|d| format!("x{d}")))
        .collect();
    let mut text = header.join(",") + "\n";
    for s in 0..=total {
        let t = s as f64 / total as f64;
        let row: Vec<String> = std::iter::once(t)
            .chain(ext.eval(t))
            .map(|v| v.to_string())
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| output_err(&path, e))?;

    write_json(
        &dir.join("energies.json"),
        &json!({
            "mode": "extend",
            "K": ext.k,
            "spline_energy": ext.spline_energy(),
            "path_energy": ext.path_energy(),
            "knot_spline_energy": knot_spline_energy(knots),
            "knot_path_energy": knot_path_energy(knots),
            "path_energy_gap_bound": path_energy_gap_bound(knots),
            "min_value": ext.min_value(),
        }),
    )
}
