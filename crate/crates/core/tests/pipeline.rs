//! End-to-end checks across modules: file round trips, the grid solver's contract and the
//! T-spline baseline's pushforward properties.

use statrs::distribution::{ContinuousCDF, Normal};
use wspline_core::baselines::{t_spline_1d, TKeyframes};
use wspline_core::io::{load_density, write_csv};
use wspline_core::measures::rasterize_gaussian;
use wspline_core::optimizer::{solve_grid_spline, OptimizerConfig, StopReason};
use wspline_core::sinkhorn::SinkhornParams;
use wspline_core::spline::{
    cubic_spline_interpolate, energy_report, BoundaryCondition, EntropicGridBackend, SplineEnds,
    SplineProblem, SplineTermKind,
};
use wspline_core::{DiscreteMeasure, Gaussian, Grid2};

fn key(grid: Grid2, m: [f64; 2], s: [f64; 2]) -> DiscreteMeasure {
    rasterize_gaussian(&Gaussian::diagonal(&m, &s).unwrap(), grid).unwrap()
}

#[test]
fn csv_frames_reload_to_identical_energies() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid2::new(20, 20).unwrap();
    let frames = [
        key(grid, [0.3, 0.5], [0.1, 0.08]),
        key(grid, [0.45, 0.55], [0.09, 0.1]),
        key(grid, [0.6, 0.5], [0.08, 0.12]),
    ];
    let reloaded: Vec<DiscreteMeasure> = frames
        .iter()
        .enumerate()
        .map(|(j, mu)| {
            let path = dir.path().join(format!("f{j}.csv"));
            write_csv(mu, &path).unwrap();
            load_density(&path).unwrap()
        })
        .collect();
    let backend = EntropicGridBackend {
        params: SinkhornParams::with_eps(3e-3),
    };
    let run = |tuple: &[DiscreteMeasure]| {
        energy_report(tuple, &backend, SplineTermKind::Barycenter, BoundaryCondition::Natural, 0.2)
            .unwrap()
    };
    let (a, b) = (run(&frames), run(&reloaded));
    assert!((a.total - b.total).abs() <= 1e-9 * a.total, "{} vs {}", a.total, b.total);
    let parts = a.spline_energy() + 0.2 * a.path_energy();
    assert!((parts - a.total).abs() <= 1e-12 * a.total);
}

#[test]
fn grid_solver_keeps_its_contract() {
    let grid = Grid2::new(16, 16).unwrap();
    let keys = vec![
        key(grid, [0.3, 0.35], [0.08, 0.1]),
        key(grid, [0.5, 0.6], [0.1, 0.07]),
        key(grid, [0.7, 0.4], [0.07, 0.09]),
    ];
    let problem = SplineProblem::new(
        4,
        vec![0.0, 0.5, 1.0],
        keys.clone(),
        0.1,
        Some(4e-3),
        BoundaryCondition::Natural,
    )
    .unwrap();
    let config = OptimizerConfig {
        eps: 4e-3,
        max_outer: 3,
        stop_tol: 1e-4,
        ..OptimizerConfig::default()
    };
    let (solution, trace) = solve_grid_spline(&problem, &config).unwrap();
    assert_eq!(solution.measures.len(), 5);
    for (frame, k) in [(0, 0), (2, 1), (4, 2)] {
        assert_eq!(solution.measures[frame].weights(), keys[k].weights());
    }
    for mu in &solution.measures {
        let mass: f64 = mu.weights().iter().sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(mu.weights().iter().all(|w| *w >= 0.0));
    }
    assert!(trace.is_monotone());
    assert!(matches!(trace.stop, StopReason::Converged | StopReason::MaxOuter));
    assert!(trace.rows.len() <= 3);

    let backend = EntropicGridBackend {
        params: SinkhornParams {
            eps: config.eps,
            tol: config.sinkhorn_tol,
            max_iter: config.sinkhorn_max_iter,
            ..SinkhornParams::default()
        },
    };
    let again = energy_report(
        &solution.measures,
        &backend,
        SplineTermKind::Barycenter,
        BoundaryCondition::Natural,
        0.1,
    )
    .unwrap();
    assert_eq!(again, solution.energy);
}

/// `∫₀¹ |F⁻¹(u) − Q(u)| du` between the empirical measure of `samples` and `N(m, s²)`, by the
/// midpoint rule on a grid much finer than the samples.
fn w1_to_gaussian(samples: &[f64], m: f64, s: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let normal = Normal::new(m, s).unwrap();
    let cells = 200 * sorted.len();
    (0..cells)
        .map(|c| {
            let u = (c as f64 + 0.5) / cells as f64;
            let x = sorted[(u * sorted.len() as f64) as usize];
            (x - normal.inverse_cdf(u)).abs()
        })
        .sum::<f64>()
        / cells as f64
}

/// Stratified samples of a Gaussian are `W1`-close to it at rate `√(ln n)/n`: the outermost bins
/// reach into tails whose quantiles grow like `√(2 ln n)`.
#[test]
fn tspline_pushforward_matches_keyframes_at_rate_sqrt_log_n_over_n() {
    let params = [(0.0, 1.0), (2.0, 0.5), (1.0, 1.5)];
    let keys = TKeyframes::Gaussians(
        params.iter().map(|&(m, s)| Gaussian::scalar(m, s).unwrap()).collect(),
    );
    let times = [0.0, 0.5, 1.0];
    let mut previous: Option<Vec<f64>> = None;
    for n in [64, 256, 1024] {
        let result = t_spline_1d(&keys, &times, n, &times).unwrap();
        let w1: Vec<f64> = params
            .iter()
            .enumerate()
            .map(|(q, &(m, s))| w1_to_gaussian(&result.values[q], m, s))
            .collect();
        for (q, &(_, s)) in params.iter().enumerate() {
            let scaled = n as f64 * w1[q] / (s * (n as f64).ln().sqrt());
            assert!(scaled <= 1.0, "n = {n}, keyframe {q}: n·W1/(s√ln n) = {scaled}");
            if let Some(prev) = &previous {
                assert!(w1[q] < prev[q] / 3.0, "n = {n}, keyframe {q}: {} after {}", w1[q], prev[q]);
            }
        }
        previous = Some(w1);
    }
}

#[test]
fn gaussian_tspline_moments_follow_the_affine_closed_form() {
    let params = [(0.0, 1.0), (1.0, 0.4), (-0.5, 1.2), (0.5, 0.8)];
    let times = [0.0, 0.25, 0.75, 1.0];
    let keys = TKeyframes::Gaussians(
        params.iter().map(|&(m, s)| Gaussian::scalar(m, s).unwrap()).collect(),
    );
    let query: Vec<f64> = (0..=40).map(|j| j as f64 / 40.0).collect();
    let n = 512;
    let result = t_spline_1d(&keys, &times, n, &query).unwrap();

    let means: Vec<f64> = params.iter().map(|p| p.0).collect();
    let stds: Vec<f64> = params.iter().map(|p| p.1).collect();
    let mean_curve = cubic_spline_interpolate(&times, &means, SplineEnds::Natural).unwrap();
    let std_curve = cubic_spline_interpolate(&times, &stds, SplineEnds::Natural).unwrap();
    // Every sample is M(t) + S(t)·z with z a standard normal quantile, so the sample moments are
    // M(t) + S(t)·mean(z) and |S(t)|·std(z).
    let normal = Normal::new(0.0, 1.0).unwrap();
    let z: Vec<f64> = (0..n).map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64)).collect();
    let z_mean = z.iter().sum::<f64>() / n as f64;
    let z_std = (z.iter().map(|v| (v - z_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    for (q, &t) in query.iter().enumerate() {
        let mean = mean_curve.eval(t) + std_curve.eval(t) * z_mean;
        let std = std_curve.eval(t).abs() * z_std;
        assert!((result.mean[q] - mean).abs() < 1e-12, "t = {t}");
        assert!((result.std[q] - std).abs() < 1e-12 * std.max(1.0), "t = {t}");
    }
}
