//! Acceptance suite: one `PASS`/`FAIL` line per criterion with the measured quantities.
//!
//! Run with `cargo test -p wspline-core --test acceptance`. Setting `WSPLINE_ACCEPTANCE` to a
//! comma-separated list of criterion numbers (for example `1,2,9`) runs only those. The process
//! exits with a non-zero status when any selected criterion fails.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wspline_core::baselines::{t_spline_1d, TKeyframes};
use wspline_core::gaussian::{
    bures_distance2, gaussian_barycenter, gaussian_espline, gaussian_gen_barycenter,
    gaussian_monge_map, polarization_term, sqrt2x2_spd, EsplineOptions, EsplineRegime,
};
use wspline_core::measures::{moments, rasterize_gaussian};
use wspline_core::optimizer::{solve_grid_spline, solve_pointcloud_spline, OptimizerConfig};
use wspline_core::ot_exact::wasserstein2_exact_small;
use wspline_core::sinkhorn::{point_divergence, SinkhornParams};
use wspline_core::spline::cubic::{cubic_spline_interpolate, SplineEnds};
use wspline_core::spline::euclidean::{euclidean_discrete_spline_points, euclidean_spline_objective};
use wspline_core::spline::extension::{
    knot_path_energy, knot_spline_energy, path_energy_gap_bound, temporal_extension,
};
use wspline_core::spline::{
    discrete_gen_spline_energy, discrete_path_energy, discrete_spline_energy, BoundaryCondition,
    ExactSmallBackend, GaussianBackend, SplineProblem,
};
use wspline_core::{Gaussian, Grid2, PointCloud, Result, WeightedPoints};

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(id: &'static str, title: &'static str, pass: bool, detail: String) -> Self {
        Self {
            id,
            title,
            pass,
            detail,
        }
    }
}

type Criterion = fn() -> Result<Vec<Outcome>>;

fn main() {
    let selected: Option<Vec<String>> = std::env::var("WSPLINE_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let criteria: [(&str, &str, Criterion); 9] = [
        ("1", "exact-oracle agreement", criterion_1),
        ("2", "Gaussian closed forms", criterion_2),
        ("3", "consistency order", criterion_3),
        ("4", "extension identities", criterion_4),
        ("5", "Euclidean reduction", criterion_5),
        ("6", "E-spline vs T-spline contrast", criterion_6),
        ("7", "grid solver cross-check", criterion_7),
        ("8", "optimizer properties", criterion_8),
        ("9", "polarization decay", criterion_9),
    ];
    let mut failed = 0;
    for (id, title, run) in criteria {
        if let Some(sel) = &selected {
            if !sel.iter().any(|s| s == id) {
                continue;
            }
        }
        let start = Instant::now();
        let outcomes = run().unwrap_or_else(|e| vec![Outcome::new(id, title, false, format!("error: {e}"))]);
        for o in outcomes {
            let tag = if o.pass { "PASS" } else { "FAIL" };
            println!("criterion {:<3} [{tag}] {}: {}", o.id, o.title, o.detail);
            if !o.pass {
                failed += 1;
            }
        }
        eprintln!("  ({id} took {:.1} s)", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn random_weighted(rng: &mut ChaCha8Rng, n: usize) -> Result<WeightedPoints> {
    let coords: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>()).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = weights.iter().sum();
    WeightedPoints::new(2, coords, weights.iter().map(|w| w / s).collect())
}

/// Debiased Sinkhorn against the exact linear program on small random instances.
fn criterion_1() -> Result<Vec<Outcome>> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut worst_gap = 0.0;
    for _ in 0..25 {
        let (n, m) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let mu = random_weighted(&mut rng, n)?;
        let nu = random_weighted(&mut rng, m)?;
        let exact = wasserstein2_exact_small(&mu, &nu)?.0;
        let eps = 1e-3 * mu.joint_diameter2(&nu);
        let params = SinkhornParams {
            eps,
            tol: 1e-10,
            max_iter: 100_000,
            ..Default::default()
        };
        let value = point_divergence(&mu, &nu, &params)?.value;
        let allowed = f64::max(1e-3, 3.0 * eps * (n.max(m) as f64).ln());
        let gap = (value - exact).abs();
        if gap / allowed > worst {
            worst = gap / allowed;
            worst_gap = gap;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(vec![Outcome::new(
        "1",
        "exact-oracle agreement",
        worst <= 1.0 && secs < 10.0,
        format!(
            "25 instances, worst gap {worst_gap:.2e} = {worst:.3} of its allowance; {secs:.2} s (limit 10 s)"
        ),
    )])
}

fn eig_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn eig_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l.sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn oracle_bures(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> f64 {
    let r1 = eig_sqrt(c1);
    let cross = eig_sqrt(&(&r1 * c2 * &r1));
    (m1 - m2).norm_squared() + (c1 + c2 - cross * 2.0).trace()
}

fn random_spd_std(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let r = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![
        rng.gen_range(0.3..2.0),
        rng.gen_range(0.3..2.0),
    ]));
    let s = &r * d * r.transpose();
    (&s + s.transpose()) * 0.5
}

fn random_gaussian(rng: &mut ChaCha8Rng) -> Result<Gaussian> {
    let mean = DVector::from_vec(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
    Gaussian::new(mean, random_spd_std(rng))
}

/// Minimises `f` over five parameters by compass search with halving steps.
fn compass_search(f: impl Fn(&[f64; 5]) -> f64, mut x: [f64; 5], mut step: f64, min_step: f64) -> [f64; 5] {
    let mut fx = f(&x);
    while step > min_step {
        let mut improved = false;
        for i in 0..5 {
            for dir in [1.0, -1.0] {
                let mut y = x;
                y[i] += dir * step;
                let fy = f(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    x
}

/// Bures distance, Monge map and 2×2 roots against eigendecompositions; barycenters against a
/// direct search over Gaussian parameters.
fn criterion_2() -> Result<Vec<Outcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut dist_err, mut map_err, mut root_err, mut bar_err): (f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0);
    for _ in 0..100 {
        let g1 = random_gaussian(&mut rng)?;
        let g2 = random_gaussian(&mut rng)?;
        let (c1, c2) = (g1.covariance(), g2.covariance());
        let oracle = oracle_bures(g1.mean(), &c1, g2.mean(), &c2);
        dist_err = dist_err.max((bures_distance2(&g1, &g2)? - oracle).abs());

        let r1 = eig_sqrt(&c1);
        let ri = eig_inv_sqrt(&c1);
        let a = &ri * eig_sqrt(&(&r1 * &c2 * &r1)) * &ri;
        let b = g2.mean() - &a * g1.mean();
        let map = gaussian_monge_map(&g1, &g2)?;
        map_err = map_err.max((&map.a - &a).amax()).max((&map.b - &b).amax());

        let m = Matrix2::new(c1[(0, 0)], c1[(0, 1)], c1[(1, 0)], c1[(1, 1)]);
        let r = sqrt2x2_spd(&m)?;
        root_err = root_err.max((r * r - m).amax());

        let t: f64 = rng.gen_range(0.05..0.95);
        let objective = |p: &[f64; 5]| {
            let mean = DVector::from_vec(vec![p[0], p[1]]);
            let s = DMatrix::from_row_slice(2, 2, &[p[2], p[3], p[3], p[4]]);
            let c = &s * &s;
            (1.0 - t) * oracle_bures(&mean, &c, g1.mean(), &c1)
                + t * oracle_bures(&mean, &c, g2.mean(), &c2)
        };
        let best = compass_search(objective, [0.0, 0.0, 1.0, 0.0, 1.0], 0.5, 1e-9);
        let bar = gaussian_barycenter(&g1, &g2, t)?;
        let found_mean = DVector::from_vec(vec![best[0], best[1]]);
        // The objective only sees σ², so compare through its principal root.
        let s = DMatrix::from_row_slice(2, 2, &[best[2], best[3], best[3], best[4]]);
        let found_std = eig_sqrt(&(&s * &s));
        bar_err = bar_err
            .max((bar.mean() - found_mean).amax())
            .max((bar.std() - found_std).amax());
    }
    let ok_closed = dist_err <= 1e-10 && map_err <= 1e-10 && root_err <= 1e-12;
    Ok(vec![
        Outcome::new(
            "2a",
            "Gaussian closed forms vs eigendecompositions",
            ok_closed,
            format!(
                "100 instances: W² error {dist_err:.1e}, map error {map_err:.1e} (limit 1e-10), root residual {root_err:.1e} (limit 1e-12)"
            ),
        ),
        Outcome::new(
            "2b",
            "Gaussian barycenter vs parameter search",
            bar_err <= 1e-4,
            format!("100 instances: max parameter error {bar_err:.1e} (limit 1e-4)"),
        ),
    ])
}

/// `m(t) = (t, sin t)`, `σ(t) = diag(1 + 0.3 sin t, 1.2 + 0.2 cos t)`.
fn smooth_curve(t: f64) -> Result<Gaussian> {
    Gaussian::diagonal(&[t, t.sin()], &[1.0 + 0.3 * t.sin(), 1.2 + 0.2 * t.cos()])
}

/// Gaps of `𝐅_Gᴷ` and `𝐄ᴷ` against the continuous energies halve as `K` doubles.
fn criterion_3() -> Result<Vec<Outcome>> {
    // ∫₀¹ sin² = ½ − sin 2/4 and ∫₀¹ cos² = ½ + sin 2/4.
    let sin2 = 0.5 - (2.0f64).sin() / 4.0;
    let cos2 = 0.5 + (2.0f64).sin() / 4.0;
    let spline_exact = sin2 + 0.09 * sin2 + 0.04 * cos2;
    let path_exact = 1.0 + cos2 + 0.09 * cos2 + 0.04 * sin2;
    let mut f_gaps = Vec::new();
    let mut e_gaps = Vec::new();
    for k in [8usize, 16, 32, 64] {
        let tuple = (0..=k)
            .map(|j| smooth_curve(j as f64 / k as f64))
            .collect::<Result<Vec<_>>>()?;
        f_gaps.push((discrete_gen_spline_energy(&tuple, &GaussianBackend)? - spline_exact).abs());
        e_gaps.push((discrete_path_energy(&tuple, &GaussianBackend)? - path_exact).abs());
    }
    let ratios = |g: &[f64]| g.windows(2).map(|w| w[0] / w[1]).collect::<Vec<_>>();
    let in_band = |r: &[f64]| r.iter().all(|x| (1.6..=2.4).contains(x));
    let (rf, re) = (ratios(&f_gaps), ratios(&e_gaps));
    let fmt = |g: &[f64], r: &[f64]| {
        let mut s = String::from("gaps");
        for x in g {
            let _ = write!(s, " {x:.3e}");
        }
        s.push_str(", ratios");
        for x in r {
            let _ = write!(s, " {x:.2}");
        }
        s
    };
    Ok(vec![
        Outcome::new(
            "3a",
            "consistency order of 𝐅_Gᴷ",
            in_band(&rf),
            format!("K = 8..64 {} (band [1.6, 2.4])", fmt(&f_gaps, &rf)),
        ),
        Outcome::new(
            "3b",
            "consistency order of 𝐄ᴷ",
            in_band(&re),
            format!("K = 8..64 {} (band [1.6, 2.4])", fmt(&e_gaps, &re)),
        ),
    ])
}

/// Spline-energy identity of the temporal extension and the `K⁻¹` path-energy bound.
fn criterion_4() -> Result<Vec<Outcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.gen_range(2..40);
        let dim = rng.gen_range(1..4);
        let knots: Vec<Vec<f64>> = (0..=k)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.1..3.0)).collect())
            .collect();
        let a = temporal_extension(&knots)?.spline_energy();
        let b = knot_spline_energy(&knots);
        worst = worst.max((a - b).abs() / b.max(1.0));
    }
    let mut gaps = Vec::new();
    let mut constants = Vec::new();
    let mut within = true;
    for k in [8usize, 16, 32] {
        let knots: Vec<Vec<f64>> = (0..=k)
            .map(|j| {
                let t = j as f64 / k as f64;
                vec![1.0 + 0.3 * t.sin(), 1.2 + 0.2 * t.cos(), t, t.sin()]
            })
            .collect();
        let gap = (temporal_extension(&knots)?.path_energy() - knot_path_energy(&knots)).abs();
        let bound = path_energy_gap_bound(&knots);
        within &= gap <= bound;
        gaps.push(gap);
        constants.push(k as f64 * bound);
    }
    let lo = constants.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = constants.iter().cloned().fold(0.0, f64::max);
    let stable = hi / lo - 1.0 < 0.1;
    Ok(vec![
        Outcome::new(
            "4a",
            "extension spline energy equals 𝐅̂ᴷ",
            worst <= 1e-12,
            format!("50 random knot tuples, worst relative error {worst:.1e} (limit 1e-12)"),
        ),
        Outcome::new(
            "4b",
            "extension path energy within C/K of 𝐄̂ᴷ",
            within && stable,
            format!(
                "K = 8, 16, 32: gaps {:.3e} {:.3e} {:.3e}; C_K = {:.4} {:.4} {:.4} (spread {:.1}%, limit 10%)",
                gaps[0],
                gaps[1],
                gaps[2],
                constants[0],
                constants[1],
                constants[2],
                100.0 * (hi / lo - 1.0)
            ),
        ),
    ])
}

fn tight_config() -> OptimizerConfig {
    OptimizerConfig {
        max_outer: 20_000,
        stop_tol: 1e-15,
        ..Default::default()
    }
}

fn dirac(p: &[f64]) -> Result<WeightedPoints> {
    WeightedPoints::new(p.len(), p.to_vec(), vec![1.0])
}

/// Single-atom point-cloud spline against cubic splines, and delta-measure energies.
fn criterion_5() -> Result<Vec<Outcome>> {
    let keys = [[0.0, 0.0], [0.5, 1.0], [1.0, 0.0]];
    let k = 8;
    let problem = SplineProblem::new(
        k,
        vec![0.0, 0.5, 1.0],
        keys.iter()
            .map(|p| PointCloud::from_points(&[p.to_vec()]))
            .collect::<Result<Vec<_>>>()?,
        1e-6,
        None,
        BoundaryCondition::Natural,
    )?;
    let (sol, _) = solve_pointcloud_spline(&problem, &tight_config())?;
    let times = [0.0, 0.5, 1.0];
    let curves = (0..2)
        .map(|d| {
            let y: Vec<f64> = keys.iter().map(|p| p[d]).collect();
            cubic_spline_interpolate(&times, &y, SplineEnds::Natural)
        })
        .collect::<Result<Vec<_>>>()?;
    let pins: Vec<(usize, Vec<f64>)> =
        [0, 4, 8].iter().zip(&keys).map(|(f, p)| (*f, p.to_vec())).collect();
    let discrete = euclidean_discrete_spline_points(k, &pins, BoundaryCondition::Natural, 1e-6)?;
    let (mut cubic_gap, mut discrete_gap): (f64, f64) = (0.0, 0.0);
    for j in 1..k {
        let x = sol.measures[j].point(0);
        let t = j as f64 / k as f64;
        for d in 0..2 {
            cubic_gap = cubic_gap.max((x[d] - curves[d].eval(t)).abs());
            discrete_gap = discrete_gap.max((x[d] - discrete[j][d]).abs());
        }
    }

    // Delta measures: the transport energies reduce to the Euclidean discrete energies.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut energy_err: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.gen_range(2..9);
        let xs: Vec<f64> = (0..=k).map(|_| rng.gen::<f64>()).collect();
        let tuple = xs.iter().map(|x| dirac(&[*x])).collect::<Result<Vec<_>>>()?;
        let spline = discrete_spline_energy(&tuple, &ExactSmallBackend)?;
        let path = discrete_path_energy(&tuple, &ExactSmallBackend)?;
        let euclid_spline = euclidean_spline_objective(&xs, BoundaryCondition::Natural, 0.0);
        let euclid_total = euclidean_spline_objective(&xs, BoundaryCondition::Natural, 1.0);
        energy_err = energy_err
            .max((spline - euclid_spline).abs() / euclid_spline.max(1.0))
            .max((spline + path - euclid_total).abs() / euclid_total.max(1.0));
    }
    Ok(vec![
        Outcome::new(
            "5a",
            "single atom vs continuous natural cubic spline",
            cubic_gap <= 1e-6,
            format!("max deviation at interior steps {cubic_gap:.3e} (limit 1e-6)"),
        ),
        Outcome::new(
            "5b",
            "single atom vs discrete Euclidean spline",
            discrete_gap <= 1e-6,
            format!("max deviation at interior steps {discrete_gap:.3e} (limit 1e-6)"),
        ),
        Outcome::new(
            "5c",
            "delta-measure energies vs Euclidean formulas",
            energy_err <= 1e-12,
            format!("20 random tuples, worst relative error {energy_err:.1e}"),
        ),
    ])
}

fn export_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("create export directory");
    dir
}

/// E-spline and T-spline standard deviations for 1D Gaussian keyframes.
fn criterion_6() -> Result<Vec<Outcome>> {
    let n_query = 64;
    let query: Vec<f64> = (0..=n_query).map(|i| i as f64 / n_query as f64).collect();
    let k = 64;
    let mut csv = String::from("family,t,e_spline_std,t_spline_std,t_spline_mean,e_spline_mean\n");

    // Family A: constant means, stds (1, 0.7, 1).
    let times_a = [0.0, 0.5, 1.0];
    let stds_a = [1.0, 0.7, 1.0];
    let keys_a = stds_a
        .iter()
        .map(|s| Gaussian::scalar(0.0, *s))
        .collect::<Result<Vec<_>>>()?;
    let e_a = gaussian_espline(
        &times_a.iter().cloned().zip(keys_a.clone()).collect::<Vec<_>>(),
        k,
        BoundaryCondition::Natural,
        &EsplineOptions::default(),
    )?;
    let cubic_a = cubic_spline_interpolate(&times_a, &stds_a, SplineEnds::Natural)?;
    let mut e_err: f64 = 0.0;
    for (j, g) in e_a.sample.gaussians.iter().enumerate().skip(1).take(k - 1) {
        e_err = e_err.max((g.std()[(0, 0)] - cubic_a.eval(j as f64 / k as f64)).abs());
    }
    for &t in &query {
        e_err = e_err.max((e_a.path.eig[0].eval(t) - cubic_a.eval(t)).abs());
    }
    let t_a = t_spline_1d(&TKeyframes::Gaussians(keys_a), &times_a, 512, &query)?;
    for (q, &t) in query.iter().enumerate() {
        let _ = writeln!(
            csv,
            "constant_means,{t},{},{},{},{}",
            e_a.path.eig[0].eval(t),
            t_a.std[q],
            t_a.mean[q],
            e_a.path.mean[0].eval(t)
        );
    }
    let dev_a = query
        .iter()
        .enumerate()
        .map(|(q, &t)| (t_a.std[q] - e_a.path.eig[0].eval(t)).abs())
        .fold(0.0, f64::max);

    // Family B: varying means and stds whose cubic spline dips below zero.
    let times_b = [0.0, 0.25, 0.5, 0.75, 1.0];
    let params_b = [(0.0, 1.0), (1.0, 0.02), (-0.5, 1.5), (0.5, 0.02), (0.0, 1.0)];
    let keys_b = params_b
        .iter()
        .map(|(m, s)| Gaussian::scalar(*m, *s))
        .collect::<Result<Vec<_>>>()?;
    let e_b = gaussian_espline(
        &times_b.iter().cloned().zip(keys_b.clone()).collect::<Vec<_>>(),
        k,
        BoundaryCondition::Natural,
        &EsplineOptions::default(),
    )?;
    let t_b = t_spline_1d(&TKeyframes::Gaussians(keys_b), &times_b, 512, &query)?;
    for (q, &t) in query.iter().enumerate() {
        let _ = writeln!(
            csv,
            "varying_means,{t},{},{},{},{}",
            e_b.path.eig[0].eval(t),
            t_b.std[q],
            t_b.mean[q],
            e_b.path.mean[0].eval(t)
        );
    }
    let dev_b = query
        .iter()
        .enumerate()
        .map(|(q, &t)| (t_b.std[q] - e_b.path.eig[0].eval(t)).abs())
        .fold(0.0, f64::max);
    let regime_b = match e_b.regime {
        EsplineRegime::CubicSpline => "cubic spline".to_string(),
        EsplineRegime::DiscreteQp { active } => format!("positivity-constrained, {active} active knots"),
    };
    let path = export_dir().join("e_vs_t_spline.csv");
    std::fs::write(&path, csv).map_err(wspline_core::Error::from)?;
    Ok(vec![Outcome::new(
        "6",
        "E-spline vs T-spline contrast",
        e_err <= 1e-8 && e_a.regime == EsplineRegime::CubicSpline && dev_b > 0.0,
        format!(
            "E-spline std vs cubic spline of stds {e_err:.1e} (limit 1e-8); T-spline std deviation: constant means {dev_a:.3e}, varying means {dev_b:.3e} ({regime_b}); curves in {}",
            path.display()
        ),
    )])
}

/// Entropic grid solver against the closed-form diagonal Gaussian E-spline.
fn criterion_7() -> Result<Vec<Outcome>> {
    let start = Instant::now();
    let grid = Grid2::new(65, 65)?;
    let keys = [
        Gaussian::diagonal(&[0.3, 0.35], &[0.08, 0.12])?,
        Gaussian::diagonal(&[0.5, 0.65], &[0.12, 0.06])?,
        Gaussian::diagonal(&[0.72, 0.4], &[0.07, 0.09])?,
    ];
    let times = vec![0.0, 0.5, 1.0];
    let (k, delta) = (8, 0.1);
    let problem = SplineProblem::new(
        k,
        times.clone(),
        keys.iter()
            .map(|g| rasterize_gaussian(g, grid))
            .collect::<Result<Vec<_>>>()?,
        delta,
        Some(5e-4),
        BoundaryCondition::Natural,
    )?;
    let config = OptimizerConfig {
        eps: 5e-4,
        eps_ladder: vec![4e-3, 1e-3, 5e-4],
        max_outer: 20,
        sinkhorn_tol: 1e-6,
        stop_tol: 1e-3,
        refresh_every: 1000,
        ..Default::default()
    };
    let (sol, trace) = solve_grid_spline(&problem, &config)?;
    let reference = gaussian_espline(
        &times.iter().cloned().zip(keys.iter().cloned()).collect::<Vec<_>>(),
        k,
        BoundaryCondition::Natural,
        &EsplineOptions {
            delta,
            ..Default::default()
        },
    )?;
    let mut worst: f64 = 0.0;
    let mut worst_at = (0, "");
    for (j, (mu, g)) in sol.measures.iter().zip(&reference.sample.gaussians).enumerate() {
        let (m, c) = moments(mu);
        let s = g.diag_std();
        let rel = [
            ("mean x", (m.x - g.mean()[0]).abs() / g.mean()[0].abs()),
            ("mean y", (m.y - g.mean()[1]).abs() / g.mean()[1].abs()),
            ("std x", (c[(0, 0)].sqrt() - s[0]).abs() / s[0]),
            ("std y", (c[(1, 1)].sqrt() - s[1]).abs() / s[1]),
        ];
        for (name, r) in rel {
            if r > worst {
                worst = r;
                worst_at = (j, name);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(vec![Outcome::new(
        "7",
        "grid solver cross-check",
        worst <= 0.05 && secs < 600.0,
        format!(
            "65×65, K = 8, ladder 4e-3 → 5e-4: worst relative moment error {:.2}% ({} at step {}) (limit 5%); {} sweeps, {secs:.0} s (limit 600 s)",
            100.0 * worst,
            worst_at.1,
            worst_at.0,
            trace.rows.len()
        ),
    )])
}

/// Monotone traces, untouched pinned frames and reproducible runs.
fn criterion_8() -> Result<Vec<Outcome>> {
    let grid = Grid2::new(20, 20)?;
    let grid_keys = [
        Gaussian::diagonal(&[0.3, 0.3], &[0.08, 0.1])?,
        Gaussian::diagonal(&[0.5, 0.65], &[0.1, 0.07])?,
        Gaussian::diagonal(&[0.7, 0.35], &[0.07, 0.09])?,
    ];
    let grid_problem = SplineProblem::new(
        4,
        vec![0.0, 0.5, 1.0],
        grid_keys
            .iter()
            .map(|g| rasterize_gaussian(g, grid))
            .collect::<Result<Vec<_>>>()?,
        0.1,
        Some(4e-3),
        BoundaryCondition::Natural,
    )?;
    let mut notes = Vec::new();
    let (mut monotone, mut pinned, mut repeat) = (true, true, true);
    for update in [
        wspline_core::optimizer::UpdateRule::Mirror,
        wspline_core::optimizer::UpdateRule::Projected,
    ] {
        let config = OptimizerConfig {
            eps: 4e-3,
            update,
            max_outer: 6,
            refresh_every: 2,
            stop_tol: 0.0,
            seed: 7,
            ..Default::default()
        };
        let (s1, t1) = solve_grid_spline(&grid_problem, &config)?;
        let (s2, t2) = solve_grid_spline(&grid_problem, &config)?;
        monotone &= t1.is_monotone();
        for (frame, key) in [(0, 0), (2, 1), (4, 2)] {
            pinned &= s1.measures[frame].weights() == grid_problem.keyframes[key].weights();
        }
        repeat &= t1.iterates() == t2.iterates() && s1.measures == s2.measures;
        notes.push(format!("grid/{update:?}: {} sweeps", t1.rows.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let cloud_keys = [[0.0, 0.0], [0.8, 0.3], [0.2, 1.0], [1.0, 1.2]]
        .iter()
        .map(|s| {
            PointCloud::from_points(
                &base
                    .iter()
                    .map(|p| vec![p[0] + s[0] + rng.gen_range(-0.1..0.1), p[1] + s[1]])
                    .collect::<Vec<_>>(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cloud_problem = SplineProblem::new(
        6,
        vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
        cloud_keys,
        0.05,
        None,
        BoundaryCondition::Natural,
    )?;
    let config = OptimizerConfig {
        max_outer: 200,
        seed: 3,
        ..Default::default()
    };
    let (s1, t1) = solve_pointcloud_spline(&cloud_problem, &config)?;
    let (s2, t2) = solve_pointcloud_spline(&cloud_problem, &config)?;
    monotone &= t1.is_monotone();
    for (frame, key) in [(0, 0), (2, 1), (4, 2), (6, 3)] {
        pinned &= s1.measures[frame].coords() == cloud_problem.keyframes[key].coords();
    }
    repeat &= t1.iterates() == t2.iterates() && s1.measures == s2.measures;
    notes.push(format!("cloud: {} sweeps", t1.rows.len()));
    Ok(vec![Outcome::new(
        "8",
        "optimizer properties",
        monotone && pinned && repeat,
        format!(
            "monotone {monotone}, pinned frames bit-identical {pinned}, identical seeds identical traces {repeat} ({})",
            notes.join(", ")
        ),
    )])
}

/// Non-commuting curve `m(t) = (t, t²)`, `σ(t) = R(0.8t) diag(1 + t, 1 − t/2) R(0.8t)ᵀ`.
fn rotating_curve(t: f64) -> Result<Gaussian> {
    let th = 0.8 * t;
    let r = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 + t, 1.0 - 0.5 * t]));
    let s = &r * d * r.transpose();
    Gaussian::new(DVector::from_vec(vec![t, t * t]), (&s + s.transpose()) * 0.5)
}

/// Least-squares slope of `log y` against `log x`.
fn fitted_order(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

/// Generalized-barycenter step term against the polarization surrogate on shrinking steps.
fn criterion_9() -> Result<Vec<Outcome>> {
    let t0 = 0.3;
    let hs = [0.2, 0.1, 0.05, 0.025];
    let mut gaps = Vec::new();
    for &h in &hs {
        let (a, b, c) = (rotating_curve(t0 - h)?, rotating_curve(t0)?, rotating_curve(t0 + h)?);
        let gen = gaussian_gen_barycenter(&b, &a, &c, 0.5)?;
        gaps.push((bures_distance2(&b, &gen)? - polarization_term(&a, &b, &c)?).abs());
    }
    let order = fitted_order(&hs, &gaps);
    Ok(vec![Outcome::new(
        "9",
        "polarization decay",
        order >= 4.5,
        format!(
            "h = 0.2..0.025: gaps {:.2e} {:.2e} {:.2e} {:.2e}, fitted order {order:.2} (limit ≥ 4.5)",
            gaps[0], gaps[1], gaps[2], gaps[3]
        ),
    )])
}
