//! The `oracle` subcommand: cross-checks of the exact transport solvers on random small
//! instances against independent references.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wspline_core::ot_exact::{optimal_assignment, wasserstein2_1d, wasserstein2_exact_small};
use wspline_core::sinkhorn::{point_divergence, SinkhornParams};
use wspline_core::WeightedPoints;

/// Outcome of one cross-check.
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const TRIALS: usize = 25;

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, uniform: bool) -> WeightedPoints {
    let coords: Vec<f64> = (0..n * dim).map(|_| rng.gen::<f64>()).collect();
    let weights: Vec<f64> = if uniform {
        vec![1.0 / n as f64; n]
    } else {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|w| w / s).collect()
    };
    WeightedPoints::new(dim, coords, weights).expect("valid random points")
}

/// Minimum of `cost(perm)` over all permutations of `0..n`, by Heap's algorithm.
fn brute_force_assignment(cost: &[f64], n: usize) -> f64 {
    let mut perm: Vec<usize> = (0..n).collect();
    let value = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>();
    let mut best = value(&perm);
    let mut c = vec![0; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            let swap = if i % 2 == 0 { 0 } else { c[i] };
            perm.swap(swap, i);
            best = best.min(value(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn check(name: &'static str, worst: Result<f64, String>, tol: f64) -> OracleCheck {
    match worst {
        Ok(err) => OracleCheck {
            name,
            passed: err <= tol,
            detail: format!("worst error {err:.3e}, tolerance {tol:.1e}"),
        },
        Err(e) => OracleCheck {
            name,
            passed: false,
            detail: e,
        },
    }
}

fn assignment_vs_permutations(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let n = rng.gen_range(1..=6);
        let cost: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>()).collect();
        let perm = optimal_assignment(&cost, n).map_err(|e| e.to_string())?;
        let got: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        worst = worst.max((got - brute_force_assignment(&cost, n)).abs());
    }
    Ok(worst)
}

fn exact_vs_permutations(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let n = rng.gen_range(1..=5);
        let mu = random_points(rng, n, 2, true);
        let nu = random_points(rng, n, 2, true);
        let cost: Vec<f64> = (0..n * n).map(|k| mu.dist2(k / n, &nu, k % n)).collect();
        let (w2, _) = wasserstein2_exact_small(&mu, &nu).map_err(|e| e.to_string())?;
        worst = worst.max((w2 - brute_force_assignment(&cost, n) / n as f64).abs());
    }
    Ok(worst)
}

fn exact_vs_quantiles(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let (n, m) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let mu = random_points(rng, n, 1, false);
        let nu = random_points(rng, m, 1, false);
        let (w2, _) = wasserstein2_exact_small(&mu, &nu).map_err(|e| e.to_string())?;
        let q = wasserstein2_1d(&mu, &nu).map_err(|e| e.to_string())?;
        worst = worst.max((w2 - q).abs());
    }
    Ok(worst)
}

/// Debiased divergence at small ε against the exact value, relative to the entropic allowance
/// `max(10⁻³, 3ε ln n)`. Values at most 1 pass.
fn sinkhorn_vs_exact(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let (n, m) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
        let mu = random_points(rng, n, 2, false);
        let nu = random_points(rng, m, 2, false);
        let eps = 1e-3 * mu.joint_diameter2(&nu);
        let params = SinkhornParams {
            tol: 1e-10,
            ..SinkhornParams::with_eps(eps)
        };
        let (w2, _) = wasserstein2_exact_small(&mu, &nu).map_err(|e| e.to_string())?;
        let s = point_divergence(&mu, &nu, &params).map_err(|e| e.to_string())?.value;
        let n = mu.len().max(nu.len()) as f64;
        let allowance = (3.0 * eps * n.ln()).max(1e-3);
        worst = worst.max((s - w2).abs() / allowance);
    }
    Ok(worst)
}

/// Runs every cross-check with the given seed.
pub fn run_oracles(seed: u64) -> Vec<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        check("assignment_vs_permutations", assignment_vs_permutations(&mut rng), 1e-12),
        check("exact_vs_permutations", exact_vs_permutations(&mut rng), 1e-9),
        check("exact_vs_quantiles_1d", exact_vs_quantiles(&mut rng), 1e-9),
        check("sinkhorn_vs_exact", sinkhorn_vs_exact(&mut rng), 1.0),
    ]
}
