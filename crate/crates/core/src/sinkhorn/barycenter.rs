//! Fixed-support entropic barycenters by iterative Bregman projections, in the log domain.
//!
//! With `L(x)_i = log Σ_j exp(x_j − C_ij/ε)`, inputs `β_k` and weights `λ_k`, one sweep is
//!
//! ```text
//! la_k = log β_k − L(lb_k)
//! lα   = ld + Σ_k λ_k L(la_k)
//! lb_k = lα − L(la_k)
//! ld   = ½ (ld + lα − L(ld))
//! ```
//!
//! The `ld` correction removes the entropic blur (debiased barycenter). Keeping `ld ≡ 0` gives
//! the classical blurred barycenter. On cold starts the scalings are converted to potentials and
//! carried down an ε ladder, which keeps the number of sweeps at the target ε small.

use serde::{Deserialize, Serialize};

use super::kernel::{GridKernel, LogKernel};
use super::{Marginal, SinkhornParams};
use crate::error::{invalid, Error, Result};
use crate::measures::{DiscreteMeasure, Grid2};

/// Knobs for [`entropic_barycenter_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarycenterParams {
    pub eps: f64,
    /// Stop when the total-variation change of the barycenter over one sweep is below this.
    pub tol: f64,
    pub max_iter: usize,
    pub debias: bool,
}

impl From<&SinkhornParams> for BarycenterParams {
    fn from(p: &SinkhornParams) -> Self {
        Self {
            eps: p.eps,
            tol: p.tol,
            max_iter: p.max_iter,
            debias: p.debias,
        }
    }
}

/// Result of a barycenter computation.
#[derive(Debug, Clone)]
pub struct EntropicBarycenter {
    /// `λ = (1 − t, t)` for two inputs.
    pub lambdas: Vec<f64>,
    pub result: DiscreteMeasure,
    /// Per-input potentials `(ε·la_k, ε·lb_k)` on the input and barycenter sides.
    pub potentials: Vec<(Vec<f64>, Vec<f64>)>,
    pub iterations: usize,
    pub residual: f64,
}

/// Barycenter `Bar_ε^t(μ₁, μ₂)` with weights `(1 − t, t)`, debiased by default.
pub fn entropic_barycenter(
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    t: f64,
    params: &SinkhornParams,
) -> Result<EntropicBarycenter> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("t = {t} is outside [0, 1]")));
    }
    // The debiased fixed point at an endpoint is the endpoint itself (S_ε(α, μ) = 0 iff α = μ);
    // returning it directly avoids the slow final contraction of the correction term.
    if params.debias && (t == 0.0 || t == 1.0) {
        if mu1.grid() != mu2.grid() {
            return Err(Error::BackendMismatch("barycenter inputs on different grids".into()));
        }
        let src = if t == 0.0 { mu1 } else { mu2 };
        return Ok(EntropicBarycenter {
            lambdas: vec![1.0 - t, t],
            result: src.clone(),
            potentials: Vec::new(),
            iterations: 0,
            residual: 0.0,
        });
    }
    entropic_barycenter_with(&[mu1, mu2], &[1.0 - t, t], &params.into())
}

/// Barycenter of any number of grid measures.
pub fn entropic_barycenter_with(
    inputs: &[&DiscreteMeasure],
    lambdas: &[f64],
    params: &BarycenterParams,
) -> Result<EntropicBarycenter> {
    if inputs.is_empty() || inputs.len() != lambdas.len() {
        return Err(invalid("barycenter needs one weight per input"));
    }
    if lambdas.iter().any(|&l| !(l >= 0.0)) || (lambdas.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(invalid("barycenter weights must be nonnegative and sum to 1"));
    }
    if !(params.eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    let grid: Grid2 = *inputs[0].grid();
    if inputs.iter().any(|m| *m.grid() != grid) {
        return Err(Error::BackendMismatch("barycenter inputs on different grids".into()));
    }
    let n = grid.len();
    let nk = inputs.len();
    let marginals: Vec<Marginal> = inputs.iter().map(|m| Marginal::new(m.weights())).collect();

    // Potentials (cost units) survive ε changes; scalings are potentials divided by ε.
    let mut pa = vec![vec![0.0; n]; nk];
    let mut pb = vec![vec![0.0; n]; nk];
    let mut pd = vec![0.0; n];
    let mut alpha_log = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut lka = vec![vec![0.0; n]; nk];

    let mut sweep = |kernel: &GridKernel,
                     pa: &mut [Vec<f64>],
                     pb: &mut [Vec<f64>],
                     pd: &mut Vec<f64>,
                     alpha_log: &mut Vec<f64>|
     -> Result<()> {
        let eps = kernel.eps();
        for k in 0..nk {
            if lambdas[k] == 0.0 {
                continue;
            }
            let lb: Vec<f64> = pb[k].iter().map(|p| p / eps).collect();
            kernel.lse(&lb, &mut scratch);
            for i in 0..n {
                pa[k][i] = eps * (marginals[k].log_weights[i] - scratch[i]);
            }
            let la: Vec<f64> = pa[k].iter().map(|p| p / eps).collect();
            kernel.lse(&la, &mut lka[k]);
        }
        for i in 0..n {
            let mut s = if params.debias { pd[i] / eps } else { 0.0 };
            for k in 0..nk {
                if lambdas[k] > 0.0 {
                    s += lambdas[k] * lka[k][i];
                }
            }
            alpha_log[i] = s;
        }
        for k in 0..nk {
            if lambdas[k] == 0.0 {
                continue;
            }
            for i in 0..n {
                pb[k][i] = eps * (alpha_log[i] - lka[k][i]);
            }
        }
        if params.debias {
            let ld: Vec<f64> = pd.iter().map(|p| p / eps).collect();
            kernel.lse(&ld, &mut scratch);
            for i in 0..n {
                pd[i] = eps * 0.5 * (ld[i] + alpha_log[i] - scratch[i]);
            }
        }
        if alpha_log.iter().any(|v| !v.is_finite()) {
            return Err(Error::EpsTooSmall { eps });
        }
        Ok(())
    };

    let mut e = grid.diameter2().max(params.eps);
    while e > 2.0 * params.eps {
        sweep(&GridKernel::new(grid, e), &mut pa, &mut pb, &mut pd, &mut alpha_log)?;
        e *= 0.5;
    }

    let kernel = GridKernel::new(grid, params.eps);
    let mut current = normalize_exp(&alpha_log);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        sweep(&kernel, &mut pa, &mut pb, &mut pd, &mut alpha_log)?;
        let next = normalize_exp(&alpha_log);
        residual = 0.5 * next.iter().zip(&current).map(|(a, b)| (a - b).abs()).sum::<f64>();
        current = next;
        if residual <= params.tol {
            break;
        }
    }
    if residual > params.tol {
        return Err(Error::NoConvergence {
            iterations,
            residual,
            state: None,
        });
    }
    Ok(EntropicBarycenter {
        lambdas: lambdas.to_vec(),
        result: DiscreteMeasure::from_weights(grid, current)?,
        potentials: pa.into_iter().zip(pb).collect(),
        iterations,
        residual,
    })
}

fn normalize_exp(log: &[f64]) -> Vec<f64> {
    let m = log.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let v: Vec<f64> = log.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{moments, rasterize_gaussian, Gaussian};

    fn gauss(g: Grid2, m: [f64; 2], s: [f64; 2]) -> DiscreteMeasure {
        rasterize_gaussian(&Gaussian::diagonal(&m, &s).unwrap(), g).unwrap()
    }

    #[test]
    fn t_zero_returns_first_input() {
        let g = Grid2::new(33, 33).unwrap();
        let a = gauss(g, [0.35, 0.5], [0.08, 0.1]);
        let b = gauss(g, [0.65, 0.5], [0.1, 0.08]);
        let params = SinkhornParams {
            eps: 2e-3,
            tol: 1e-9,
            ..Default::default()
        };
        let bar = entropic_barycenter(&a, &b, 0.0, &params).unwrap();
        assert!(bar.result.total_variation(&a) <= params.tol);

        // The iteration itself also lands on the first input.
        let iterated = entropic_barycenter_with(&[&a, &b], &[1.0, 0.0], &(&params).into()).unwrap();
        let tv = iterated.result.total_variation(&a);
        assert!(tv < 1e-5, "{tv}");
    }

    #[test]
    fn midpoint_of_shifted_gaussians() {
        // One-dimensional in spirit: equal y profiles, means 0.3 and 0.7 along x.
        let g = Grid2::new(65, 65).unwrap();
        let a = gauss(g, [0.3, 0.5], [0.1, 0.1]);
        let b = gauss(g, [0.7, 0.5], [0.1, 0.1]);
        let bar = entropic_barycenter(&a, &b, 0.5, &SinkhornParams::with_eps(1e-3)).unwrap();
        let (m, c) = moments(&bar.result);
        assert!((m[0] - 0.5).abs() < 0.025);
        assert!((c[(0, 0)].sqrt() / 0.1 - 1.0).abs() < 0.05);
    }

    #[test]
    fn midpoint_std_is_average() {
        let g = Grid2::new(65, 65).unwrap();
        let a = gauss(g, [0.5, 0.5], [0.05, 0.1]);
        let b = gauss(g, [0.5, 0.5], [0.15, 0.1]);
        let bar = entropic_barycenter(&a, &b, 0.5, &SinkhornParams::with_eps(5e-4)).unwrap();
        let (_, c) = moments(&bar.result);
        assert!((c[(0, 0)].sqrt() / 0.1 - 1.0).abs() < 0.05, "std {}", c[(0, 0)].sqrt());
    }

    #[test]
    fn identical_inputs_are_a_fixed_point() {
        let g = Grid2::new(25, 25).unwrap();
        let a = gauss(g, [0.45, 0.55], [0.1, 0.07]);
        let params = SinkhornParams {
            eps: 2e-3,
            tol: 1e-10,
            ..Default::default()
        };
        let bar = entropic_barycenter(&a, &a, 0.3, &params).unwrap();
        assert!(bar.result.total_variation(&a) < 1e-7);
    }

    #[test]
    fn rejects_bad_t() {
        let g = Grid2::new(5, 5).unwrap();
        let a = DiscreteMeasure::uniform(g);
        assert!(entropic_barycenter(&a, &a, 1.5, &SinkhornParams::default()).is_err());
    }
}
