//! T-spline baseline for one-dimensional keyframes.
//!
//! Samples of the first keyframe are pushed through the chain of optimal maps between
//! consecutive keyframes, and each sample's chain of positions is interpolated by a natural cubic
//! spline in time. On the line all optimal maps are monotone rearrangements, so the chain of a
//! sample drawn at quantile level `u` is `(Q_1(u), ..., Q_I(u))` with `Q_i` the quantile function
//! of keyframe `i`. For Gaussian keyframes this is the composition of the affine maps
//! `x ↦ m_{i+1} + (s_{i+1}/s_i)(x − m_i)`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::measures::{Gaussian, WeightedPoints};
use crate::ot_exact::quantile_1d;
use crate::spline::cubic::{cubic_spline_interpolate, PiecewiseCubic, SplineEnds};

/// One-dimensional keyframes for the T-spline.
#[derive(Debug, Clone)]
pub enum TKeyframes {
    Gaussians(Vec<Gaussian>),
    Measures(Vec<WeightedPoints>),
}

impl TKeyframes {
    fn len(&self) -> usize {
        match self {
            TKeyframes::Gaussians(g) => g.len(),
            TKeyframes::Measures(m) => m.len(),
        }
    }
}

/// Per-sample trajectories and their pushforward summary.
#[derive(Debug, Clone, Serialize)]
pub struct TSplineResult {
    /// Quantile levels `u_i = (i + ½)/n` of the samples.
    pub levels: Vec<f64>,
    /// Chain values per sample at the keyframe times.
    pub chains: Vec<Vec<f64>>,
    pub trajectories: Vec<PiecewiseCubic>,
    pub query_times: Vec<f64>,
    /// `values[q][i]`: sample `i` at query time `q`.
    pub values: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population standard deviation over samples.
    pub std: Vec<f64>,
}

/// Quantile-stratified levels `(i + ½)/n`.
pub fn stratified_levels(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

fn chain_values(keys: &TKeyframes, levels: &[f64]) -> Result<Vec<Vec<f64>>> {
    match keys {
        TKeyframes::Gaussians(gs) => {
            if gs.iter().any(|g| g.dim() != 1) {
                return Err(invalid("T-splines need one-dimensional keyframes"));
            }
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            let (m0, s0) = (gs[0].mean()[0], gs[0].std()[(0, 0)]);
            Ok(levels
                .iter()
                .map(|&u| {
                    let mut x = m0 + s0 * normal.inverse_cdf(u);
                    let mut chain = vec![x];
                    for w in gs.windows(2) {
                        let (ma, sa) = (w[0].mean()[0], w[0].std()[(0, 0)]);
                        let (mb, sb) = (w[1].mean()[0], w[1].std()[(0, 0)]);
                        x = mb + sb / sa * (x - ma);
                        chain.push(x);
                    }
                    chain
                })
                .collect())
        }
        TKeyframes::Measures(ms) => {
            if ms.iter().any(|m| m.dim() != 1) {
                return Err(invalid("T-splines need one-dimensional keyframes"));
            }
            levels
                .iter()
                .map(|&u| ms.iter().map(|m| quantile_1d(m, u)).collect())
                .collect()
        }
    }
}

/// T-spline through keyframes at `times`, evaluated at `query_times`.
pub fn t_spline_1d(
    keys: &TKeyframes,
    times: &[f64],
    n_samples: usize,
    query_times: &[f64],
) -> Result<TSplineResult> {
    if keys.len() < 2 || keys.len() != times.len() {
        return Err(invalid("T-splines need at least two keyframes with one time each"));
    }
    if n_samples == 0 {
        return Err(invalid("n_samples must be positive"));
    }
    let levels = stratified_levels(n_samples);
    let chains = chain_values(keys, &levels)?;
    let trajectories = chains
        .iter()
        .map(|c| cubic_spline_interpolate(times, c, SplineEnds::Natural))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<Vec<f64>> = query_times
        .iter()
        .map(|&t| trajectories.iter().map(|tr| tr.eval(t)).collect())
        .collect();
    let n = n_samples as f64;
    let mean: Vec<f64> = values.iter().map(|v| v.iter().sum::<f64>() / n).collect();
    let std = values
        .iter()
        .zip(&mean)
        .map(|(v, m)| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    Ok(TSplineResult {
        levels,
        chains,
        trajectories,
        query_times: query_times.to_vec(),
        values,
        mean,
        std,
    })
}
