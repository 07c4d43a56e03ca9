//! Temporal extension of a knot tuple `σ_0..σ_K` to a C¹ curve on `[0, 1]`.
//!
//! With `t_{k±½} = (k ± ½)/K` the curve is linear on the two end half-intervals and quadratic on
//! every `[t_{k−½}, t_{k+½}]`:
//!
//! ```text
//! η(t) = σ_0 + (σ_1 − σ_0) K t                                             on [0, t_{½}]
//! η(t) = (σ_{k−1} + σ_k)/2 + (σ_k − σ_{k−1}) K s + (σ_{k+1} − 2σ_k + σ_{k−1}) K² s²/2
//!        with s = t − t_{k−½}                                               on [t_{k−½}, t_{k+½}]
//! η(t) = σ_{K−1} + (σ_K − σ_{K−1}) K (t − t_{K−1})                         on [t_{K−½}, 1]
//! ```
//!
//! Its curvature is the constant `K²(σ_{k+1} − 2σ_k + σ_{k−1})` on each interior piece, so
//! `∫|η̈|²` equals the discrete spline energy `4K³ Σ |σ_k − (σ_{k−1} + σ_{k+1})/2|²` exactly.

use serde::Serialize;

use super::cubic::PiecewiseCubic;
use crate::error::{invalid, Result};

/// The extension of vector-valued knots, one piecewise polynomial per component.
#[derive(Debug, Clone, Serialize)]
pub struct TemporalExtension {
    pub k: usize,
    pub knots: Vec<Vec<f64>>,
    pub components: Vec<PiecewiseCubic>,
}

/// Builds the extension of `knots[0..=K]`; every knot must have the same length.
pub fn temporal_extension(knots: &[Vec<f64>]) -> Result<TemporalExtension> {
    if knots.len() < 3 {
        return Err(invalid("temporal extension needs K >= 2"));
    }
    let k = knots.len() - 1;
    let dim = knots[0].len();
    if dim == 0 || knots.iter().any(|s| s.len() != dim) {
        return Err(invalid("knots must be non-empty vectors of equal length"));
    }
    let kf = k as f64;
    let mut breaks = vec![0.0];
    breaks.extend((1..=k).map(|j| (j as f64 - 0.5) / kf));
    breaks.push(1.0);
    let components = (0..dim)
        .map(|d| {
            let s = |j: usize| knots[j][d];
            let mut coeffs = Vec::with_capacity(k + 1);
            coeffs.push([s(0), kf * (s(1) - s(0)), 0.0, 0.0]);
            for j in 1..k {
                coeffs.push([
                    0.5 * (s(j - 1) + s(j)),
                    kf * (s(j) - s(j - 1)),
                    0.5 * kf * kf * (s(j + 1) - 2.0 * s(j) + s(j - 1)),
                    0.0,
                ]);
            }
            coeffs.push([0.5 * (s(k - 1) + s(k)), kf * (s(k) - s(k - 1)), 0.0, 0.0]);
            PiecewiseCubic::new(breaks.clone(), coeffs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TemporalExtension {
        k,
        knots: knots.to_vec(),
        components,
    })
}

impl TemporalExtension {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(t)).collect()
    }

    pub fn derivative(&self, t: f64) -> Vec<f64> {
        self.components.iter().map(|c| c.derivative(t)).collect()
    }

    /// `∫_0^1 |η̈|²`.
    pub fn spline_energy(&self) -> f64 {
        self.components.iter().map(PiecewiseCubic::spline_energy).sum()
    }

    /// `∫_0^1 |η̇|²`.
    pub fn path_energy(&self) -> f64 {
        self.components.iter().map(PiecewiseCubic::path_energy).sum()
    }

    /// Smallest component value over `[0, 1]`.
    pub fn min_value(&self) -> f64 {
        self.components
            .iter()
            .map(PiecewiseCubic::min_value)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Discrete spline energy `4K³ Σ_{k=1}^{K−1} |σ_k − (σ_{k−1} + σ_{k+1})/2|²` of vector knots.
pub fn knot_spline_energy(knots: &[Vec<f64>]) -> f64 {
    let k = knots.len() - 1;
    let kf = k as f64;
    let s: f64 = (1..k)
        .map(|j| {
            knots[j]
                .iter()
                .zip(&knots[j - 1])
                .zip(&knots[j + 1])
                .map(|((c, p), n)| (c - 0.5 * (p + n)).powi(2))
                .sum::<f64>()
        })
        .sum();
    4.0 * kf.powi(3) * s
}

/// Discrete path energy `K Σ_{k=0}^{K−1} |σ_{k+1} − σ_k|²` of vector knots.
pub fn knot_path_energy(knots: &[Vec<f64>]) -> f64 {
    let k = knots.len() - 1;
    let s: f64 = knots
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).powi(2)).sum::<f64>())
        .sum();
    k as f64 * s
}

/// Bound on `|∫|η̇|² − 𝐄̂ᴷ|` from the knot differences:
/// `K (Σ_{k=1}^{K−1} |Δσ_k|²)^{½} (Σ_{k=1}^{K−1} |Δ²σ_k|²)^{½} + (K/3) Σ_{k=1}^{K−1} |Δ²σ_k|²`
/// with `Δσ_k = σ_k − σ_{k−1}` and `Δ²σ_k = σ_{k+1} − 2σ_k + σ_{k−1}`.
///
/// For samples of a fixed `H²` curve both sums scale so that `K ·` bound stays bounded.
pub fn path_energy_gap_bound(knots: &[Vec<f64>]) -> f64 {
    let k = knots.len() - 1;
    let sq = |f: &dyn Fn(usize) -> f64| (1..k).map(f).sum::<f64>();
    let d1 = sq(&|j| {
        knots[j].iter().zip(&knots[j - 1]).map(|(a, b)| (a - b).powi(2)).sum()
    });
    let d2 = sq(&|j| {
        (0..knots[j].len())
            .map(|c| (knots[j + 1][c] - 2.0 * knots[j][c] + knots[j - 1][c]).powi(2))
            .sum()
    });
    let kf = k as f64;
    kf * d1.sqrt() * d2.sqrt() + kf / 3.0 * d2
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sampled(k: usize, f: impl Fn(f64) -> Vec<f64>) -> Vec<Vec<f64>> {
        (0..=k).map(|j| f(j as f64 / k as f64)).collect()
    }

    #[test]
    fn collinear_knots_give_a_line() {
        let knots = sampled(6, |t| vec![1.0 + 2.0 * t, -t]);
        let eta = temporal_extension(&knots).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let v = eta.eval(t);
            assert!((v[0] - (1.0 + 2.0 * t)).abs() < 1e-14);
            assert!((v[1] + t).abs() < 1e-14);
        }
        assert!(eta.spline_energy().abs() < 1e-20);
    }

    #[test]
    fn value_at_interior_knot_times() {
        // Evaluating the middle branch at s = 1/(2K) gives (σ_{k−1} + 6σ_k + σ_{k+1})/8.
        let knots = vec![vec![0.0], vec![1.0], vec![5.0], vec![2.0]];
        let eta = temporal_extension(&knots).unwrap();
        for k in 1..3 {
            let t = k as f64 / 3.0;
            let expect = (knots[k - 1][0] + 6.0 * knots[k][0] + knots[k + 1][0]) / 8.0;
            assert!((eta.eval(t)[0] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn is_c1_at_breaks() {
        let knots = vec![vec![1.0], vec![0.4], vec![0.9], vec![0.2], vec![1.5]];
        let eta = temporal_extension(&knots).unwrap();
        for b in &eta.components[0].breaks[1..5] {
            let d = 1e-10;
            assert!((eta.eval(b - d)[0] - eta.eval(b + d)[0]).abs() < 1e-8);
            assert!((eta.derivative(b - d)[0] - eta.derivative(b + d)[0]).abs() < 1e-7);
        }
    }

    #[test]
    fn path_energy_gap_shrinks_like_one_over_k() {
        let curve = |t: f64| vec![1.0 + 0.3 * t.sin(), 1.2 + 0.2 * t.cos(), t, t.sin()];
        let mut constants = Vec::new();
        for k in [8, 16, 32] {
            let knots = sampled(k, curve);
            let eta = temporal_extension(&knots).unwrap();
            let gap = (eta.path_energy() - knot_path_energy(&knots)).abs();
            let bound = path_energy_gap_bound(&knots);
            assert!(gap <= bound, "K = {k}: gap {gap} above bound {bound}");
            constants.push(k as f64 * bound);
        }
        // C_K = K · bound settles as K doubles.
        assert!((constants[2] / constants[1] - 1.0).abs() < 0.1, "{constants:?}");
    }

    proptest! {
        #[test]
        fn spline_energy_identity(vals in prop::collection::vec(-5.0f64..5.0, 6..40)) {
            let knots: Vec<Vec<f64>> = vals.chunks(2).filter(|c| c.len() == 2).map(|c| c.to_vec()).collect();
            prop_assume!(knots.len() >= 3);
            let eta = temporal_extension(&knots).unwrap();
            let a = eta.spline_energy();
            let b = knot_spline_energy(&knots);
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }

        #[test]
        fn stays_in_local_convex_hull(vals in prop::collection::vec(0.01f64..3.0, 3..12)) {
            let knots: Vec<Vec<f64>> = vals.iter().map(|v| vec![*v]).collect();
            let eta = temporal_extension(&knots).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(eta.min_value() >= lo - 1e-12);
        }
    }
}
