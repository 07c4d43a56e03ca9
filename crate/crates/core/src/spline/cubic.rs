//! Piecewise cubic polynomials and classical interpolating cubic splines.
//!
//! Splines are computed from their knot second derivatives `M_i` with the usual tridiagonal
//! moment equations: natural ends set `M = 0`, Hermite ends prescribe the end slopes, and
//! periodic splines close the system cyclically (solved with the Sherman–Morrison correction).

use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// End conditions of an interpolating cubic spline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplineEnds {
    /// Zero second derivative at both ends.
    Natural,
    /// Prescribed first derivatives at both ends (clamped spline).
    Hermite { start_slope: f64, end_slope: f64 },
    /// Value, slope and curvature match across the ends; needs `y_first == y_last`.
    Periodic,
}

/// Piecewise cubic `c0 + c1·s + c2·s² + c3·s³`, `s = t − breaks[i]` on `[breaks[i], breaks[i+1]]`.
///
/// Outside the break range the curve is extended linearly with the end slopes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseCubic {
    pub breaks: Vec<f64>,
    pub coeffs: Vec<[f64; 4]>,
}

impl PiecewiseCubic {
    pub fn new(breaks: Vec<f64>, coeffs: Vec<[f64; 4]>) -> Result<Self> {
        if breaks.len() != coeffs.len() + 1 || coeffs.is_empty() {
            return Err(invalid("piecewise cubic needs one more break than pieces"));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("breaks must be strictly increasing"));
        }
        Ok(Self { breaks, coeffs })
    }

    /// Straight line through `(t0, y0)` and `(t1, y1)`.
    pub fn line(t0: f64, y0: f64, t1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![t0, t1], vec![[y0, (y1 - y0) / (t1 - t0), 0.0, 0.0]])
    }

    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn end(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    fn locate(&self, t: f64) -> usize {
        let n = self.coeffs.len();
        match self.breaks[1..n].binary_search_by(|b| b.total_cmp(&t)) {
            Ok(i) => i + 1,
            Err(i) => i,
        }
    }

    fn end_slope(&self) -> f64 {
        let i = self.coeffs.len() - 1;
        let h = self.breaks[i + 1] - self.breaks[i];
        let c = self.coeffs[i];
        c[1] + 2.0 * c[2] * h + 3.0 * c[3] * h * h
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < self.start() {
            return self.coeffs[0][0] + self.coeffs[0][1] * (t - self.start());
        }
        if t > self.end() {
            let i = self.coeffs.len() - 1;
            let h = self.breaks[i + 1] - self.breaks[i];
            let c = self.coeffs[i];
            let yend = c[0] + h * (c[1] + h * (c[2] + h * c[3]));
            return yend + self.end_slope() * (t - self.end());
        }
        let i = self.locate(t);
        let s = t - self.breaks[i];
        let c = self.coeffs[i];
        c[0] + s * (c[1] + s * (c[2] + s * c[3]))
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if t < self.start() {
            return self.coeffs[0][1];
        }
        if t > self.end() {
            return self.end_slope();
        }
        let i = self.locate(t);
        let s = t - self.breaks[i];
        let c = self.coeffs[i];
        c[1] + s * (2.0 * c[2] + 3.0 * s * c[3])
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        if t < self.start() || t > self.end() {
            return 0.0;
        }
        let i = self.locate(t);
        let s = t - self.breaks[i];
        let c = self.coeffs[i];
        2.0 * c[2] + 6.0 * c[3] * s
    }

    /// Exact `∫ |y''|²` over the break range.
    pub fn spline_energy(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(self.breaks.windows(2))
            .map(|(c, w)| {
                let h = w[1] - w[0];
                4.0 * c[2] * c[2] * h + 12.0 * c[2] * c[3] * h * h + 12.0 * c[3] * c[3] * h.powi(3)
            })
            .sum()
    }

    /// Exact `∫ |y'|²` over the break range.
    pub fn path_energy(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(self.breaks.windows(2))
            .map(|(c, w)| {
                let h = w[1] - w[0];
                c[1] * c[1] * h
                    + 2.0 * c[1] * c[2] * h * h
                    + (4.0 * c[2] * c[2] + 6.0 * c[1] * c[3]) * h.powi(3) / 3.0
                    + 3.0 * c[2] * c[3] * h.powi(4)
                    + 9.0 * c[3] * c[3] * h.powi(5) / 5.0
            })
            .sum()
    }

    /// Exact minimum over the break range (endpoints and interior critical points).
    pub fn min_value(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (c, w) in self.coeffs.iter().zip(self.breaks.windows(2)) {
            let h = w[1] - w[0];
            let p = |s: f64| c[0] + s * (c[1] + s * (c[2] + s * c[3]));
            best = best.min(p(0.0)).min(p(h));
            // Roots of c1 + 2c2 s + 3c3 s².
            let (qa, qb, qc) = (3.0 * c[3], 2.0 * c[2], c[1]);
            let mut roots = Vec::with_capacity(2);
            if qa.abs() < 1e-300 {
                if qb != 0.0 {
                    roots.push(-qc / qb);
                }
            } else {
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    roots.push((-qb + sq) / (2.0 * qa));
                    roots.push((-qb - sq) / (2.0 * qa));
                }
            }
            for s in roots {
                if s > 0.0 && s < h {
                    best = best.min(p(s));
                }
            }
        }
        best
    }

    /// Re-expresses a curve of period 1 given on `[a, a + 1]` with `0 ≤ a < 1` as pieces on
    /// `[0, 1]`, moving the part beyond 1 to the front.
    pub fn wrapped_to_unit(&self) -> Result<Self> {
        let a = self.start();
        if !(0.0..1.0).contains(&a) || ((self.end() - a) - 1.0).abs() > 1e-12 {
            return Err(invalid("wrapping needs a curve on [a, a + 1] with a in [0, 1)"));
        }
        if a == 0.0 {
            return Ok(self.clone());
        }
        let mut front: Vec<(f64, [f64; 4])> = Vec::new();
        let mut back: Vec<(f64, [f64; 4])> = Vec::new();
        for (i, c) in self.coeffs.iter().enumerate() {
            let (lo, hi) = (self.breaks[i], self.breaks[i + 1]);
            if hi <= 1.0 {
                back.push((lo, *c));
            } else if lo >= 1.0 {
                front.push((lo - 1.0, *c));
            } else {
                back.push((lo, *c));
                // Taylor shift of the same polynomial to start at t = 1.
                let s0 = 1.0 - lo;
                let shifted = [
                    c[0] + s0 * (c[1] + s0 * (c[2] + s0 * c[3])),
                    c[1] + s0 * (2.0 * c[2] + 3.0 * s0 * c[3]),
                    c[2] + 3.0 * c[3] * s0,
                    c[3],
                ];
                front.push((0.0, shifted));
            }
        }
        let pieces: Vec<(f64, [f64; 4])> = front.into_iter().chain(back).collect();
        let mut breaks: Vec<f64> = pieces.iter().map(|p| p.0).collect();
        breaks.push(1.0);
        Self::new(breaks, pieces.into_iter().map(|p| p.1).collect())
    }

    /// Extends the curve linearly so that it covers `[lo, hi]`.
    pub fn extended_to(&self, lo: f64, hi: f64) -> Self {
        let mut breaks = self.breaks.clone();
        let mut coeffs = self.coeffs.clone();
        if lo < self.start() {
            let c0 = self.eval(lo);
            breaks.insert(0, lo);
            coeffs.insert(0, [c0, self.coeffs[0][1], 0.0, 0.0]);
        }
        if hi > self.end() {
            let yend = self.eval(self.end());
            breaks.push(hi);
            coeffs.push([yend, self.end_slope(), 0.0, 0.0]);
        }
        Self { breaks, coeffs }
    }
}

/// Solves a tridiagonal system with sub-diagonal `a`, diagonal `b`, super-diagonal `c`.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    if b[0] == 0.0 {
        return Err(Error::SingularSystem);
    }
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let den = b[i] - a[i] * cp[i - 1];
        if den.abs() < 1e-300 || !den.is_finite() {
            return Err(Error::SingularSystem);
        }
        cp[i] = if i + 1 < n { c[i] / den } else { 0.0 };
        dp[i] = (d[i] - a[i] * dp[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    Ok(x)
}

/// Cyclic tridiagonal solve: corners `a[0]` (row 0, last column) and `c[n-1]` (last row,
/// column 0), via Sherman–Morrison.
fn cyclic_thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if n < 3 {
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] += b[i];
            m[(i, (i + 1) % n)] += c[i];
            m[(i, (i + n - 1) % n)] += a[i];
        }
        return m
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(d))
            .map(|v| v.iter().copied().collect())
            .ok_or(Error::SingularSystem);
    }
    let alpha = c[n - 1];
    let beta = a[0];
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= alpha * beta / gamma;
    let x = thomas(a, &bb, c, d)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(a, &bb, c, &u)?;
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    Ok(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
}

/// Interpolating cubic spline through `(t_i, y_i)`.
pub fn cubic_spline_interpolate(t: &[f64], y: &[f64], ends: SplineEnds) -> Result<PiecewiseCubic> {
    let n = t.len();
    if n < 2 || y.len() != n {
        return Err(invalid("a spline needs at least two knots with one value each"));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("knot times must be strictly increasing"));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite knot"));
    }
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let slope: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let moments: Vec<f64> = match ends {
        SplineEnds::Natural => {
            if n == 2 {
                vec![0.0, 0.0]
            } else {
                let m = n - 2;
                let mut a = vec![0.0; m];
                let mut b = vec![0.0; m];
                let mut c = vec![0.0; m];
                let mut d = vec![0.0; m];
                for r in 0..m {
                    let i = r + 1;
                    a[r] = h[i - 1];
                    b[r] = 2.0 * (h[i - 1] + h[i]);
                    c[r] = h[i];
                    d[r] = 6.0 * (slope[i] - slope[i - 1]);
                }
                let inner = thomas(&a, &b, &c, &d)?;
                let mut all = vec![0.0];
                all.extend(inner);
                all.push(0.0);
                all
            }
        }
        SplineEnds::Hermite {
            start_slope,
            end_slope,
        } => {
            let mut a = vec![0.0; n];
            let mut b = vec![0.0; n];
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            b[0] = 2.0 * h[0];
            c[0] = h[0];
            d[0] = 6.0 * (slope[0] - start_slope);
            for i in 1..n - 1 {
                a[i] = h[i - 1];
                b[i] = 2.0 * (h[i - 1] + h[i]);
                c[i] = h[i];
                d[i] = 6.0 * (slope[i] - slope[i - 1]);
            }
            a[n - 1] = h[n - 2];
            b[n - 1] = 2.0 * h[n - 2];
            d[n - 1] = 6.0 * (end_slope - slope[n - 2]);
            thomas(&a, &b, &c, &d)?
        }
        SplineEnds::Periodic => {
            let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if (y[0] - y[n - 1]).abs() > 1e-12 * scale {
                return Err(invalid("periodic spline needs equal first and last values"));
            }
            let m = n - 1;
            if m == 1 {
                vec![0.0, 0.0]
            } else {
                let mut a = vec![0.0; m];
                let mut b = vec![0.0; m];
                let mut c = vec![0.0; m];
                let mut d = vec![0.0; m];
                for i in 0..m {
                    let hp = h[(i + m - 1) % m];
                    let hi = h[i];
                    a[i] = hp;
                    b[i] = 2.0 * (hp + hi);
                    c[i] = hi;
                    d[i] = 6.0 * (slope[i] - slope[(i + m - 1) % m]);
                }
                let mut all = cyclic_thomas(&a, &b, &c, &d)?;
                all.push(all[0]);
                all
            }
        }
    };
    let coeffs = (0..n - 1)
        .map(|i| {
            let hi = h[i];
            [
                y[i],
                slope[i] - hi * (2.0 * moments[i] + moments[i + 1]) / 6.0,
                moments[i] / 2.0,
                (moments[i + 1] - moments[i]) / (6.0 * hi),
            ]
        })
        .collect();
    PiecewiseCubic::new(t.to_vec(), coeffs)
}
