//! Time-discrete spline interpolation of probability measures in Wasserstein space.
//!
//! The crate is organised bottom-up:
//!
//! - [`measures`]: grids, discrete measures, point clouds and Gaussian parameters.
//! - [`io`]: CSV and binary PGM density files.
//! - [`ot_exact`]: exact transport for tiny instances and the 1D quantile formulas.
//! - [`sinkhorn`]: log-domain entropic transport, divergences, gradients and barycenters.
//! - [`gaussian`]: closed-form Bures–Wasserstein calculus and the diagonal Gaussian E-spline.
//! - [`spline`]: discrete path and spline energies over interchangeable transport backends,
//!   classical cubic splines and the temporal extension of discrete knots.
//! - [`optimizer`]: inertial block minimisation of the discrete spline objective on grids and
//!   point clouds.
//! - [`baselines`]: the T-spline baseline built from chained Monge maps.

pub mod baselines;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod measures;
pub mod optimizer;
pub mod ot_exact;
pub mod sinkhorn;
pub mod spline;

pub use error::{Error, Result};
pub use measures::{DiscreteMeasure, Gaussian, Grid2, PointCloud, WeightedPoints};
