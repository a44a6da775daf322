//! Deformed exponential (`phi`-exponential) distribution families with mean
//! and covariance parameters.
//!
//! * [`phi`]: generators, `ln_phi`/`exp_phi`, growth-exponent checks.
//! * [`normalization`]: the integrals `f_phi(p, lambda)` and the solver for
//!   the normalization pair `(lambda, c)`.
//! * [`family`]: the `N` and `G` families, moment verification, distance to
//!   the family, and the coincidence test between them.
//! * [`transport`]: closed-form Wasserstein geometry on the `G` family.
//! * [`evolution`]: finite-volume integration of the nonlinear flow
//!   `d rho/dt = div(rho grad(ln_phi rho + c |x|^2))` and its covariance ODE.

pub mod error;
pub mod evolution;
pub mod export;
pub mod extended;
pub mod family;
pub mod grid;
pub mod normalization;
pub mod phi;
pub mod quadrature;
pub mod transport;

pub use error::{Error, Result};
pub use evolution::{FlowConfig, FlowTrajectory, MomentTrajectory};
pub use extended::Extended;
pub use family::{FamilyPoint, FitResult, MomentReport};
pub use grid::DensityGrid;
pub use normalization::{FamilyTag, NormalizationConstants};
pub use phi::{validate_ord, DeformedLogExp, Generator, OrdReport, PhiSpec, TableGenerator};
pub use transport::{GaussianParams, OptimalMap};
