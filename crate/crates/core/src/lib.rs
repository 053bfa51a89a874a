//! Unconditional nonparametric maximum likelihood estimation for
//! length-biased, right-censored survival data from prevalent cohorts.
//!
//! The crate covers the whole pipeline:
//!
//! - [`distributions`]: parametric lifetime and censoring families, the
//!   length-bias transform and the closed-form observable densities.
//! - [`simulate`]: prevalent-cohort generators for the three sampling
//!   schemes plus an incident-population rejection oracle.
//! - [`estimator`]: the EM / fixed-point NPMLE, likelihood, score residual,
//!   a brute-force oracle and a naive product-limit comparator.
//! - [`operator`] and [`asymptotics`]: the linear operator machinery linking
//!   the estimation error to empirical processes, its inverse, Gaussian
//!   limit-process simulation and pointwise confidence bands.
//! - [`study`]: a reproducible, parallel Monte Carlo harness.
//! - [`io`]: CSV tables for cohorts, fits, bands and study summaries.
//!
//! The numerical core ([`MassFunction`], [`StepFunction`], the estimator,
//! quadrature, dense linear algebra and [`GridOperator`]) is generic over
//! the floating-point type through [`Scalar`]. Model-facing code works in
//! `f64`; the aliases below name the concrete instantiations.

pub mod asymptotics;
pub mod distributions;
pub mod error;
pub mod estimator;
pub mod io;
pub mod linalg;
pub mod mass;
pub mod operator;
pub mod quadrature;
pub mod scalar;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};
pub use estimator::{FitConfig, FitInit, FitResult};
pub use mass::{MassFunction, StepFunction};
pub use operator::GridOperator;
pub use scalar::Scalar;
pub use simulate::{CohortRecord, Scenario, Scheme};

/// `f64` mass function; the workhorse type for Ĝ, G_m, F_n and friends.
pub type Mass = MassFunction<f64>;
/// `f64` right-continuous step function.
pub type Step = StepFunction<f64>;
/// `f64` cohort record.
pub type Record = CohortRecord<f64>;
/// `f64` fit result.
pub type Fit = FitResult<f64>;
/// `f64` discretized operator.
pub type Operator = GridOperator<f64>;
