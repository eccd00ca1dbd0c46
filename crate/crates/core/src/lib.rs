//! Numerical laboratory for optimal linear prediction rules in high-dimensional
//! linear regression.
//!
//! Everything is expressed in the eigenbasis of the covariate covariance, so a
//! covariance is just its list of eigenvalues ([`Spectrum`]). On top of that the
//! crate provides
//!
//! * closed-form degrees-of-freedom, implicit-noise and tail-sum bounds on the
//!   optimal averaged excess risk ([`bounds`]),
//! * seeded, schedule-independent covariate/target/noise generation ([`sampler`]),
//! * the weights of common linear prediction rules in dual form ([`rules`]),
//! * Monte Carlo estimators of optimal and per-rule excess risks ([`risk`]),
//! * a config-driven experiment runner that checks the sandwich inequalities
//!   ([`experiment`]).

pub mod bounds;
pub mod error;
pub mod experiment;
mod linalg;
pub mod quadrature;
pub mod risk;
pub mod rules;
pub mod sampler;
pub mod spectra;

pub use error::{Error, Result};
pub use spectra::{FixedTarget, SourcePrior, Spectrum, SpectrumSpec};
