//! One-step survival Monte Carlo for discretely monitored barrier options.
//!
//! The crate prices knock-out, knock-in and digital barrier options under
//! geometric Brownian motion with three estimators:
//!
//! * a standard Monte Carlo estimator over plain GBM paths,
//! * a one-step survival (OSS) estimator that conditions every step on
//!   surviving the barrier, trading the path indicator for a product of
//!   survival probabilities, and
//! * an OSS pathwise-sensitivities estimator that propagates the analytic
//!   derivatives of the survival recursion along each path and returns the
//!   Greeks (Delta, Beta, Rho, Vega) together with the price.
//!
//! Supporting modules provide deterministic splittable random streams and
//! high-accuracy normal functions ([`specialfn`]), finite-difference Greeks
//! with common random numbers ([`fd`]), a tensor-product Gauss-Legendre
//! quadrature oracle for small observation counts ([`oracle`]), and a
//! CoCo-bond assembly with a two-parameter least-squares calibration
//! harness ([`coco`]).

pub mod coco;
pub mod engine;
pub mod error;
pub mod fd;
pub mod model;
pub mod oracle;
pub mod specialfn;

pub use engine::{EstimatorKind, EstimatorOutput, PathValue};
pub use error::{Error, Result};
pub use model::{BarrierDirection, GradTheta, InstrumentSpec, KnockStyle, ModelParams, Payoff, ThetaIndex};
pub use specialfn::{Probability, RandomStream};
