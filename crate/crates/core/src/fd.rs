//! Finite-difference Greeks on top of any pricer, with common random
//! numbers.
//!
//! CRN is not optional here: both evaluations of the difference quotient
//! must run on the same seed, otherwise the Monte Carlo noise of the two
//! prices does not cancel and the quotient is useless at practical sample
//! sizes.

use crate::engine::{self, EstimatorOutput};
use crate::error::{Error, Result};
use crate::model::{InstrumentSpec, ModelParams, ThetaIndex};

/// Difference scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdKind {
    /// `(PV(x + d) - PV(x)) / d`
    Forward,
    /// `(PV(x + d) - PV(x - d)) / (2 d)`
    Central,
}

/// Finite-difference scheme with step size in the units of the bumped
/// parameter.
#[derive(Debug, Clone, Copy)]
pub struct FdScheme {
    pub kind: FdKind,
    pub delta: f64,
}

impl FdScheme {
    pub fn forward(delta: f64) -> Self {
        FdScheme {
            kind: FdKind::Forward,
            delta,
        }
    }

    pub fn central(delta: f64) -> Self {
        FdScheme {
            kind: FdKind::Central,
            delta,
        }
    }

    /// Default step per parameter: 1e-2 for the currency-valued `S0` and
    /// `B`, 1e-4 for the rate-valued `mu` and `sigma`.
    pub fn default_delta(which: ThetaIndex) -> f64 {
        match which {
            ThetaIndex::S0 | ThetaIndex::Barrier => 1e-2,
            ThetaIndex::Mu | ThetaIndex::Sigma => 1e-4,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::domain("fd delta", self.delta));
        }
        Ok(())
    }
}

/// Finite-difference Greek of an arbitrary pricer.
///
/// The pricer is called at the bumped parameter vectors with the same
/// `(n, seed)` each time, which realizes common random numbers as long as
/// the pricer derives its paths deterministically from the seed (every
/// estimator in [`crate::engine`] does). Returns the difference quotient
/// and the number of pricer evaluations (always 2).
pub fn greek_fd<P>(
    pricer: P,
    params: &ModelParams,
    which: ThetaIndex,
    scheme: FdScheme,
    n: u64,
    seed: u64,
) -> Result<(f64, u32)>
where
    P: Fn(&ModelParams, u64, u64) -> Result<EstimatorOutput>,
{
    scheme.validate()?;
    let base = params.theta(which);
    let (lo, hi, width) = match scheme.kind {
        FdKind::Forward => (base, base + scheme.delta, scheme.delta),
        FdKind::Central => (base - scheme.delta, base + scheme.delta, 2.0 * scheme.delta),
    };
    let p_hi = params.with_theta(which, hi);
    let p_lo = params.with_theta(which, lo);
    // Reject bumps that leave the parameter domain (e.g. sigma - d <= 0).
    p_hi.validate()?;
    p_lo.validate()?;
    let v_hi = pricer(&p_hi, n, seed)?.pv;
    let v_lo = pricer(&p_lo, n, seed)?.pv;
    Ok(((v_hi - v_lo) / width, 2))
}

/// Central-difference Greek of the OSS price with per-path pairing: the
/// bumped-up and bumped-down paths share every uniform, so the returned
/// standard error is the true CRN error of the quotient rather than the
/// (much larger) error of the individual prices.
pub fn greek_fd_paired(
    params: &ModelParams,
    spec: &InstrumentSpec,
    which: ThetaIndex,
    delta: f64,
    n: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::domain("fd delta", delta));
    }
    let base = params.theta(which);
    let p_hi = params.with_theta(which, base + delta);
    let p_lo = params.with_theta(which, base - delta);
    let (diff, diff_se) = engine::oss_paired_diff(&p_hi, &p_lo, spec, n, seed)?;
    Ok((diff / (2.0 * delta), diff_se / (2.0 * delta)))
}
