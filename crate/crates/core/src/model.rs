//! Model parameters, the one-step survival step functions and their
//! analytic partial derivatives.
//!
//! Underlying dynamics are geometric Brownian motion observed at the
//! equidistant dates `t_1 .. t_T`, `t_T = n_obs * dt`. The survival
//! probability of one step is
//!
//! ```text
//! f(s) = Phi( (ln(B/s) - (mu - sigma^2/2) dt) / (sigma sqrt(dt)) )
//! ```
//!
//! i.e. the probability that the next observation falls below the barrier.
//! Conditioned steps map a uniform `u` to the surviving part of the normal
//! distribution:
//!
//! ```text
//! up:   g = s * exp((mu - sigma^2/2) dt + sigma sqrt(dt) * Phi^-1(p u))
//! down: g = s * exp((mu - sigma^2/2) dt + sigma sqrt(dt) * Phi^-1((1-p) u + p))
//! ```
//!
//! The partial derivatives of `f` and `g` with respect to
//! `(S0, B, mu, sigma)` as well as `s` and `p` are hand-derived by the
//! chain rule and validated against central finite differences in the test
//! suite. Note `d g / d p` involves the derivative of the inverse CDF,
//! `1 / pdf(Phi^-1(.))`, which grows quickly near the clamped endpoints.

use crate::error::{Error, Result};
use crate::specialfn::{norm_cdf, norm_inv_cdf, std_normal_pdf, Probability};

/// Arguments of the inverse CDF are kept this far inside the unit interval.
pub(crate) const UNIT_CLAMP: f64 = 1e-16;
/// Survival factors below this kill the whole path contribution.
pub(crate) const DEAD_PATH: f64 = 1e-300;

/// Model and contract parameters driving simulation and differentiation.
///
/// The differentiation order of the sensitivity vector is
/// `(s0, barrier, mu, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Initial asset price `S0`.
    pub s0: f64,
    /// Barrier level `B`.
    pub barrier: f64,
    /// Drift `mu = r - b` per year.
    pub mu: f64,
    /// Volatility per square-root year.
    pub sigma: f64,
    /// Observation interval in years.
    pub dt: f64,
    /// Risk-free discount rate per year.
    pub rate: f64,
    /// Strike `K` (vanilla call only).
    pub strike: f64,
    /// Number of barrier observation dates.
    pub n_obs: u32,
}

impl ModelParams {
    /// Checks the parameter invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::domain("s0", self.s0));
        }
        if !(self.barrier > 0.0 && self.barrier.is_finite()) {
            return Err(Error::domain("barrier", self.barrier));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain("sigma", self.sigma));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain("dt", self.dt));
        }
        if !self.mu.is_finite() {
            return Err(Error::domain("mu", self.mu));
        }
        if !self.rate.is_finite() {
            return Err(Error::domain("rate", self.rate));
        }
        if !(self.strike >= 0.0 && self.strike.is_finite()) {
            return Err(Error::domain("strike", self.strike));
        }
        if self.n_obs == 0 {
            return Err(Error::domain("n_obs", 0.0));
        }
        Ok(())
    }

    /// Time from now to the last observation, `n_obs * dt`.
    pub fn maturity(&self) -> f64 {
        self.n_obs as f64 * self.dt
    }

    /// Discount factor to maturity.
    pub fn discount(&self) -> f64 {
        (-self.rate * self.maturity()).exp()
    }

    /// Reads the differentiable parameter `which`.
    pub fn theta(&self, which: ThetaIndex) -> f64 {
        match which {
            ThetaIndex::S0 => self.s0,
            ThetaIndex::Barrier => self.barrier,
            ThetaIndex::Mu => self.mu,
            ThetaIndex::Sigma => self.sigma,
        }
    }

    /// Returns a copy with parameter `which` replaced by `value`.
    pub fn with_theta(&self, which: ThetaIndex, value: f64) -> Self {
        let mut out = *self;
        match which {
            ThetaIndex::S0 => out.s0 = value,
            ThetaIndex::Barrier => out.barrier = value,
            ThetaIndex::Mu => out.mu = value,
            ThetaIndex::Sigma => out.sigma = value,
        }
        out
    }
}

/// The four differentiable model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaIndex {
    /// Initial asset price (Delta).
    S0,
    /// Barrier level (Beta).
    Barrier,
    /// Drift (Rho in the sense d/d mu).
    Mu,
    /// Volatility (Vega).
    Sigma,
}

impl ThetaIndex {
    /// All four indices in differentiation order.
    pub const ALL: [ThetaIndex; 4] = [
        ThetaIndex::S0,
        ThetaIndex::Barrier,
        ThetaIndex::Mu,
        ThetaIndex::Sigma,
    ];

    /// Lowercase name used in configuration and output files.
    pub fn name(self) -> &'static str {
        match self {
            ThetaIndex::S0 => "s0",
            ThetaIndex::Barrier => "barrier",
            ThetaIndex::Mu => "mu",
            ThetaIndex::Sigma => "sigma",
        }
    }
}

/// Sensitivity vector with respect to `(s0, barrier, mu, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradTheta {
    /// d/d S0 (Delta).
    pub d_s0: f64,
    /// d/d B (Beta).
    pub d_barrier: f64,
    /// d/d mu (drift sensitivity, reported as Rho).
    pub d_mu: f64,
    /// d/d sigma (Vega).
    pub d_sigma: f64,
}

impl GradTheta {
    /// The zero vector.
    pub const ZERO: GradTheta = GradTheta {
        d_s0: 0.0,
        d_barrier: 0.0,
        d_mu: 0.0,
        d_sigma: 0.0,
    };

    /// Initial derivative of the path start: `d S0 / d theta = (1,0,0,0)`.
    pub const BASE_S0: GradTheta = GradTheta {
        d_s0: 1.0,
        d_barrier: 0.0,
        d_mu: 0.0,
        d_sigma: 0.0,
    };

    pub fn new(d_s0: f64, d_barrier: f64, d_mu: f64, d_sigma: f64) -> Self {
        GradTheta {
            d_s0,
            d_barrier,
            d_mu,
            d_sigma,
        }
    }

    /// Component by parameter index.
    pub fn component(&self, which: ThetaIndex) -> f64 {
        match which {
            ThetaIndex::S0 => self.d_s0,
            ThetaIndex::Barrier => self.d_barrier,
            ThetaIndex::Mu => self.d_mu,
            ThetaIndex::Sigma => self.d_sigma,
        }
    }

    /// All components finite?
    pub fn is_finite(&self) -> bool {
        self.d_s0.is_finite()
            && self.d_barrier.is_finite()
            && self.d_mu.is_finite()
            && self.d_sigma.is_finite()
    }

    /// Componentwise array view in differentiation order.
    pub fn to_array(self) -> [f64; 4] {
        [self.d_s0, self.d_barrier, self.d_mu, self.d_sigma]
    }
}

impl std::ops::Add for GradTheta {
    type Output = GradTheta;
    fn add(self, o: GradTheta) -> GradTheta {
        GradTheta::new(
            self.d_s0 + o.d_s0,
            self.d_barrier + o.d_barrier,
            self.d_mu + o.d_mu,
            self.d_sigma + o.d_sigma,
        )
    }
}

impl std::ops::Sub for GradTheta {
    type Output = GradTheta;
    fn sub(self, o: GradTheta) -> GradTheta {
        GradTheta::new(
            self.d_s0 - o.d_s0,
            self.d_barrier - o.d_barrier,
            self.d_mu - o.d_mu,
            self.d_sigma - o.d_sigma,
        )
    }
}

impl std::ops::Mul<f64> for GradTheta {
    type Output = GradTheta;
    fn mul(self, k: f64) -> GradTheta {
        GradTheta::new(
            self.d_s0 * k,
            self.d_barrier * k,
            self.d_mu * k,
            self.d_sigma * k,
        )
    }
}

impl std::ops::Neg for GradTheta {
    type Output = GradTheta;
    fn neg(self) -> GradTheta {
        self * -1.0
    }
}

impl std::ops::AddAssign for GradTheta {
    fn add_assign(&mut self, o: GradTheta) {
        *self = *self + o;
    }
}

/// Whether the barrier lies above or below the running path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierDirection {
    /// Barrier above: knocked when the path rises to `B`.
    Up,
    /// Barrier below: knocked when the path falls to `B`.
    Down,
}

impl BarrierDirection {
    pub fn name(self) -> &'static str {
        match self {
            BarrierDirection::Up => "up",
            BarrierDirection::Down => "down",
        }
    }
}

/// Knock-out pays when the barrier is never crossed; knock-in when it is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnockStyle {
    Out,
    In,
}

impl KnockStyle {
    pub fn name(self) -> &'static str {
        match self {
            KnockStyle::Out => "out",
            KnockStyle::In => "in",
        }
    }
}

/// Terminal payoff functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    /// `(S_T - K)^+` with `K` from [`ModelParams::strike`].
    VanillaCall,
    /// Constant coupon paid on the knock event (or survival, for knock-out).
    Digital {
        /// Coupon amount `c`.
        coupon: f64,
    },
    /// `S_T - C_p`, delivery against the conversion price.
    Forward {
        /// Delivery price `C_p`.
        delivery: f64,
    },
}

impl Payoff {
    /// Payoff value at terminal level `s`.
    #[inline]
    pub fn value(&self, s: f64, strike: f64) -> f64 {
        match *self {
            Payoff::VanillaCall => (s - strike).max(0.0),
            Payoff::Digital { coupon } => coupon,
            Payoff::Forward { delivery } => s - delivery,
        }
    }

    /// Derivative of the payoff in `s`; the call indicator is strict,
    /// `1_{s > K}`.
    #[inline]
    pub fn slope(&self, s: f64, strike: f64) -> f64 {
        match *self {
            Payoff::VanillaCall => {
                if s > strike {
                    1.0
                } else {
                    0.0
                }
            }
            Payoff::Digital { .. } => 0.0,
            Payoff::Forward { .. } => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Payoff::VanillaCall => "vanilla_call",
            Payoff::Digital { .. } => "digital",
            Payoff::Forward { .. } => "forward",
        }
    }
}

/// Barrier instrument: direction, knock style and payoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstrumentSpec {
    pub direction: BarrierDirection,
    pub knock: KnockStyle,
    pub payoff: Payoff,
}

impl InstrumentSpec {
    pub fn new(direction: BarrierDirection, knock: KnockStyle, payoff: Payoff) -> Self {
        InstrumentSpec {
            direction,
            knock,
            payoff,
        }
    }

    pub fn up_out_call() -> Self {
        Self::new(BarrierDirection::Up, KnockStyle::Out, Payoff::VanillaCall)
    }

    pub fn down_out_call() -> Self {
        Self::new(BarrierDirection::Down, KnockStyle::Out, Payoff::VanillaCall)
    }

    pub fn digital(direction: BarrierDirection, knock: KnockStyle, coupon: f64) -> Self {
        Self::new(direction, knock, Payoff::Digital { coupon })
    }

    /// Validates the payoff constants.
    pub fn validate(&self) -> Result<()> {
        match self.payoff {
            Payoff::Digital { coupon } if !coupon.is_finite() => Err(Error::domain("coupon", coupon)),
            Payoff::Forward { delivery } if !delivery.is_finite() => {
                Err(Error::domain("delivery", delivery))
            }
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Step context: per-run precomputation
// ---------------------------------------------------------------------------

/// Quantities shared by every step of a run.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepCtx {
    pub barrier: f64,
    pub sigma: f64,
    pub dt: f64,
    pub sqrt_dt: f64,
    /// `(mu - sigma^2/2) dt`
    pub drift: f64,
    /// `sigma sqrt(dt)`
    pub vol: f64,
    pub ln_barrier: f64,
}

impl StepCtx {
    pub fn new(params: &ModelParams) -> Self {
        let sqrt_dt = params.dt.sqrt();
        StepCtx {
            barrier: params.barrier,
            sigma: params.sigma,
            dt: params.dt,
            sqrt_dt,
            drift: (params.mu - 0.5 * params.sigma * params.sigma) * params.dt,
            vol: params.sigma * sqrt_dt,
            ln_barrier: params.barrier.ln(),
        }
    }
}

#[inline]
pub(crate) fn clamp_unit(a: f64) -> f64 {
    a.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP)
}

/// Standardized distance of the barrier from `s` in one step.
#[inline]
fn std_distance(s: f64, ctx: &StepCtx) -> f64 {
    (ctx.ln_barrier - s.ln() - ctx.drift) / ctx.vol
}

#[inline]
pub(crate) fn survival_prob_raw(s: f64, ctx: &StepCtx) -> f64 {
    debug_assert!(s > 0.0);
    norm_cdf(std_distance(s, ctx))
}

/// `(df/d theta, df/ds)` of the survival probability.
#[inline]
pub(crate) fn partials_f_raw(s: f64, ctx: &StepCtx) -> (GradTheta, f64) {
    let d = std_distance(s, ctx);
    let pdf = std_normal_pdf(d);
    let grad = GradTheta::new(
        0.0,
        pdf / (ctx.barrier * ctx.vol),
        -pdf * ctx.sqrt_dt / ctx.sigma,
        pdf * (ctx.sqrt_dt - d / ctx.sigma),
    );
    (grad, -pdf / (s * ctx.vol))
}

#[inline]
pub(crate) fn step_argument(p: f64, u: f64, dir: BarrierDirection) -> f64 {
    match dir {
        BarrierDirection::Up => clamp_unit(p * u),
        BarrierDirection::Down => clamp_unit((1.0 - p) * u + p),
    }
}

#[inline]
pub(crate) fn step_raw(p: f64, s: f64, u: f64, ctx: &StepCtx, dir: BarrierDirection) -> f64 {
    let y = norm_inv_cdf(step_argument(p, u, dir));
    s * (ctx.drift + ctx.vol * y).exp()
}

/// One conditioned step together with all partial derivatives of `g`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepEval {
    pub s_next: f64,
    pub d_theta: GradTheta,
    pub d_s: f64,
    pub d_pi: f64,
}

#[inline]
pub(crate) fn step_with_partials_raw(
    p: f64,
    s: f64,
    u: f64,
    ctx: &StepCtx,
    dir: BarrierDirection,
) -> StepEval {
    let y = norm_inv_cdf(step_argument(p, u, dir));
    let growth = (ctx.drift + ctx.vol * y).exp();
    let s_next = s * growth;
    // d/d pi of Phi^-1(arg(pi)) is arg'(pi) / pdf(y)
    let arg_slope = match dir {
        BarrierDirection::Up => u,
        BarrierDirection::Down => 1.0 - u,
    };
    StepEval {
        s_next,
        d_theta: GradTheta::new(
            0.0,
            0.0,
            s_next * ctx.dt,
            s_next * (ctx.sqrt_dt * y - ctx.sigma * ctx.dt),
        ),
        d_s: growth,
        d_pi: s_next * ctx.vol * arg_slope / std_normal_pdf(y),
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Probability that the next observation lies below the barrier.
pub fn survival_prob(s: f64, params: &ModelParams) -> Result<Probability> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::domain("survival_prob asset price", s));
    }
    params.validate()?;
    Probability::new(survival_prob_raw(s, &StepCtx::new(params)))
}

/// One conditioned step for an up-barrier: the result stays below `B`
/// whenever `p` equals [`survival_prob`] at `s`.
pub fn step_up_out(p: Probability, s: f64, params: &ModelParams, u: Probability) -> Result<f64> {
    step_checked(p, s, params, u, BarrierDirection::Up)
}

/// One conditioned step for a down-barrier: the result stays above `B`
/// whenever `p` equals [`survival_prob`] at `s`.
pub fn step_down_out(p: Probability, s: f64, params: &ModelParams, u: Probability) -> Result<f64> {
    step_checked(p, s, params, u, BarrierDirection::Down)
}

fn step_checked(
    p: Probability,
    s: f64,
    params: &ModelParams,
    u: Probability,
    dir: BarrierDirection,
) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::domain("step asset price", s));
    }
    params.validate()?;
    let arg = step_argument(p.get(), u.get(), dir);
    if !arg.is_finite() || arg <= 0.0 || arg >= 1.0 {
        return Err(Error::domain("step inverse-CDF argument", arg));
    }
    Ok(step_raw(p.get(), s, u.get(), &StepCtx::new(params), dir))
}

/// Partial derivatives of the survival probability `f`:
/// `(d/d(s0,B,mu,sigma), d/ds)`. The `s0` component is identically zero.
pub fn partials_f(s: f64, params: &ModelParams) -> Result<(GradTheta, f64)> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::domain("partials_f asset price", s));
    }
    params.validate()?;
    Ok(partials_f_raw(s, &StepCtx::new(params)))
}

/// Partial derivatives of the conditioned step `g`:
/// `(d/d(s0,B,mu,sigma), d/ds, d/d pi)`. The first two components are
/// identically zero.
pub fn partials_g(
    p: Probability,
    s: f64,
    params: &ModelParams,
    u: Probability,
    dir: BarrierDirection,
) -> Result<(GradTheta, f64, f64)> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::domain("partials_g asset price", s));
    }
    params.validate()?;
    let arg = step_argument(p.get(), u.get(), dir);
    if !arg.is_finite() || arg <= 0.0 || arg >= 1.0 {
        return Err(Error::domain("partials_g inverse-CDF argument", arg));
    }
    let ev = step_with_partials_raw(p.get(), s, u.get(), &StepCtx::new(params), dir);
    Ok((ev.d_theta, ev.d_s, ev.d_pi))
}
