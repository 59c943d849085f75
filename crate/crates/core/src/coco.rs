//! CoCo-bond pricing and two-parameter `(B, sigma)` calibration.
//!
//! A CoCo bond is assembled as
//!
//! ```text
//! corporate bond + (face / C_p) * knock-in forward - sum of binary down-ins
//! ```
//!
//! where the trigger is modeled as the underlying falling to a barrier `B`
//! observed at the coupon dates. Every coupon is cancelled by one binary
//! down-in option maturing at its payment date, and the conversion into
//! `face / C_p` shares is a down-in forward on `S_T - C_p` at bond
//! maturity.
//!
//! One conditioned path per draw prices every component at once: the
//! running survival product evaluated after `i` steps is exactly the
//! knock-out weight of the binary maturing at coupon `i`, and its value at
//! maturity weights the knock-out forward leg. The knock-in forward comes
//! from in-out parity against a plain path driven by the same uniforms.
//! This keeps each price-and-Jacobian evaluation at one path batch per
//! instrument, which is what makes the pathwise calibration cheaper than
//! finite differences.

use std::cell::{Cell, RefCell};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{
    partials_f_raw, step_with_partials_raw, survival_prob_raw, BarrierDirection, GradTheta,
    ModelParams, StepCtx,
};
use crate::specialfn::{norm_inv_cdf, RandomStream};

/// Contractual terms of one CoCo bond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoCoSpec {
    /// Face value.
    pub face: f64,
    /// Annual coupon rate as a fraction of face.
    pub coupon_rate: f64,
    /// Coupon payments per year.
    pub frequency: u32,
    /// Conversion price `C_p`.
    pub conversion_price: f64,
    /// Maturity in years; must be a whole number of coupon periods.
    pub maturity: f64,
    /// Flat discount rate.
    pub rate: f64,
    /// Current underlying level.
    pub s0: f64,
}

impl CoCoSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.face > 0.0 && self.face.is_finite()) {
            return Err(Error::domain("face", self.face));
        }
        if self.frequency == 0 {
            return Err(Error::domain("frequency", 0.0));
        }
        if !(self.conversion_price > 0.0 && self.conversion_price.is_finite()) {
            return Err(Error::domain("conversion_price", self.conversion_price));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::domain("maturity", self.maturity));
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::domain("s0", self.s0));
        }
        if !self.coupon_rate.is_finite() || self.coupon_rate < 0.0 {
            return Err(Error::domain("coupon_rate", self.coupon_rate));
        }
        let periods = self.maturity * self.frequency as f64;
        if (periods - periods.round()).abs() > 1e-9 || periods.round() < 1.0 {
            return Err(Error::config(format!(
                "maturity {} is not a whole number of coupon periods at frequency {}",
                self.maturity, self.frequency
            )));
        }
        Ok(())
    }

    /// Number of coupon dates (= barrier observation dates).
    pub fn n_coupons(&self) -> u32 {
        (self.maturity * self.frequency as f64).round() as u32
    }

    /// Coupon period in years.
    pub fn dt(&self) -> f64 {
        1.0 / self.frequency as f64
    }

    /// Coupon amount per payment date.
    pub fn coupon_amount(&self) -> f64 {
        self.face * self.coupon_rate / self.frequency as f64
    }

    /// Value of the coupon stream plus redemption, discounted at `rate`.
    pub fn corporate_bond_pv(&self) -> f64 {
        let c = self.coupon_amount();
        let dt = self.dt();
        let mut pv = 0.0;
        for i in 1..=self.n_coupons() {
            pv += c * (-self.rate * i as f64 * dt).exp();
        }
        pv + self.face * (-self.rate * self.maturity).exp()
    }

    fn model_params(&self, barrier: f64, sigma: f64) -> ModelParams {
        ModelParams {
            s0: self.s0,
            barrier,
            // dividend yield defaults to zero, so the carry drift is the rate
            mu: self.rate,
            sigma,
            dt: self.dt(),
            rate: self.rate,
            strike: 0.0,
            n_obs: self.n_coupons(),
        }
    }
}

/// Estimator backing a CoCo price.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CocoEstimator {
    /// Plain paths with trigger indicators; no Greeks.
    Standard,
    /// One-step survival with pathwise Greeks.
    OneStepSurvival,
}

impl CocoEstimator {
    pub fn name(self) -> &'static str {
        match self {
            CocoEstimator::Standard => "standard",
            CocoEstimator::OneStepSurvival => "oss",
        }
    }
}

/// CoCo price with optional `(B, sigma)` sensitivities.
#[derive(Debug, Clone, Copy)]
pub struct CocoPrice {
    pub price: f64,
    pub stderr: f64,
    /// Present iff the OSS estimator ran.
    pub greeks: Option<CocoGreeks>,
}

/// Sensitivities of the CoCo price to the calibrated parameters.
#[derive(Debug, Clone, Copy)]
pub struct CocoGreeks {
    pub d_barrier: f64,
    pub d_sigma: f64,
    pub d_barrier_se: f64,
    pub d_sigma_se: f64,
}

/// Prices one CoCo bond at `(barrier, sigma)`.
pub fn coco_price(
    spec: &CoCoSpec,
    barrier: f64,
    sigma: f64,
    n: u64,
    seed: u64,
    estimator: CocoEstimator,
) -> Result<CocoPrice> {
    spec.validate()?;
    if !(barrier > 0.0 && barrier.is_finite()) {
        return Err(Error::domain("barrier", barrier));
    }
    if barrier >= spec.s0 {
        return Err(Error::config(format!(
            "barrier {barrier} >= s0 {}: bond is born triggered",
            spec.s0
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::domain("sigma", sigma));
    }
    if n == 0 {
        return Err(Error::config("n_paths must be at least 1"));
    }
    let params = spec.model_params(barrier, sigma);
    let ctx = CocoCtx::new(spec, &params);
    match estimator {
        CocoEstimator::OneStepSurvival => {
            let stats = run_oss(&ctx, n, seed);
            Ok(CocoPrice {
                price: spec.corporate_bond_pv() + stats.mean[0],
                stderr: stats.stderr(0),
                greeks: Some(CocoGreeks {
                    d_barrier: stats.mean[1],
                    d_sigma: stats.mean[2],
                    d_barrier_se: stats.stderr(1),
                    d_sigma_se: stats.stderr(2),
                }),
            })
        }
        CocoEstimator::Standard => {
            let stats = run_standard(&ctx, n, seed);
            Ok(CocoPrice {
                price: spec.corporate_bond_pv() + stats.mean[0],
                stderr: stats.stderr(0),
                greeks: None,
            })
        }
    }
}

struct CocoCtx {
    step: StepCtx,
    s0: f64,
    barrier: f64,
    conversion_price: f64,
    /// Shares delivered on conversion, `face / C_p`.
    ratio: f64,
    coupon: f64,
    /// Discount factors to the coupon dates `t_1 .. t_M`.
    disc: Vec<f64>,
    n_obs: u32,
}

impl CocoCtx {
    fn new(spec: &CoCoSpec, params: &ModelParams) -> Self {
        let m = spec.n_coupons();
        let disc = (1..=m)
            .map(|i| (-spec.rate * i as f64 * spec.dt()).exp())
            .collect();
        CocoCtx {
            step: StepCtx::new(params),
            s0: spec.s0,
            barrier: params.barrier,
            conversion_price: spec.conversion_price,
            ratio: spec.face / spec.conversion_price,
            coupon: spec.coupon_amount(),
            disc,
            n_obs: m,
        }
    }
}

#[derive(Clone, Copy)]
struct Stats3 {
    n: u64,
    mean: [f64; 3],
    m2: [f64; 3],
}

impl Stats3 {
    fn new() -> Self {
        Stats3 {
            n: 0,
            mean: [0.0; 3],
            m2: [0.0; 3],
        }
    }

    #[inline]
    #[allow(clippy::needless_range_loop)] // k indexes three parallel arrays
    fn push(&mut self, xs: [f64; 3]) {
        self.n += 1;
        let nf = self.n as f64;
        for k in 0..3 {
            let delta = xs[k] - self.mean[k];
            self.mean[k] += delta / nf;
            self.m2[k] += delta * (xs[k] - self.mean[k]);
        }
    }

    fn merge(self, o: Self) -> Self {
        if o.n == 0 {
            return self;
        }
        if self.n == 0 {
            return o;
        }
        let (na, nb) = (self.n as f64, o.n as f64);
        let mut out = Stats3::new();
        out.n = self.n + o.n;
        for k in 0..3 {
            let delta = o.mean[k] - self.mean[k];
            out.mean[k] = self.mean[k] + delta * nb / (na + nb);
            out.m2[k] = self.m2[k] + o.m2[k] + delta * delta * na * nb / (na + nb);
        }
        out
    }

    fn stderr(&self, k: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2[k] / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

const CHUNK: u64 = 16 * 1024;

fn run_chunked<F: Fn(RandomStream) -> [f64; 3] + Sync>(n: u64, seed: u64, eval: F) -> Stats3 {
    use rayon::prelude::*;
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut st = Stats3::new();
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            for i in lo..hi {
                st.push(eval(RandomStream::new(seed, i)));
            }
            st
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Stats3::new(), Stats3::merge)
}

/// One-step survival path: `[value, d_barrier, d_sigma]` of the barrier
/// legs (knock-in forward minus binaries), corporate bond excluded.
fn oss_path(ctx: &CocoCtx, mut stream: RandomStream) -> [f64; 3] {
    let mut s_c = ctx.s0; // barrier-conditioned path (stays above B)
    let mut ds_c = GradTheta::BASE_S0;
    let mut s_p = ctx.s0; // plain path on the same uniforms
    let mut ds_p = GradTheta::BASE_S0;
    let mut w = 1.0; // running knock-out weight prod (1 - p_t)
    let mut dw = GradTheta::ZERO;
    let mut binaries = 0.0;
    let mut d_binaries = GradTheta::ZERO;
    for t in 0..ctx.n_obs as usize {
        let u = stream.next_f64();

        let p = survival_prob_raw(s_c, &ctx.step);
        let (df_theta, df_ds) = partials_f_raw(s_c, &ctx.step);
        let dp = ds_c * df_ds + df_theta;
        let w_old = w;
        w *= 1.0 - p;
        dw = dw * (1.0 - p) - dp * w_old;
        // binary down-in maturing at coupon date t+1: in-weight 1 - w
        binaries += ctx.disc[t] * (1.0 - w);
        d_binaries += dw * (-ctx.disc[t]);

        let ev = step_with_partials_raw(p, s_c, u, &ctx.step, BarrierDirection::Down);
        ds_c = ds_c * ev.d_s + dp * ev.d_pi + ev.d_theta;
        s_c = ev.s_next;

        let z = norm_inv_cdf(u);
        let growth = (ctx.step.drift + ctx.step.vol * z).exp();
        let s_next = s_p * growth;
        ds_p = ds_p * growth
            + GradTheta::new(
                0.0,
                0.0,
                s_next * ctx.step.dt,
                s_next * (ctx.step.sqrt_dt * z - ctx.step.sigma * ctx.step.dt),
            );
        s_p = s_next;
    }
    // knock-in forward by parity: plain minus knock-out
    let disc_t = ctx.disc[ctx.n_obs as usize - 1];
    let fwd_in = (s_p - ctx.conversion_price) - w * (s_c - ctx.conversion_price);
    let d_fwd_in = ds_p - (dw * (s_c - ctx.conversion_price) + ds_c * w);
    let value = ctx.ratio * disc_t * fwd_in - ctx.coupon * binaries;
    let grad = d_fwd_in * (ctx.ratio * disc_t) - d_binaries * ctx.coupon;
    [value, grad.d_barrier, grad.d_sigma]
}

/// Standard path: trigger indicators on a plain path; value only.
fn standard_path(ctx: &CocoCtx, mut stream: RandomStream) -> [f64; 3] {
    let mut s = ctx.s0;
    let mut hit = false;
    let mut binaries = 0.0;
    for t in 0..ctx.n_obs as usize {
        let z = norm_inv_cdf(stream.next_f64());
        s *= (ctx.step.drift + ctx.step.vol * z).exp();
        if s <= ctx.barrier {
            hit = true;
        }
        if hit {
            binaries += ctx.disc[t];
        }
    }
    let disc_t = ctx.disc[ctx.n_obs as usize - 1];
    let fwd_in = if hit { s - ctx.conversion_price } else { 0.0 };
    let value = ctx.ratio * disc_t * fwd_in - ctx.coupon * binaries;
    [value, 0.0, 0.0]
}

fn run_oss(ctx: &CocoCtx, n: u64, seed: u64) -> Stats3 {
    run_chunked(n, seed, |stream| oss_path(ctx, stream))
}

fn run_standard(ctx: &CocoCtx, n: u64, seed: u64) -> Stats3 {
    run_chunked(n, seed, |stream| standard_path(ctx, stream))
}

// ---------------------------------------------------------------------------
// Calibration problem
// ---------------------------------------------------------------------------

/// One instrument of the calibration, with its market (or benchmark) price.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationInstrument {
    pub spec: CoCoSpec,
    pub target: f64,
}

/// Box constraints on `(barrier, sigma)`.
#[derive(Debug, Clone, Copy)]
pub struct CalibBounds {
    pub barrier: (f64, f64),
    pub sigma: (f64, f64),
}

impl CalibBounds {
    pub fn clamp(&self, x: (f64, f64)) -> (f64, f64) {
        (
            x.0.clamp(self.barrier.0, self.barrier.1),
            x.1.clamp(self.sigma.0, self.sigma.1),
        )
    }

    pub fn contains(&self, x: (f64, f64)) -> bool {
        (self.barrier.0..=self.barrier.1).contains(&x.0)
            && (self.sigma.0..=self.sigma.1).contains(&x.1)
    }
}

/// Optimizer choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibMethod {
    /// Derivative-free simplex search on the sum of squares.
    NelderMead,
    /// Levenberg-Marquardt with a central-difference Jacobian.
    GaussNewtonFd,
    /// Levenberg-Marquardt with the pathwise Jacobian.
    GaussNewtonPathwise,
}

impl CalibMethod {
    pub fn name(self) -> &'static str {
        match self {
            CalibMethod::NelderMead => "nelder_mead",
            CalibMethod::GaussNewtonFd => "gauss_newton_fd",
            CalibMethod::GaussNewtonPathwise => "gauss_newton_pathwise",
        }
    }
}

/// Full calibration setup.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub instruments: Vec<CalibrationInstrument>,
    pub initial: (f64, f64),
    pub bounds: CalibBounds,
    pub n_paths: u64,
    pub seed: u64,
    pub method: CalibMethod,
    pub estimator: CocoEstimator,
}

impl CalibrationProblem {
    pub fn validate(&self) -> Result<()> {
        if self.instruments.is_empty() {
            return Err(Error::config("calibration needs at least one instrument"));
        }
        for inst in &self.instruments {
            inst.spec.validate()?;
        }
        if !self.bounds.sigma.0.is_finite() || self.bounds.sigma.0 <= 0.0 {
            return Err(Error::domain("sigma lower bound", self.bounds.sigma.0));
        }
        if !self.bounds.barrier.0.is_finite() || self.bounds.barrier.0 <= 0.0 {
            return Err(Error::domain("barrier lower bound", self.bounds.barrier.0));
        }
        let min_s0 = self
            .instruments
            .iter()
            .map(|i| i.spec.s0)
            .fold(f64::INFINITY, f64::min);
        if self.bounds.barrier.1 >= min_s0 {
            return Err(Error::config(format!(
                "barrier upper bound {} must stay below the smallest s0 {}",
                self.bounds.barrier.1, min_s0
            )));
        }
        if !self.bounds.contains(self.initial) {
            return Err(Error::config(format!(
                "initial point {:?} outside bounds",
                self.initial
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::config("n_paths must be at least 1"));
        }
        if self.method == CalibMethod::GaussNewtonPathwise
            && self.estimator != CocoEstimator::OneStepSurvival
        {
            return Err(Error::config(
                "the pathwise Jacobian requires the one-step survival estimator",
            ));
        }
        Ok(())
    }
}

/// Per-iteration snapshot of the optimizer.
#[derive(Debug, Clone, Copy)]
pub struct TracePoint {
    pub barrier: f64,
    pub sigma: f64,
    pub residual_norm: f64,
}

/// Calibration outcome.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub fitted: (f64, f64),
    /// Sum of squared residuals at the fitted point.
    pub data_fit: f64,
    pub iterations: u64,
    pub runtime: f64,
    pub trace: Vec<TracePoint>,
    /// Number of per-instrument Monte Carlo batches consumed.
    pub path_batches: u64,
    /// Set when the optimizer aborted; the trace up to the failure is kept.
    pub failure: Option<String>,
}

/// Solver tuning knobs.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iter: u64,
    /// Step / simplex-diameter tolerance in parameter space.
    pub tol: f64,
    /// Initial Levenberg-Marquardt damping (0 = pure Gauss-Newton start).
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 400,
            tol: 1e-8,
            damping: 1e-3,
        }
    }
}

/// All instruments share one seed: with common random numbers their Monte
/// Carlo errors are strongly correlated, so the noise cancels out of the
/// calibration direction instead of being amplified through the nearly
/// collinear Jacobian of two similar instruments.
fn instrument_seed(seed: u64, _index: usize) -> u64 {
    seed
}

/// Shared pricing state for one calibration: caches the last evaluation so
/// the pathwise Jacobian is free once the residuals are priced, and counts
/// Monte Carlo batches for the cost comparison.
type PriceCache = RefCell<Option<((f64, f64), Vec<CocoPrice>)>>;

pub struct CocoEvaluator<'a> {
    problem: &'a CalibrationProblem,
    batches: Cell<u64>,
    cache: PriceCache,
}

impl<'a> CocoEvaluator<'a> {
    pub fn new(problem: &'a CalibrationProblem) -> Result<Self> {
        problem.validate()?;
        Ok(CocoEvaluator {
            problem,
            batches: Cell::new(0),
            cache: RefCell::new(None),
        })
    }

    /// Per-instrument path batches priced so far.
    pub fn batches(&self) -> u64 {
        self.batches.get()
    }

    fn price_all(&self, x: (f64, f64)) -> Result<Vec<CocoPrice>> {
        if let Some((cached_x, prices)) = self.cache.borrow().as_ref() {
            if *cached_x == x {
                return Ok(prices.clone());
            }
        }
        let prices = self.price_uncached(x)?;
        *self.cache.borrow_mut() = Some((x, prices.clone()));
        Ok(prices)
    }

    fn price_uncached(&self, x: (f64, f64)) -> Result<Vec<CocoPrice>> {
        let p = self.problem;
        let mut prices = Vec::with_capacity(p.instruments.len());
        for (i, inst) in p.instruments.iter().enumerate() {
            let price = coco_price(
                &inst.spec,
                x.0,
                x.1,
                p.n_paths,
                instrument_seed(p.seed, i),
                p.estimator,
            )?;
            self.batches.set(self.batches.get() + 1);
            prices.push(price);
        }
        Ok(prices)
    }

    /// Residual vector `model price - target` at `x`.
    pub fn residuals(&self, x: (f64, f64)) -> Result<Vec<f64>> {
        let prices = self.price_all(x)?;
        Ok(prices
            .iter()
            .zip(&self.problem.instruments)
            .map(|(p, inst)| p.price - inst.target)
            .collect())
    }

    /// Jacobian columns `(d/dB, d/dsigma)` from the pathwise Greeks of the
    /// cached evaluation at `x`.
    pub fn jacobian_pathwise(&self, x: (f64, f64)) -> Result<Vec<[f64; 2]>> {
        let prices = self.price_all(x)?;
        prices
            .iter()
            .map(|p| {
                p.greeks
                    .map(|g| [g.d_barrier, g.d_sigma])
                    .ok_or_else(|| {
                        Error::config("pathwise Jacobian requires the OSS estimator")
                    })
            })
            .collect()
    }

    /// Central-difference Jacobian with common random numbers; consumes
    /// `2 * dim` extra batches per instrument.
    pub fn jacobian_fd(&self, x: (f64, f64), delta: f64) -> Result<Vec<[f64; 2]>> {
        let p = self.problem;
        let mut jac = vec![[0.0; 2]; p.instruments.len()];
        for (col, bump) in [(0usize, (delta, 0.0)), (1usize, (0.0, delta))] {
            let hi = (x.0 + bump.0, x.1 + bump.1);
            let lo = (x.0 - bump.0, x.1 - bump.1);
            for (i, inst) in p.instruments.iter().enumerate() {
                let seed = instrument_seed(p.seed, i);
                let v_hi = coco_price(&inst.spec, hi.0, hi.1, p.n_paths, seed, p.estimator)?;
                let v_lo = coco_price(&inst.spec, lo.0, lo.1, p.n_paths, seed, p.estimator)?;
                self.batches.set(self.batches.get() + 2);
                jac[i][col] = (v_hi.price - v_lo.price) / (2.0 * delta);
            }
        }
        Ok(jac)
    }
}

/// Residuals of `problem` at `x` (standalone form of [`CocoEvaluator::residuals`]).
pub fn residuals(problem: &CalibrationProblem, x: (f64, f64)) -> Result<Vec<f64>> {
    CocoEvaluator::new(problem)?.residuals(x)
}

/// Pathwise Jacobian of `problem` at `x`.
pub fn jacobian_pathwise(problem: &CalibrationProblem, x: (f64, f64)) -> Result<Vec<[f64; 2]>> {
    CocoEvaluator::new(problem)?.jacobian_pathwise(x)
}

/// CRN central-difference Jacobian of `problem` at `x`.
pub fn jacobian_fd(problem: &CalibrationProblem, x: (f64, f64), delta: f64) -> Result<Vec<[f64; 2]>> {
    CocoEvaluator::new(problem)?.jacobian_fd(x, delta)
}

/// Benchmark targets generated at the true `(barrier, sigma)`.
pub fn generate_targets(
    specs: &[CoCoSpec],
    barrier: f64,
    sigma: f64,
    n: u64,
    seed: u64,
    estimator: CocoEstimator,
) -> Result<Vec<f64>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            coco_price(spec, barrier, sigma, n, instrument_seed(seed, i), estimator)
                .map(|p| p.price)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

fn norm2(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Nelder-Mead simplex minimization of `objective` with candidates clamped
/// to `bounds`. Stops when the simplex diameter falls below `opts.tol`, the
/// spread of objective values is negligible, or `opts.max_iter` is reached.
pub fn nelder_mead<F>(
    mut objective: F,
    x0: (f64, f64),
    bounds: &CalibBounds,
    opts: &SolverOptions,
) -> Result<CalibrationResult>
where
    F: FnMut((f64, f64)) -> Result<f64>,
{
    let start = Instant::now();
    let bad_point = Cell::new(None);
    let mut eval = |x: (f64, f64)| -> Result<f64> {
        let f = objective(x)?;
        if !f.is_finite() {
            bad_point.set(Some(x));
        }
        Ok(f)
    };

    let x0 = bounds.clamp(x0);
    let step = |v: f64| (0.05 * v.abs()).max(0.025);
    let mut simplex = [
        x0,
        bounds.clamp((x0.0 + step(x0.0), x0.1)),
        bounds.clamp((x0.0, x0.1 + step(x0.1))),
    ];
    let mut scores = [eval(simplex[0])?, eval(simplex[1])?, eval(simplex[2])?];
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        if bad_point.get().is_some() {
            break;
        }
        // order best..worst
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let (best, second, worst) = (idx[0], idx[1], idx[2]);
        iterations += 1;
        trace.push(TracePoint {
            barrier: simplex[best].0,
            sigma: simplex[best].1,
            residual_norm: scores[best].max(0.0).sqrt(),
        });

        let diam = {
            let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            d(simplex[0], simplex[1])
                .max(d(simplex[0], simplex[2]))
                .max(d(simplex[1], simplex[2]))
        };
        let fspread = scores[worst] - scores[best];
        if diam < opts.tol || fspread <= 1e-14 * (1.0 + scores[best].abs()) {
            break;
        }

        let centroid = (
            0.5 * (simplex[best].0 + simplex[second].0),
            0.5 * (simplex[best].1 + simplex[second].1),
        );
        let through = |from: (f64, f64), k: f64| {
            bounds.clamp((
                centroid.0 + k * (centroid.0 - from.0),
                centroid.1 + k * (centroid.1 - from.1),
            ))
        };

        let xr = through(simplex[worst], 1.0);
        let fr = eval(xr)?;
        if fr < scores[best] {
            let xe = through(simplex[worst], 2.0);
            let fe = eval(xe)?;
            if fe < fr {
                simplex[worst] = xe;
                scores[worst] = fe;
            } else {
                simplex[worst] = xr;
                scores[worst] = fr;
            }
        } else if fr < scores[second] {
            simplex[worst] = xr;
            scores[worst] = fr;
        } else {
            let xc = through(simplex[worst], -0.5);
            let fc = eval(xc)?;
            if fc < scores[worst] {
                simplex[worst] = xc;
                scores[worst] = fc;
            } else {
                // shrink toward the best vertex
                for i in [second, worst] {
                    simplex[i] = bounds.clamp((
                        simplex[best].0 + 0.5 * (simplex[i].0 - simplex[best].0),
                        simplex[best].1 + 0.5 * (simplex[i].1 - simplex[best].1),
                    ));
                    scores[i] = eval(simplex[i])?;
                }
            }
        }
    }

    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    Ok(CalibrationResult {
        fitted: simplex[idx[0]],
        data_fit: scores[idx[0]],
        iterations,
        runtime: start.elapsed().as_secs_f64(),
        trace,
        path_batches: 0,
        failure: bad_point
            .get()
            .map(|x: (f64, f64)| format!("objective not finite at ({}, {})", x.0, x.1)),
    })
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on the residual vector with
/// steps projected into `bounds`. `opts.damping` seeds the damping factor;
/// zero gives a pure Gauss-Newton first step, so linear residuals converge
/// in one iteration.
pub fn gauss_newton<R, J>(
    mut residuals_fn: R,
    mut jacobian_fn: J,
    x0: (f64, f64),
    bounds: &CalibBounds,
    opts: &SolverOptions,
) -> Result<CalibrationResult>
where
    R: FnMut((f64, f64)) -> Result<Vec<f64>>,
    J: FnMut((f64, f64)) -> Result<Vec<[f64; 2]>>,
{
    const DAMPING_CAP: f64 = 1e12;
    let start = Instant::now();
    let mut x = bounds.clamp(x0);
    let mut r = residuals_fn(x)?;
    let mut ssr = norm2(&r);
    let mut lambda = opts.damping;
    let mut failure = None;
    let mut trace = vec![TracePoint {
        barrier: x.0,
        sigma: x.1,
        residual_norm: ssr.sqrt(),
    }];
    let mut iterations = 0;
    if !ssr.is_finite() {
        failure = Some(format!("residuals not finite at ({}, {})", x.0, x.1));
    }

    'outer: for _ in 0..opts.max_iter {
        if ssr == 0.0 || failure.is_some() {
            break;
        }
        let jac = jacobian_fn(x)?;
        // normal equations: (J^T J + lambda diag(J^T J)) delta = -J^T r
        let mut jtj = [[0.0f64; 2]; 2];
        let mut jtr = [0.0f64; 2];
        for (row, ri) in jac.iter().zip(&r) {
            for a in 0..2 {
                for b in 0..2 {
                    jtj[a][b] += row[a] * row[b];
                }
                jtr[a] += row[a] * ri;
            }
        }

        loop {
            let a00 = jtj[0][0] * (1.0 + lambda);
            let a11 = jtj[1][1] * (1.0 + lambda);
            let a01 = jtj[0][1];
            let det = a00 * a11 - a01 * a01;
            let scale = a00.abs().max(a11.abs()).max(1e-300);
            if det.abs() < 1e-14 * scale * scale {
                // singular normal equations: raise damping and retry
                lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
                if lambda > DAMPING_CAP {
                    failure = Some(format!(
                        "singular normal equations, damping exceeded cap at ({}, {})",
                        x.0, x.1
                    ));
                    break 'outer;
                }
                continue;
            }
            let dx0 = (-jtr[0] * a11 + jtr[1] * a01) / det;
            let dx1 = (-jtr[1] * a00 + jtr[0] * a01) / det;
            let cand = bounds.clamp((x.0 + dx0, x.1 + dx1));
            let step_norm = ((cand.0 - x.0).powi(2) + (cand.1 - x.1).powi(2)).sqrt();
            let r_new = residuals_fn(cand)?;
            let ssr_new = norm2(&r_new);
            if !ssr_new.is_finite() {
                failure = Some(format!(
                    "residuals not finite at ({}, {})",
                    cand.0, cand.1
                ));
                break 'outer;
            }
            if ssr_new < ssr {
                x = cand;
                r = r_new;
                ssr = ssr_new;
                lambda *= 0.25;
                iterations += 1;
                trace.push(TracePoint {
                    barrier: x.0,
                    sigma: x.1,
                    residual_norm: ssr.sqrt(),
                });
                if step_norm < opts.tol {
                    break 'outer;
                }
                break;
            }
            lambda = if lambda == 0.0 { 1e-6 } else { lambda * 10.0 };
            if lambda > DAMPING_CAP {
                // no descent direction left at this noise level; stop here
                break 'outer;
            }
        }
    }

    Ok(CalibrationResult {
        fitted: x,
        data_fit: ssr,
        iterations,
        runtime: start.elapsed().as_secs_f64(),
        trace,
        path_batches: 0,
        failure,
    })
}

/// Runs the configured calibration method on `problem`.
pub fn calibrate(problem: &CalibrationProblem) -> Result<CalibrationResult> {
    calibrate_with(problem, &SolverOptions::default())
}

/// [`calibrate`] with explicit solver options.
pub fn calibrate_with(problem: &CalibrationProblem, opts: &SolverOptions) -> Result<CalibrationResult> {
    let ev = CocoEvaluator::new(problem)?;
    let start = Instant::now();
    let mut result = match problem.method {
        CalibMethod::NelderMead => nelder_mead(
            |x| ev.residuals(x).map(|r| norm2(&r)),
            problem.initial,
            &problem.bounds,
            opts,
        )?,
        CalibMethod::GaussNewtonFd => gauss_newton(
            |x| ev.residuals(x),
            |x| ev.jacobian_fd(x, 1e-4),
            problem.initial,
            &problem.bounds,
            opts,
        )?,
        CalibMethod::GaussNewtonPathwise => gauss_newton(
            |x| ev.residuals(x),
            |x| ev.jacobian_pathwise(x),
            problem.initial,
            &problem.bounds,
            opts,
        )?,
    };
    result.runtime = start.elapsed().as_secs_f64();
    result.path_batches = ev.batches();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// CoCo terms used throughout: two maturities on the same issuer.
    pub(crate) fn coco_specs() -> [CoCoSpec; 2] {
        [
            CoCoSpec {
                face: 1000.0,
                coupon_rate: 0.75,
                frequency: 2,
                conversion_price: 0.59,
                maturity: 8.5,
                rate: 0.0342,
                s0: 0.6075,
            },
            CoCoSpec {
                face: 1000.0,
                coupon_rate: 0.75,
                frequency: 2,
                conversion_price: 0.59,
                maturity: 8.0,
                rate: 0.0342,
                s0: 0.62,
            },
        ]
    }

    fn wide_bounds() -> CalibBounds {
        CalibBounds {
            barrier: (1e-4, 0.58),
            sigma: (1e-3, 3.0),
        }
    }

    #[test]
    fn spec_validation() {
        let spec = coco_specs()[0];
        assert!(spec.validate().is_ok());
        assert_eq!(spec.n_coupons(), 17);
        assert_eq!(spec.dt(), 0.5);
        assert!((spec.coupon_amount() - 375.0).abs() < 1e-12);

        let mut bad = spec;
        bad.maturity = 8.3; // not a whole number of semi-annual periods
        assert!(bad.validate().is_err());
    }

    #[test]
    fn corporate_bond_limit_as_barrier_vanishes() {
        let spec = coco_specs()[0];
        // unreachable trigger: all barrier legs die
        let got = coco_price(&spec, 1e-12, 0.4, 20_000, 3, CocoEstimator::OneStepSurvival).unwrap();
        let want = spec.corporate_bond_pv();
        assert!(
            (got.price - want).abs() <= 3.0 * got.stderr.max(1e-9),
            "price {} vs corporate bond {}",
            got.price,
            want
        );
        let g = got.greeks.unwrap();
        assert_eq!(g.d_barrier, 0.0);
        assert_eq!(g.d_sigma, 0.0);
    }

    #[test]
    fn born_triggered_is_rejected() {
        let spec = coco_specs()[0];
        assert!(coco_price(&spec, 0.7, 0.4, 100, 1, CocoEstimator::OneStepSurvival).is_err());
        assert!(coco_price(&spec, 0.0, 0.4, 100, 1, CocoEstimator::OneStepSurvival).is_err());
    }

    #[test]
    fn estimators_agree_on_price() {
        let spec = coco_specs()[1];
        let oss = coco_price(&spec, 0.4, 0.4, 60_000, 5, CocoEstimator::OneStepSurvival).unwrap();
        let std = coco_price(&spec, 0.4, 0.4, 240_000, 6, CocoEstimator::Standard).unwrap();
        let tol = 3.0 * (oss.stderr.powi(2) + std.stderr.powi(2)).sqrt();
        assert!(
            (oss.price - std.price).abs() <= tol,
            "oss {} vs standard {} (tol {tol})",
            oss.price,
            std.price
        );
        assert!(std.greeks.is_none());
    }

    #[test]
    fn barrier_greek_is_negative_and_matches_fd() {
        let spec = coco_specs()[0];
        let (b, sig, n, seed) = (0.4, 0.4, 50_000, 7);
        let p = coco_price(&spec, b, sig, n, seed, CocoEstimator::OneStepSurvival).unwrap();
        let g = p.greeks.unwrap();
        assert!(g.d_barrier < 0.0, "raising the trigger must cheapen the bond");

        let delta = 1e-4;
        for (col, want, se) in [(0, g.d_barrier, g.d_barrier_se), (1, g.d_sigma, g.d_sigma_se)] {
            let bump = if col == 0 { (delta, 0.0) } else { (0.0, delta) };
            let hi = coco_price(&spec, b + bump.0, sig + bump.1, n, seed, CocoEstimator::OneStepSurvival)
                .unwrap()
                .price;
            let lo = coco_price(&spec, b - bump.0, sig - bump.1, n, seed, CocoEstimator::OneStepSurvival)
                .unwrap()
                .price;
            let fd = (hi - lo) / (2.0 * delta);
            let tol = (1e-3 * want.abs()).max(6.0 * se);
            assert!(
                (want - fd).abs() <= tol,
                "col {col}: pathwise {want} vs fd {fd} (tol {tol})"
            );
        }
    }

    #[test]
    fn degenerate_spec_has_zero_jacobian() {
        // no coupons and an unreachable trigger: pure corporate bond
        let mut spec = coco_specs()[0];
        spec.coupon_rate = 0.0;
        let problem = CalibrationProblem {
            instruments: vec![CalibrationInstrument {
                spec,
                target: spec.corporate_bond_pv(),
            }],
            initial: (1e-12, 0.4),
            bounds: CalibBounds {
                barrier: (1e-13, 0.58),
                sigma: (1e-3, 3.0),
            },
            n_paths: 2_000,
            seed: 1,
            method: CalibMethod::GaussNewtonPathwise,
            estimator: CocoEstimator::OneStepSurvival,
        };
        let jac = jacobian_pathwise(&problem, (1e-12, 0.4)).unwrap();
        assert_eq!(jac[0][0], 0.0);
        assert_eq!(jac[0][1], 0.0);
    }

    #[test]
    fn residuals_vanish_at_self_generated_targets() {
        let specs = coco_specs();
        let n = 5_000;
        let seed = 11;
        let targets =
            generate_targets(&specs, 0.4, 0.4, n, seed, CocoEstimator::OneStepSurvival).unwrap();
        let problem = CalibrationProblem {
            instruments: specs
                .iter()
                .zip(&targets)
                .map(|(spec, &target)| CalibrationInstrument { spec: *spec, target })
                .collect(),
            initial: (0.5, 0.5),
            bounds: wide_bounds(),
            n_paths: n,
            seed,
            method: CalibMethod::GaussNewtonPathwise,
            estimator: CocoEstimator::OneStepSurvival,
        };
        let r = residuals(&problem, (0.4, 0.4)).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|v| *v == 0.0), "residuals {r:?}");
        // and the map is frozen: same x, same residuals
        let r2 = residuals(&problem, (0.41, 0.39)).unwrap();
        let r3 = residuals(&problem, (0.41, 0.39)).unwrap();
        assert_eq!(r2, r3);
    }

    #[test]
    fn residuals_at_truth_sit_inside_the_noise_band() {
        // targets from an independent (larger) run: residuals at the true
        // parameters are pure Monte Carlo noise
        let specs = coco_specs();
        let targets =
            generate_targets(&specs, 0.4, 0.4, 20_000, 900, CocoEstimator::OneStepSurvival)
                .unwrap();
        let n = 5_000;
        let seed = 901;
        let problem = CalibrationProblem {
            instruments: specs
                .iter()
                .zip(&targets)
                .map(|(spec, &target)| CalibrationInstrument { spec: *spec, target })
                .collect(),
            initial: (0.5, 0.5),
            bounds: wide_bounds(),
            n_paths: n,
            seed,
            method: CalibMethod::NelderMead,
            estimator: CocoEstimator::OneStepSurvival,
        };
        let r = residuals(&problem, (0.4, 0.4)).unwrap();
        for (i, (resid, spec)) in r.iter().zip(&specs).enumerate() {
            let se_model = coco_price(spec, 0.4, 0.4, n, seed, CocoEstimator::OneStepSurvival)
                .unwrap()
                .stderr;
            let se_target =
                coco_price(spec, 0.4, 0.4, 20_000, 900, CocoEstimator::OneStepSurvival)
                    .unwrap()
                    .stderr;
            let se = (se_model.powi(2) + se_target.powi(2)).sqrt();
            assert!(
                resid.abs() <= 3.0 * se,
                "instrument {i}: residual {resid} vs 3 se {}",
                3.0 * se
            );
        }
    }

    #[test]
    fn nelder_mead_minimizes_quadratic_bowl() {
        let bounds = CalibBounds {
            barrier: (-10.0, 10.0),
            sigma: (1e-9, 10.0),
        };
        // bounds.sigma.0 > 0 is a calibration constraint; the solver itself
        // only clamps, so a generic bowl works fine.
        let res = nelder_mead(
            |x: (f64, f64)| Ok((x.0 - 1.25).powi(2) + 3.0 * (x.1 - 2.5).powi(2)),
            (4.0, 4.0),
            &bounds,
            &SolverOptions {
                max_iter: 200,
                tol: 1e-9,
                damping: 0.0,
            },
        )
        .unwrap();
        assert!(res.iterations <= 200);
        assert!((res.fitted.0 - 1.25).abs() < 1e-6, "{:?}", res.fitted);
        assert!((res.fitted.1 - 2.5).abs() < 1e-6, "{:?}", res.fitted);
        assert!(!res.trace.is_empty());
    }

    #[test]
    fn gauss_newton_solves_linear_residuals_in_one_iteration() {
        let bounds = CalibBounds {
            barrier: (-100.0, 100.0),
            sigma: (-100.0, 100.0),
        };
        let res = gauss_newton(
            |x: (f64, f64)| Ok(vec![2.0 * (x.0 - 1.0), 3.0 * (x.1 + 0.5)]),
            |_| Ok(vec![[2.0, 0.0], [0.0, 3.0]]),
            (5.0, 5.0),
            &bounds,
            &SolverOptions {
                max_iter: 10,
                tol: 1e-12,
                damping: 0.0,
            },
        )
        .unwrap();
        assert_eq!(res.iterations, 1);
        assert!((res.fitted.0 - 1.0).abs() < 1e-12);
        assert!((res.fitted.1 + 0.5).abs() < 1e-12);
        assert!(res.data_fit < 1e-24);
    }

    #[test]
    fn small_scale_recovery_and_batch_accounting() {
        let specs = coco_specs();
        let n = 4_000;
        let targets =
            generate_targets(&specs, 0.4, 0.4, n, 100, CocoEstimator::OneStepSurvival).unwrap();
        let problem = CalibrationProblem {
            instruments: specs
                .iter()
                .zip(&targets)
                .map(|(spec, &target)| CalibrationInstrument { spec: *spec, target })
                .collect(),
            initial: (0.5, 0.5),
            bounds: wide_bounds(),
            n_paths: n,
            seed: 100, // same seed and n as the targets: exact root at the truth
            method: CalibMethod::GaussNewtonPathwise,
            estimator: CocoEstimator::OneStepSurvival,
        };
        let res = calibrate(&problem).unwrap();
        assert!(
            (res.fitted.0 - 0.4).abs() < 1e-4 && (res.fitted.1 - 0.4).abs() < 1e-4,
            "fitted {:?}",
            res.fitted
        );
        assert!(res.data_fit < 1e-10, "data fit {}", res.data_fit);
        assert!(res.path_batches > 0);

        // pathwise Jacobian is free once residuals are priced ...
        let ev = CocoEvaluator::new(&problem).unwrap();
        ev.residuals((0.45, 0.45)).unwrap();
        let after_res = ev.batches();
        ev.jacobian_pathwise((0.45, 0.45)).unwrap();
        assert_eq!(ev.batches(), after_res, "pathwise jacobian must reuse the batch");
        assert_eq!(after_res, problem.instruments.len() as u64);

        // ... while the FD Jacobian costs 2 * dim extra batches per instrument
        let ev = CocoEvaluator::new(&problem).unwrap();
        ev.residuals((0.45, 0.45)).unwrap();
        let after_res = ev.batches();
        ev.jacobian_fd((0.45, 0.45), 1e-4).unwrap();
        assert_eq!(
            ev.batches() - after_res,
            4 * problem.instruments.len() as u64
        );
    }

    #[test]
    fn problem_validation() {
        let specs = coco_specs();
        let mut problem = CalibrationProblem {
            instruments: vec![CalibrationInstrument {
                spec: specs[0],
                target: 1.0,
            }],
            initial: (0.5, 0.5),
            bounds: wide_bounds(),
            n_paths: 10,
            seed: 0,
            method: CalibMethod::NelderMead,
            estimator: CocoEstimator::Standard,
        };
        assert!(problem.validate().is_ok());
        problem.initial = (0.7, 0.5); // outside barrier bounds
        assert!(problem.validate().is_err());
        problem.initial = (0.5, 0.5);
        problem.method = CalibMethod::GaussNewtonPathwise; // standard estimator
        assert!(problem.validate().is_err());
        problem.estimator = CocoEstimator::OneStepSurvival;
        problem.instruments.clear();
        assert!(problem.validate().is_err());
    }
}
