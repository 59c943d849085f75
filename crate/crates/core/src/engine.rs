//! Monte Carlo estimators: standard, one-step survival (OSS) and OSS with
//! pathwise sensitivities.
//!
//! All estimators draw path `i` from `RandomStream::new(seed, i)`, so the
//! simulated paths are a pure function of `(seed, n)` and results are
//! bit-identical regardless of how many worker threads rayon uses. Paths
//! are processed in fixed-size chunks whose partial statistics are merged
//! in chunk order.
//!
//! The OSS path kernel implements the survival recursion: at each step the
//! survival probability `p_t` is computed from the current level, the next
//! level is drawn from the barrier-conditioned distribution, and (for the
//! pathwise estimator) the derivative state
//!
//! ```text
//! dp_t = df/ds * dS_t + df/dtheta
//! dS_{t+1} = dg/ds * dS_t + dg/dpi * dp_t + dg/dtheta
//! ```
//!
//! is advanced alongside, starting from `dS_0 = (1, 0, 0, 0)`.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    partials_f_raw, step_raw, step_with_partials_raw, survival_prob_raw, BarrierDirection,
    GradTheta, InstrumentSpec, KnockStyle, ModelParams, Payoff, StepCtx, DEAD_PATH,
};
use crate::specialfn::{norm_inv_cdf, RandomStream};

const CHUNK: u64 = 16 * 1024;

/// Which estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Plain GBM paths with the knock indicator.
    Standard,
    /// One-step survival, price only.
    Oss,
    /// One-step survival with pathwise Greeks.
    OssPathwise,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Standard => "standard",
            EstimatorKind::Oss => "oss",
            EstimatorKind::OssPathwise => "oss_pathwise",
        }
    }
}

/// Price estimate with optional Greeks; stderr entries are sample standard
/// deviations of the per-path contributions divided by `sqrt(n)`.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorOutput {
    /// Discounted present value.
    pub pv: f64,
    /// Standard error of `pv`.
    pub pv_stderr: f64,
    /// Pathwise Greeks `(d_s0, d_barrier, d_mu, d_sigma)`; present iff the
    /// pathwise estimator ran.
    pub greeks: Option<GradTheta>,
    /// Componentwise standard errors of the Greeks.
    pub greek_stderr: Option<GradTheta>,
    /// Number of simulated paths.
    pub n_paths: u64,
    /// Wall time of the run in seconds.
    pub elapsed: f64,
}

/// Value of one simulated path before discounting.
#[derive(Debug, Clone, Copy)]
pub struct PathValue {
    /// One-step survival payoff `q*` of the path.
    pub value: f64,
    /// `d q* / d theta`; zero unless the gradient kernel ran.
    pub grad: GradTheta,
    /// Smallest per-step survival factor seen along the path.
    pub min_survival: f64,
}

// ---------------------------------------------------------------------------
// Deterministic chunked accumulation
// ---------------------------------------------------------------------------

/// Welford accumulator over `K` statistics sharing one sample count.
#[derive(Debug, Clone, Copy)]
struct ChunkStats<const K: usize> {
    n: u64,
    mean: [f64; K],
    m2: [f64; K],
}

impl<const K: usize> ChunkStats<K> {
    fn new() -> Self {
        ChunkStats {
            n: 0,
            mean: [0.0; K],
            m2: [0.0; K],
        }
    }

    #[inline]
    #[allow(clippy::needless_range_loop)] // k indexes three parallel arrays
    fn push(&mut self, xs: [f64; K]) {
        self.n += 1;
        let nf = self.n as f64;
        for k in 0..K {
            let delta = xs[k] - self.mean[k];
            self.mean[k] += delta / nf;
            self.m2[k] += delta * (xs[k] - self.mean[k]);
        }
    }

    fn merge(self, other: Self) -> Self {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let n = self.n + other.n;
        let (na, nb) = (self.n as f64, other.n as f64);
        let mut mean = [0.0; K];
        let mut m2 = [0.0; K];
        for k in 0..K {
            let delta = other.mean[k] - self.mean[k];
            mean[k] = self.mean[k] + delta * nb / (na + nb);
            m2[k] = self.m2[k] + other.m2[k] + delta * delta * na * nb / (na + nb);
        }
        ChunkStats { n, mean, m2 }
    }

    fn mean(&self, k: usize) -> f64 {
        self.mean[k]
    }

    /// Standard error of the mean of statistic `k`.
    fn stderr(&self, k: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2[k] / (self.n - 1) as f64 / self.n as f64).sqrt()
    }

    /// Sample variance of statistic `k`.
    fn variance(&self, k: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.m2[k] / (self.n - 1) as f64
    }
}

/// Runs `eval` over `n` paths in deterministic chunk order.
fn run_paths<const K: usize, S, MS, F>(n: u64, seed: u64, make_scratch: MS, eval: F) -> ChunkStats<K>
where
    S: Send,
    MS: Fn() -> S + Sync,
    F: Fn(&mut S, RandomStream) -> [f64; K] + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut scratch = make_scratch();
            let mut stats = ChunkStats::<K>::new();
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            for i in lo..hi {
                stats.push(eval(&mut scratch, RandomStream::new(seed, i)));
            }
            stats
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(ChunkStats::new(), ChunkStats::merge)
}

// ---------------------------------------------------------------------------
// Path kernels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct RunCtx {
    step: StepCtx,
    dir: BarrierDirection,
    knock: KnockStyle,
    payoff: Payoff,
    strike: f64,
    s0: f64,
    barrier: f64,
    n_obs: u32,
}

impl RunCtx {
    fn new(params: &ModelParams, spec: &InstrumentSpec) -> Self {
        RunCtx {
            step: StepCtx::new(params),
            dir: spec.direction,
            knock: spec.knock,
            payoff: spec.payoff,
            strike: params.strike,
            s0: params.s0,
            barrier: params.barrier,
            n_obs: params.n_obs,
        }
    }

    #[inline]
    fn survival_factor(&self, p: f64) -> f64 {
        match self.dir {
            BarrierDirection::Up => p,
            BarrierDirection::Down => 1.0 - p,
        }
    }
}

/// OSS path, price only.
fn oss_path_price(ctx: &RunCtx, draws: &mut impl FnMut() -> f64) -> PathValue {
    let mut s = ctx.s0;
    let mut weight = 1.0;
    let mut min_w: f64 = 1.0;
    for _ in 0..ctx.n_obs {
        let p = survival_prob_raw(s, &ctx.step);
        let w_t = ctx.survival_factor(p);
        if w_t < DEAD_PATH {
            return PathValue {
                value: 0.0,
                grad: GradTheta::ZERO,
                min_survival: 0.0,
            };
        }
        min_w = min_w.min(w_t);
        weight *= w_t;
        let u = draws();
        s = step_raw(p, s, u, &ctx.step, ctx.dir);
    }
    let value = match ctx.knock {
        KnockStyle::Out => weight * ctx.payoff.value(s, ctx.strike),
        // Only digital knock-in has a direct OSS estimator; validated upstream.
        KnockStyle::In => match ctx.payoff {
            Payoff::Digital { coupon } => coupon * (1.0 - weight),
            _ => unreachable!("non-digital knock-in validated out"),
        },
    };
    PathValue {
        value,
        grad: GradTheta::ZERO,
        min_survival: min_w,
    }
}

/// `sum_t dw_t * prod_{k != t} w_k`, dividing out of the full product where
/// safe and recomputing the leave-one-out product directly for tiny factors.
fn leave_one_out(factors: &[(f64, GradTheta)], total: f64) -> GradTheta {
    let mut sum = GradTheta::ZERO;
    for (i, &(w_i, dw_i)) in factors.iter().enumerate() {
        if w_i < 1e-12 {
            let mut prod = 1.0;
            for (j, &(w_j, _)) in factors.iter().enumerate() {
                if j != i {
                    prod *= w_j;
                }
            }
            sum += dw_i * prod;
        } else {
            sum += dw_i * (total / w_i);
        }
    }
    sum
}

/// OSS path with the pathwise derivative recursion.
fn oss_path_grad(
    ctx: &RunCtx,
    draws: &mut impl FnMut() -> f64,
    factors: &mut Vec<(f64, GradTheta)>,
) -> PathValue {
    factors.clear();
    let mut s = ctx.s0;
    let mut ds = GradTheta::BASE_S0;
    let mut weight = 1.0;
    let mut min_w: f64 = 1.0;
    for _ in 0..ctx.n_obs {
        let p = survival_prob_raw(s, &ctx.step);
        let (df_theta, df_ds) = partials_f_raw(s, &ctx.step);
        let dp = ds * df_ds + df_theta;
        let (w_t, dw_t) = match ctx.dir {
            BarrierDirection::Up => (p, dp),
            BarrierDirection::Down => (1.0 - p, -dp),
        };
        if w_t < DEAD_PATH {
            return PathValue {
                value: 0.0,
                grad: GradTheta::ZERO,
                min_survival: 0.0,
            };
        }
        min_w = min_w.min(w_t);
        weight *= w_t;
        factors.push((w_t, dw_t));
        let u = draws();
        let ev = step_with_partials_raw(p, s, u, &ctx.step, ctx.dir);
        ds = ds * ev.d_s + dp * ev.d_pi + ev.d_theta;
        s = ev.s_next;
    }
    let loo = leave_one_out(factors, weight);
    let (value, grad) = match ctx.knock {
        KnockStyle::Out => {
            let q = ctx.payoff.value(s, ctx.strike);
            let slope = ctx.payoff.slope(s, ctx.strike);
            (weight * q, ds * (slope * weight) + loo * q)
        }
        KnockStyle::In => match ctx.payoff {
            Payoff::Digital { coupon } => (coupon * (1.0 - weight), loo * -coupon),
            _ => unreachable!("non-digital knock-in validated out"),
        },
    };
    PathValue {
        value,
        grad,
        min_survival: min_w,
    }
}

/// Plain GBM path with the knock indicator applied.
fn standard_path_value(ctx: &RunCtx, draws: &mut impl FnMut() -> f64) -> f64 {
    let mut s = ctx.s0;
    for _ in 0..ctx.n_obs {
        let z = norm_inv_cdf(draws());
        s *= (ctx.step.drift + ctx.step.vol * z).exp();
        let crossed = match ctx.dir {
            BarrierDirection::Up => s >= ctx.barrier,
            BarrierDirection::Down => s <= ctx.barrier,
        };
        // Knock-out dies on a strict crossing only; the boundary itself
        // still survives (max <= B resp. min >= B pays).
        let knocked_out = match ctx.dir {
            BarrierDirection::Up => s > ctx.barrier,
            BarrierDirection::Down => s < ctx.barrier,
        };
        match ctx.knock {
            KnockStyle::Out => {
                if knocked_out {
                    return 0.0;
                }
            }
            KnockStyle::In => {
                if crossed {
                    // Triggered digital pays the coupon regardless of the rest
                    // of the path.
                    if let Payoff::Digital { coupon } = ctx.payoff {
                        return coupon;
                    }
                }
            }
        }
    }
    match ctx.knock {
        KnockStyle::Out => ctx.payoff.value(s, ctx.strike),
        KnockStyle::In => 0.0,
    }
}

/// Unconditioned GBM path with pathwise derivatives of `S_T`.
fn plain_path_grad(ctx: &RunCtx, draws: &mut impl FnMut() -> f64) -> PathValue {
    let mut s = ctx.s0;
    let mut ds = GradTheta::BASE_S0;
    for _ in 0..ctx.n_obs {
        let z = norm_inv_cdf(draws());
        let growth = (ctx.step.drift + ctx.step.vol * z).exp();
        let s_next = s * growth;
        ds = ds * growth
            + GradTheta::new(
                0.0,
                0.0,
                s_next * ctx.step.dt,
                s_next * (ctx.step.sqrt_dt * z - ctx.step.sigma * ctx.step.dt),
            );
        s = s_next;
    }
    let q = ctx.payoff.value(s, ctx.strike);
    let slope = ctx.payoff.slope(s, ctx.strike);
    PathValue {
        value: q,
        grad: ds * slope,
        min_survival: 1.0,
    }
}

// ---------------------------------------------------------------------------
// Public single-path evaluation (shared with the quadrature oracle)
// ---------------------------------------------------------------------------

/// Evaluates the OSS payoff `q*` of one path; `draws` supplies the uniforms.
pub fn oss_path(
    params: &ModelParams,
    spec: &InstrumentSpec,
    draws: &mut impl FnMut() -> f64,
) -> Result<PathValue> {
    validate_direct(params, spec)?;
    Ok(oss_path_price(&RunCtx::new(params, spec), draws))
}

/// Evaluates the OSS payoff and its pathwise derivative along one path.
pub fn oss_path_with_grad(
    params: &ModelParams,
    spec: &InstrumentSpec,
    draws: &mut impl FnMut() -> f64,
) -> Result<PathValue> {
    validate_direct(params, spec)?;
    let mut factors = Vec::with_capacity(params.n_obs as usize);
    Ok(oss_path_grad(&RunCtx::new(params, spec), draws, &mut factors))
}

fn validate_direct(params: &ModelParams, spec: &InstrumentSpec) -> Result<()> {
    params.validate()?;
    spec.validate()?;
    match (spec.knock, spec.payoff) {
        (KnockStyle::Out, _) | (KnockStyle::In, Payoff::Digital { .. }) => Ok(()),
        (KnockStyle::In, _) => Err(Error::config(
            "knock-in vanilla/forward has no direct estimator; use price_knock_in_parity",
        )),
    }
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::config("n_paths must be at least 1"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

fn price_only_output(stats: ChunkStats<1>, disc: f64, start: Instant) -> EstimatorOutput {
    EstimatorOutput {
        pv: disc * stats.mean(0),
        pv_stderr: disc * stats.stderr(0),
        greeks: None,
        greek_stderr: None,
        n_paths: stats.n,
        elapsed: start.elapsed().as_secs_f64(),
    }
}

fn greek_output(stats: ChunkStats<5>, disc: f64, start: Instant) -> EstimatorOutput {
    EstimatorOutput {
        pv: disc * stats.mean(0),
        pv_stderr: disc * stats.stderr(0),
        greeks: Some(GradTheta::new(
            disc * stats.mean(1),
            disc * stats.mean(2),
            disc * stats.mean(3),
            disc * stats.mean(4),
        )),
        greek_stderr: Some(GradTheta::new(
            disc * stats.stderr(1),
            disc * stats.stderr(2),
            disc * stats.stderr(3),
            disc * stats.stderr(4),
        )),
        n_paths: stats.n,
        elapsed: start.elapsed().as_secs_f64(),
    }
}

/// Standard Monte Carlo estimator over plain GBM paths.
///
/// Supports knock-out instruments and digital knock-ins; the vanilla and
/// forward knock-ins go through [`price_knock_in_parity`].
pub fn price_standard_mc(
    params: &ModelParams,
    spec: &InstrumentSpec,
    n: u64,
    seed: u64,
) -> Result<EstimatorOutput> {
    validate_direct(params, spec)?;
    check_n(n)?;
    let start = Instant::now();
    let ctx = RunCtx::new(params, spec);
    let stats = run_paths::<1, (), _, _>(n, seed, || (), |_, mut stream| {
        [standard_path_value(&ctx, &mut || stream.next_f64())]
    });
    Ok(price_only_output(stats, params.discount(), start))
}

/// One-step survival estimator; every path survives and carries the product
/// of survival probabilities as its weight.
pub fn price_oss(
    params: &ModelParams,
    spec: &InstrumentSpec,
    n: u64,
    seed: u64,
) -> Result<EstimatorOutput> {
    validate_direct(params, spec)?;
    check_n(n)?;
    let start = Instant::now();
    let ctx = RunCtx::new(params, spec);
    let stats = run_paths::<1, (), _, _>(n, seed, || (), |_, mut stream| {
        [oss_path_price(&ctx, &mut || stream.next_f64()).value]
    });
    Ok(price_only_output(stats, params.discount(), start))
}

/// One-step survival estimator with pathwise Greeks. The price output is
/// bit-identical to [`price_oss`] under the same seed.
pub fn price_oss_pathwise(
    params: &ModelParams,
    spec: &InstrumentSpec,
    n: u64,
    seed: u64,
) -> Result<EstimatorOutput> {
    validate_direct(params, spec)?;
    check_n(n)?;
    let start = Instant::now();
    let ctx = RunCtx::new(params, spec);
    let stats = run_paths::<5, _, _, _>(
        n,
        seed,
        || Vec::with_capacity(params.n_obs as usize),
        |factors, mut stream| {
            let pv = oss_path_grad(&ctx, &mut || stream.next_f64(), factors);
            [
                pv.value,
                pv.grad.d_s0,
                pv.grad.d_barrier,
                pv.grad.d_mu,
                pv.grad.d_sigma,
            ]
        },
    );
    Ok(greek_output(stats, params.discount(), start))
}

/// Knock-in price and Greeks via in-out parity: plain instrument minus
/// knock-out, estimated path-by-path on common random numbers. The plain
/// leg uses standard pathwise sensitivities on unconditioned paths and has
/// zero barrier sensitivity.
pub fn price_knock_in_parity(
    params: &ModelParams,
    spec: &InstrumentSpec,
    n: u64,
    seed: u64,
) -> Result<EstimatorOutput> {
    params.validate()?;
    spec.validate()?;
    check_n(n)?;
    if spec.knock != KnockStyle::In {
        return Err(Error::config("price_knock_in_parity requires a knock-in spec"));
    }
    if matches!(spec.payoff, Payoff::Digital { .. }) {
        return Err(Error::config(
            "digital knock-in has a direct OSS estimator; use price_oss",
        ));
    }
    let start = Instant::now();
    let out_spec = InstrumentSpec::new(spec.direction, KnockStyle::Out, spec.payoff);
    let ctx_out = RunCtx::new(params, &out_spec);
    let stats = run_paths::<5, _, _, _>(
        n,
        seed,
        || Vec::with_capacity(params.n_obs as usize),
        |factors, stream| {
            // Same uniforms feed both legs.
            let mut plain_stream = stream;
            let mut out_stream = stream;
            let plain = plain_path_grad(&ctx_out, &mut || plain_stream.next_f64());
            let out = oss_path_grad(&ctx_out, &mut || out_stream.next_f64(), factors);
            let value = plain.value - out.value;
            let grad = plain.grad - out.grad;
            [value, grad.d_s0, grad.d_barrier, grad.d_mu, grad.d_sigma]
        },
    );
    Ok(greek_output(stats, params.discount(), start))
}

/// Standard pathwise estimator for the plain (barrier-free) instrument.
///
/// Greeks come from `1_{S_T > K} dS_T/dtheta` (call) or `dS_T/dtheta`
/// (forward); the barrier sensitivity is identically zero. Digitals are
/// rejected: their payoff derivative is zero almost everywhere while the
/// price sensitivity is not.
pub fn plain_pathwise(
    params: &ModelParams,
    payoff: Payoff,
    n: u64,
    seed: u64,
) -> Result<EstimatorOutput> {
    params.validate()?;
    check_n(n)?;
    if matches!(payoff, Payoff::Digital { .. }) {
        return Err(Error::Unsupported(
            "plain pathwise sensitivities of a digital payoff".into(),
        ));
    }
    let start = Instant::now();
    let spec = InstrumentSpec::new(BarrierDirection::Up, KnockStyle::Out, payoff);
    let ctx = RunCtx::new(params, &spec);
    let stats = run_paths::<5, (), _, _>(n, seed, || (), |_, mut stream| {
        let pv = plain_path_grad(&ctx, &mut || stream.next_f64());
        [
            pv.value,
            pv.grad.d_s0,
            pv.grad.d_barrier,
            pv.grad.d_mu,
            pv.grad.d_sigma,
        ]
    });
    Ok(greek_output(stats, params.discount(), start))
}

/// Runs `kind` on the instrument, routing vanilla/forward knock-ins through
/// the parity estimator for the OSS kinds.
pub fn run(
    kind: EstimatorKind,
    params: &ModelParams,
    spec: &InstrumentSpec,
    n: u64,
    seed: u64,
) -> Result<EstimatorOutput> {
    let direct = spec.knock == KnockStyle::Out || matches!(spec.payoff, Payoff::Digital { .. });
    match kind {
        EstimatorKind::Standard => price_standard_mc(params, spec, n, seed),
        EstimatorKind::Oss if direct => price_oss(params, spec, n, seed),
        EstimatorKind::OssPathwise if direct => price_oss_pathwise(params, spec, n, seed),
        EstimatorKind::Oss | EstimatorKind::OssPathwise => {
            price_knock_in_parity(params, spec, n, seed)
        }
    }
}

/// Sample variance of the per-path (undiscounted) payoff under `kind`;
/// used for the variance-reduction comparisons.
pub fn payoff_variance(
    kind: EstimatorKind,
    params: &ModelParams,
    spec: &InstrumentSpec,
    n: u64,
    seed: u64,
) -> Result<f64> {
    validate_direct(params, spec)?;
    check_n(n)?;
    let ctx = RunCtx::new(params, spec);
    let stats = match kind {
        EstimatorKind::Standard => run_paths::<1, (), _, _>(n, seed, || (), |_, mut stream| {
            [standard_path_value(&ctx, &mut || stream.next_f64())]
        }),
        _ => run_paths::<1, (), _, _>(n, seed, || (), |_, mut stream| {
            [oss_path_price(&ctx, &mut || stream.next_f64()).value]
        }),
    };
    Ok(stats.variance(0))
}

/// Paired run of the OSS price kernel at two parameter points sharing all
/// uniforms; returns mean and standard error of the discounted per-path
/// difference. This is the common-random-numbers machinery behind the
/// finite-difference checks.
pub(crate) fn oss_paired_diff(
    params_a: &ModelParams,
    params_b: &ModelParams,
    spec: &InstrumentSpec,
    n: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    validate_direct(params_a, spec)?;
    validate_direct(params_b, spec)?;
    check_n(n)?;
    let ctx_a = RunCtx::new(params_a, spec);
    let ctx_b = RunCtx::new(params_b, spec);
    let stats = run_paths::<1, (), _, _>(n, seed, || (), |_, stream| {
        let mut sa = stream;
        let mut sb = stream;
        let va = oss_path_price(&ctx_a, &mut || sa.next_f64()).value;
        let vb = oss_path_price(&ctx_b, &mut || sb.next_f64()).value;
        [va - vb]
    });
    // Theta bumps never touch the discounting inputs (r, dt, n_obs).
    let disc = params_a.discount();
    Ok((disc * stats.mean(0), disc * stats.stderr(0)))
}
