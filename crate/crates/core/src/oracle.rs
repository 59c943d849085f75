//! Independent ground truth for small observation counts.
//!
//! [`quadrature_pv`] integrates the one-step survival payoff exactly as the
//! engine evaluates it, but with a deterministic tensor-product
//! Gauss-Legendre rule over `[0,1]^T` instead of Monte Carlo sampling, so
//! it is an oracle for the integration step only.
//!
//! Each dimension is integrated through the quantile substitution
//! `u = Phi(z)/p` (up) resp. `u = (Phi(z)-p)/(1-p)` (down): the inverse CDF
//! inside the step function has unbounded derivatives at the endpoints of
//! the unit interval, which caps plain Gauss-Legendre far above the
//! tolerances wanted here, while in the standardized coordinate the
//! integrand is entire and a single 64-node rule reaches machine
//! precision. The integrand values are still the engine's own `q*` (and
//! its pathwise derivative), evaluated at the mapped uniforms.
//!
//! For the vanilla call the final dimension is additionally cut at the
//! strike crossing: below it the payoff (and its derivative, through the
//! strict indicator) vanishes, above it the integrand is smooth.
//!
//! [`bs_call`] provides the Black-Scholes closed form used as the oracle in
//! degenerate barrier limits.

use crate::engine;
use crate::error::{Error, Result};
use crate::model::{
    clamp_unit, step_raw, survival_prob_raw, BarrierDirection, InstrumentSpec, ModelParams,
    Payoff, StepCtx, ThetaIndex,
};
use crate::specialfn::{norm_cdf, norm_inv_cdf, std_normal_pdf};

/// Standardized tail cutoff; the normal mass beyond it is ~1e-21.
const Z_BOUND: f64 = 9.5;

/// Tensor-product quadrature grid.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureGrid {
    /// Gauss-Legendre nodes per dimension.
    pub nodes_per_dim: usize,
    /// Number of dimensions, one per observation date.
    pub dims: u32,
}

impl QuadratureGrid {
    /// Grid with `nodes_per_dim >= 8` points per dimension and `dims <= 3`
    /// (tensor cost grows as `nodes^T`).
    pub fn new(nodes_per_dim: usize, dims: u32) -> Result<Self> {
        if nodes_per_dim < 8 {
            return Err(Error::domain("nodes_per_dim", nodes_per_dim as f64));
        }
        if dims == 0 || dims > 3 {
            return Err(Error::Unsupported(format!(
                "quadrature supports 1..=3 observation dates, got {dims}"
            )));
        }
        Ok(QuadratureGrid {
            nodes_per_dim,
            dims,
        })
    }
}

/// Deterministic quadrature of the discounted OSS payoff.
pub fn quadrature_pv(
    params: &ModelParams,
    spec: &InstrumentSpec,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let raw = integrate(params, spec, grid, &mut |u| {
        engine::oss_path(params, spec, &mut slice_draws(u)).map(|pv| pv.value)
    })?;
    Ok(params.discount() * raw)
}

/// Deterministic quadrature of one discounted pathwise Greek; the integrand
/// is the engine's own per-path derivative propagation evaluated at the
/// quadrature nodes.
pub fn quadrature_greek(
    params: &ModelParams,
    spec: &InstrumentSpec,
    grid: &QuadratureGrid,
    which: ThetaIndex,
) -> Result<f64> {
    let raw = integrate(params, spec, grid, &mut |u| {
        engine::oss_path_with_grad(params, spec, &mut slice_draws(u))
            .map(|pv| pv.grad.component(which))
    })?;
    Ok(params.discount() * raw)
}

fn slice_draws(u: &[f64]) -> impl FnMut() -> f64 + '_ {
    let mut it = u.iter();
    move || *it.next().expect("path consumed more uniforms than dims")
}

fn integrate(
    params: &ModelParams,
    spec: &InstrumentSpec,
    grid: &QuadratureGrid,
    leaf: &mut dyn FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    params.validate()?;
    spec.validate()?;
    if grid.dims != params.n_obs {
        return Err(Error::config(format!(
            "grid dims {} != n_obs {}",
            grid.dims, params.n_obs
        )));
    }
    if grid.dims > 3 {
        return Err(Error::Unsupported("quadrature limited to n_obs <= 3".into()));
    }
    if grid.nodes_per_dim < 8 {
        return Err(Error::domain("nodes_per_dim", grid.nodes_per_dim as f64));
    }
    let (nodes, weights) = gauss_legendre_unit(grid.nodes_per_dim);
    let ctx = StepCtx::new(params);
    let split = matches!(spec.payoff, Payoff::VanillaCall);
    let mut u_buf = vec![0.0; params.n_obs as usize];
    rec(
        0,
        params.s0,
        &mut u_buf,
        &ctx,
        spec,
        params.strike,
        split,
        &nodes,
        &weights,
        leaf,
    )
}

/// Recursive tensor integration; `s` is the asset level entering `level`.
///
/// The level integral is transformed to the standardized coordinate `z`
/// of the surviving one-step distribution, `du = phi(z) dz / denom` with
/// `denom = p` (up) or `1 - p` (down).
#[allow(clippy::too_many_arguments)]
fn rec(
    level: usize,
    s: f64,
    u_buf: &mut Vec<f64>,
    ctx: &StepCtx,
    spec: &InstrumentSpec,
    strike: f64,
    split: bool,
    nodes: &[f64],
    weights: &[f64],
    leaf: &mut dyn FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let dims = u_buf.len();
    let p = survival_prob_raw(s, ctx);
    let (denom, mut z_lo, z_hi) = match spec.direction {
        BarrierDirection::Up => (p, -Z_BOUND, norm_inv_cdf(clamp_unit(p))),
        BarrierDirection::Down => (1.0 - p, norm_inv_cdf(clamp_unit(p)), Z_BOUND),
    };
    if denom < 1e-300 {
        // no surviving mass on this side of the barrier
        return Ok(0.0);
    }
    let last = level + 1 == dims;
    if last && split {
        // Integrate only where S_T > K; below the crossing both the call
        // payoff and the indicator in its derivative vanish.
        let z_k = ((strike / s).ln() - ctx.drift) / ctx.vol;
        z_lo = z_lo.max(z_k);
    }
    if z_hi <= z_lo {
        return Ok(0.0);
    }
    let width = z_hi - z_lo;
    let mut acc = 0.0;
    for (&x, &w) in nodes.iter().zip(weights) {
        let z = z_lo + width * x;
        let u = match spec.direction {
            BarrierDirection::Up => clamp_unit(norm_cdf(z) / p),
            BarrierDirection::Down => clamp_unit((norm_cdf(z) - p) / (1.0 - p)),
        };
        u_buf[level] = u;
        let jac = w * width * std_normal_pdf(z) / denom;
        if last {
            acc += jac * leaf(u_buf)?;
        } else {
            let s_next = step_raw(p, s, u, ctx, spec.direction);
            acc += jac
                * rec(
                    level + 1,
                    s_next,
                    u_buf,
                    ctx,
                    spec,
                    strike,
                    split,
                    nodes,
                    weights,
                    leaf,
                )?;
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Gauss-Legendre nodes
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // roots come out in descending order; store symmetrically
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    for i in 0..n {
        nodes[i] = 0.5 * (nodes[i] + 1.0);
        weights[i] *= 0.5;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let pk = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

// ---------------------------------------------------------------------------
// Black-Scholes closed form
// ---------------------------------------------------------------------------

/// Black-Scholes call value and first-order sensitivities.
#[derive(Debug, Clone, Copy)]
pub struct BsCall {
    pub price: f64,
    pub delta: f64,
    pub vega: f64,
}

/// Black-Scholes call with carry drift `mu` and discount rate `rate`:
/// `e^{-r tau} (S0 e^{mu tau} Phi(d1) - K Phi(d2))`.
pub fn bs_call(s0: f64, strike: f64, rate: f64, mu: f64, sigma: f64, tau: f64) -> Result<BsCall> {
    for (name, v) in [("s0", s0), ("strike", strike), ("sigma", sigma), ("tau", tau)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain {
                context: match name {
                    "s0" => "bs_call s0",
                    "strike" => "bs_call strike",
                    "sigma" => "bs_call sigma",
                    _ => "bs_call tau",
                },
                value: v,
            });
        }
    }
    let sqrt_tau = tau.sqrt();
    let d1 = ((s0 / strike).ln() + (mu + 0.5 * sigma * sigma) * tau) / (sigma * sqrt_tau);
    let d2 = d1 - sigma * sqrt_tau;
    let carry = ((mu - rate) * tau).exp();
    let disc = (-rate * tau).exp();
    Ok(BsCall {
        price: s0 * carry * norm_cdf(d1) - strike * disc * norm_cdf(d2),
        delta: carry * norm_cdf(d1),
        vega: s0 * carry * std_normal_pdf(d1) * sqrt_tau,
    })
}

#[cfg(test)]
#[allow(clippy::excessive_precision)] // frozen high-precision reference values
mod tests {
    use super::*;
    use crate::model::{GradTheta, InstrumentSpec, KnockStyle};

    fn scaled_call_params(n_obs: u32) -> ModelParams {
        ModelParams {
            s0: 50.0,
            barrier: 60.0,
            mu: 0.1,
            sigma: 0.2,
            dt: 1.0 / n_obs as f64,
            rate: 0.1,
            strike: 50.0,
            n_obs,
        }
    }

    #[test]
    fn gl5_matches_reference_nodes() {
        let (nodes, weights) = gauss_legendre_unit(5);
        // classical [-1,1] values mapped to the unit interval
        let want_nodes = [
            (1.0 - 0.9061798459386640) / 2.0,
            (1.0 - 0.5384693101056831) / 2.0,
            0.5,
            (1.0 + 0.5384693101056831) / 2.0,
            (1.0 + 0.9061798459386640) / 2.0,
        ];
        let want_weights = [
            0.2369268850561891 / 2.0,
            0.4786286704993665 / 2.0,
            0.5688888888888889 / 2.0,
            0.4786286704993665 / 2.0,
            0.2369268850561891 / 2.0,
        ];
        for i in 0..5 {
            assert!((nodes[i] - want_nodes[i]).abs() < 1e-14);
            assert!((weights[i] - want_weights[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn gl_integrates_polynomials_exactly() {
        // degree 2n-1 exactness: x^9 with 5+ nodes
        for n in [8, 13, 64] {
            let (nodes, weights) = gauss_legendre_unit(n);
            let got: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| w * x.powi(9))
                .sum();
            assert!((got - 0.1).abs() < 1e-14, "n={n}: {got}");
            let total: f64 = weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn one_step_digital_in_is_exact() {
        let params = scaled_call_params(1);
        let spec = InstrumentSpec::digital(BarrierDirection::Up, KnockStyle::In, 1.0);
        let grid = QuadratureGrid::new(64, 1).unwrap();
        let got = quadrature_pv(&params, &spec, &grid).unwrap();
        let p0 = survival_prob_raw(params.s0, &StepCtx::new(&params));
        let want = (-params.rate * params.dt).exp() * (1.0 - p0);
        assert!((got - want).abs() < 1e-12, "got {got} want {want}");

        let got = quadrature_greek(&params, &spec, &grid, ThetaIndex::Barrier).unwrap();
        let (df, _) = crate::model::partials_f_raw(params.s0, &StepCtx::new(&params));
        let want = -(-params.rate * params.dt).exp() * df.d_barrier;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn unreachable_barrier_reduces_to_black_scholes() {
        let mut params = scaled_call_params(1);
        params.barrier = 1e12;
        let spec = InstrumentSpec::up_out_call();
        let grid = QuadratureGrid::new(64, 1).unwrap();
        let got = quadrature_pv(&params, &spec, &grid).unwrap();
        let bs = bs_call(50.0, 50.0, 0.1, 0.1, 0.2, params.dt).unwrap();
        assert!(
            (got - bs.price).abs() <= 1e-8 * bs.price,
            "quad {got} vs bs {}",
            bs.price
        );
        let delta = quadrature_greek(&params, &spec, &grid, ThetaIndex::S0).unwrap();
        assert!((delta - bs.delta).abs() < 1e-6, "delta {delta} vs {}", bs.delta);
        let vega = quadrature_greek(&params, &spec, &grid, ThetaIndex::Sigma).unwrap();
        assert!((vega - bs.vega).abs() < 1e-6 * bs.vega.max(1.0));
    }

    #[test]
    fn self_convergence_under_node_doubling() {
        for n_obs in [1, 2, 3] {
            let params = scaled_call_params(n_obs);
            let spec = InstrumentSpec::up_out_call();
            let coarse =
                quadrature_pv(&params, &spec, &QuadratureGrid::new(64, n_obs).unwrap()).unwrap();
            let fine =
                quadrature_pv(&params, &spec, &QuadratureGrid::new(128, n_obs).unwrap()).unwrap();
            assert!(
                (coarse - fine).abs() < 1e-10,
                "T={n_obs}: {coarse} vs {fine}"
            );
        }
    }

    #[test]
    fn oracle_symmetry_in_degenerate_limits() {
        // up-out with unreachable barrier == down-out with barrier ~ 0 ==
        // the plain instrument
        let mut up = scaled_call_params(2);
        up.barrier = 1e10;
        let mut down = up;
        down.barrier = 1e-10;
        let grid = QuadratureGrid::new(64, 2).unwrap();
        let v_up = quadrature_pv(&up, &InstrumentSpec::up_out_call(), &grid).unwrap();
        let v_down = quadrature_pv(&down, &InstrumentSpec::down_out_call(), &grid).unwrap();
        assert!((v_up - v_down).abs() < 1e-8, "{v_up} vs {v_down}");
    }

    #[test]
    fn greek_matches_fd_of_quadrature() {
        for (spec, n_obs) in [
            (InstrumentSpec::up_out_call(), 2u32),
            (
                InstrumentSpec::digital(BarrierDirection::Up, KnockStyle::In, 1.0),
                3,
            ),
        ] {
            let params = scaled_call_params(n_obs);
            let grid = QuadratureGrid::new(64, n_obs).unwrap();
            let mut grad = GradTheta::ZERO;
            for which in ThetaIndex::ALL {
                let g = quadrature_greek(&params, &spec, &grid, which).unwrap();
                let h = 1e-6 * params.theta(which).abs().max(1.0);
                let up = quadrature_pv(&params.with_theta(which, params.theta(which) + h), &spec, &grid)
                    .unwrap();
                let dn = quadrature_pv(&params.with_theta(which, params.theta(which) - h), &spec, &grid)
                    .unwrap();
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (g - fd).abs() <= 1e-6 * g.abs().max(1e-6),
                    "{which:?}: quad {g} vs fd {fd}"
                );
                match which {
                    ThetaIndex::S0 => grad.d_s0 = g,
                    ThetaIndex::Barrier => grad.d_barrier = g,
                    ThetaIndex::Mu => grad.d_mu = g,
                    ThetaIndex::Sigma => grad.d_sigma = g,
                }
            }
            assert!(grad.is_finite());
        }
    }

    #[test]
    fn bs_call_values() {
        let bs = bs_call(50.0, 50.0, 0.1, 0.1, 0.2, 1.0).unwrap();
        assert!((bs.price - 6.6348382923304426231).abs() < 1e-12);
        assert!((bs.delta - 0.72574688224992641971).abs() < 1e-13);
        assert!((bs.vega - 16.661230144589981783).abs() < 1e-11);

        // tau -> 0 limit collapses to intrinsic value
        let bs = bs_call(52.0, 50.0, 0.1, 0.1, 0.2, 1e-10).unwrap();
        assert!((bs.price - 2.0).abs() < 1e-8);

        // deep in the money: delta -> carry factor
        let bs = bs_call(500.0, 50.0, 0.03, 0.07, 0.2, 2.0).unwrap();
        assert!((bs.delta - (0.04f64 * 2.0).exp()).abs() < 1e-9);

        assert!(bs_call(-1.0, 50.0, 0.1, 0.1, 0.2, 1.0).is_err());
        assert!(bs_call(50.0, 50.0, 0.1, 0.1, 0.2, 0.0).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(QuadratureGrid::new(7, 2).is_err());
        assert!(QuadratureGrid::new(8, 4).is_err());
        assert!(QuadratureGrid::new(8, 0).is_err());
        let params = scaled_call_params(2);
        let grid = QuadratureGrid::new(16, 3).unwrap();
        assert!(quadrature_pv(&params, &InstrumentSpec::up_out_call(), &grid).is_err());
    }
}
