//! Cross-module checks of the Monte Carlo estimators against the
//! quadrature oracle and closed forms.

use ossmc::engine::{price_oss, price_oss_pathwise, price_standard_mc};
use ossmc::model::{BarrierDirection, InstrumentSpec, KnockStyle, ModelParams, Payoff};
use ossmc::oracle::{bs_call, quadrature_pv, QuadratureGrid};

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

/// Sample mean and standard error of the mean.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn estimators_are_unbiased_against_quadrature() {
    // Means over 100 independent seeds at n = 1e4 each agree with the
    // quadrature value within 3 standard errors of the seed-mean.
    let params = scaled_call_params(2);
    let spec = InstrumentSpec::up_out_call();
    let grid = QuadratureGrid::new(64, 2).unwrap();
    let truth = quadrature_pv(&params, &spec, &grid).unwrap();

    let std_pvs: Vec<f64> = (0..100)
        .map(|s| price_standard_mc(&params, &spec, 10_000, 9000 + s).unwrap().pv)
        .collect();
    let oss_pvs: Vec<f64> = (0..100)
        .map(|s| price_oss(&params, &spec, 10_000, 9000 + s).unwrap().pv)
        .collect();

    let (m_std, se_std) = mean_se(&std_pvs);
    let (m_oss, se_oss) = mean_se(&oss_pvs);
    assert!(
        (m_std - truth).abs() <= 3.0 * se_std,
        "standard mean {m_std} vs quadrature {truth} (se {se_std})"
    );
    assert!(
        (m_oss - truth).abs() <= 3.0 * se_oss,
        "oss mean {m_oss} vs quadrature {truth} (se {se_oss})"
    );
    // the survival estimator should be visibly tighter near the barrier
    assert!(se_oss < se_std, "oss se {se_oss} vs standard se {se_std}");
}

#[test]
fn digital_down_in_agrees_with_standard_mc() {
    // The down-direction digital knock-in (the CoCo building block) against
    // a plain indicator simulation.
    let params = ModelParams {
        s0: 0.6075,
        barrier: 0.4,
        mu: 0.0342,
        sigma: 0.4,
        dt: 0.5,
        rate: 0.0342,
        strike: 0.0,
        n_obs: 17,
    };
    let spec = InstrumentSpec::digital(BarrierDirection::Down, KnockStyle::In, 375.0);
    let oss = price_oss(&params, &spec, 100_000, 5).unwrap();
    let std = price_standard_mc(&params, &spec, 400_000, 6).unwrap();
    let tol = 3.0 * (oss.pv_stderr.powi(2) + std.pv_stderr.powi(2)).sqrt();
    assert!(
        (oss.pv - std.pv).abs() <= tol,
        "oss {} vs standard {} (tol {tol})",
        oss.pv,
        std.pv
    );
}

#[test]
fn unreachable_barrier_matches_black_scholes() {
    let mut params = scaled_call_params(50);
    params.barrier = 1e9;
    let spec = InstrumentSpec::up_out_call();
    let out = price_oss(&params, &spec, 200_000, 11).unwrap();
    let bs = bs_call(50.0, 50.0, 0.1, 0.1, 0.2, 1.0).unwrap();
    assert!(
        (out.pv - bs.price).abs() <= 3.0 * out.pv_stderr,
        "pv {} vs bs {} (se {})",
        out.pv,
        bs.price,
        out.pv_stderr
    );
}

#[test]
fn knock_in_forward_parity_against_analytic_plain_leg() {
    // knock-in = plain - knock-out: check against the analytic forward
    // value minus the OSS knock-out estimate on the CoCo-style setup.
    let params = ModelParams {
        s0: 0.6075,
        barrier: 0.4,
        mu: 0.0342,
        sigma: 0.4,
        dt: 0.5,
        rate: 0.0342,
        strike: 0.0,
        n_obs: 17,
    };
    let payoff = Payoff::Forward { delivery: 0.59 };
    let spec_in = InstrumentSpec::new(BarrierDirection::Down, KnockStyle::In, payoff);
    let spec_out = InstrumentSpec::new(BarrierDirection::Down, KnockStyle::Out, payoff);
    let (n, seed) = (200_000, 8);
    let parity = ossmc::engine::price_knock_in_parity(&params, &spec_in, n, seed).unwrap();
    let out = price_oss(&params, &spec_out, n, seed).unwrap();
    let tau = params.maturity();
    let plain_analytic =
        params.s0 * ((params.mu - params.rate) * tau).exp() - 0.59 * params.discount();
    let want = plain_analytic - out.pv;
    let se = (parity.pv_stderr.powi(2) + out.pv_stderr.powi(2)).sqrt();
    assert!(
        (parity.pv - want).abs() <= 3.0 * se,
        "parity pv {} vs analytic-minus-out {want} (se {se})",
        parity.pv
    );
}

#[test]
fn forward_knock_out_pathwise_greeks_match_paired_fd() {
    // forward payoff, down barrier: the CoCo forward leg configuration
    let params = ModelParams {
        s0: 0.6075,
        barrier: 0.4,
        mu: 0.0342,
        sigma: 0.4,
        dt: 0.5,
        rate: 0.0342,
        strike: 0.0,
        n_obs: 17,
    };
    let spec = InstrumentSpec::new(
        BarrierDirection::Down,
        KnockStyle::Out,
        Payoff::Forward { delivery: 0.59 },
    );
    let out = price_oss_pathwise(&params, &spec, 100_000, 21).unwrap();
    let greeks = out.greeks.unwrap();
    let se = out.greek_stderr.unwrap();
    for which in ossmc::model::ThetaIndex::ALL {
        let delta = ossmc::fd::FdScheme::default_delta(which) * 1e-1;
        let (fd, fd_se) =
            ossmc::fd::greek_fd_paired(&params, &spec, which, delta, 100_000, 21).unwrap();
        let g = greeks.component(which);
        let tol = (1e-4 * g.abs()).max(3.0 * (se.component(which).powi(2) + fd_se.powi(2)).sqrt());
        assert!(
            (g - fd).abs() <= tol,
            "{which:?}: pathwise {g} vs fd {fd} (tol {tol})"
        );
    }
}
