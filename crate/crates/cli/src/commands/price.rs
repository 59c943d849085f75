use ossmc::engine;
use ossmc::model::Payoff;

use crate::config::{self, Resolved, SCHEMA_VERSION};
use crate::output::{write_records, PriceRecord};
use crate::{with_threads, CliError, PriceArgs};

pub fn run(args: &PriceArgs) -> Result<(), CliError> {
    let r = config::resolve(&args.model, &args.run)?;
    let out = with_threads(r.threads, || {
        engine::run(r.estimator, &r.params, &r.spec, r.n_paths, r.seed)
    })?;
    let record = make_record(&r, &out);
    write_records(&[record], r.format, r.output.as_deref())
}

pub fn make_record(r: &Resolved, out: &engine::EstimatorOutput) -> PriceRecord {
    let (coupon, delivery) = match r.spec.payoff {
        Payoff::Digital { coupon } => (Some(coupon), None),
        Payoff::Forward { delivery } => (None, Some(delivery)),
        Payoff::VanillaCall => (None, None),
    };
    PriceRecord {
        schema: SCHEMA_VERSION,
        command: "price".into(),
        estimator: r.estimator.name().into(),
        direction: r.spec.direction.name().into(),
        knock: r.spec.knock.name().into(),
        payoff: r.spec.payoff.name().into(),
        s0: r.params.s0,
        barrier: r.params.barrier,
        mu: r.params.mu,
        sigma: r.params.sigma,
        dt: r.params.dt,
        n_obs: r.params.n_obs,
        rate: r.params.rate,
        strike: r.params.strike,
        coupon,
        delivery,
        n_paths: r.n_paths,
        seed: r.seed,
        pv: out.pv,
        pv_stderr: out.pv_stderr,
        delta: out.greeks.map(|g| g.d_s0),
        beta: out.greeks.map(|g| g.d_barrier),
        rho: out.greeks.map(|g| g.d_mu),
        vega: out.greeks.map(|g| g.d_sigma),
        delta_se: out.greek_stderr.map(|g| g.d_s0),
        beta_se: out.greek_stderr.map(|g| g.d_barrier),
        rho_se: out.greek_stderr.map(|g| g.d_mu),
        vega_se: out.greek_stderr.map(|g| g.d_sigma),
    }
}
