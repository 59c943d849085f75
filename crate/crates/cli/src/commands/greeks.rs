use ossmc::engine::{self, EstimatorKind};
use ossmc::fd::{greek_fd, FdScheme};
use ossmc::model::ThetaIndex;

use crate::config::{self, SCHEMA_VERSION};
use crate::output::{write_records, GreeksRecord};
use crate::{with_threads, CliError, GreeksArgs};

pub fn run(args: &GreeksArgs) -> Result<(), CliError> {
    let r = config::resolve(&args.model, &args.run)?;
    let records = with_threads(r.threads, || -> Result<Vec<GreeksRecord>, CliError> {
        let pw = engine::run(EstimatorKind::OssPathwise, &r.params, &r.spec, r.n_paths, r.seed)?;
        let greeks = pw.greeks.expect("pathwise estimator returns greeks");
        let se = pw.greek_stderr.expect("pathwise estimator returns greek stderr");
        let pricer = |p: &ossmc::ModelParams, n: u64, seed: u64| {
            engine::run(EstimatorKind::Oss, p, &r.spec, n, seed)
        };
        let mut records = Vec::with_capacity(4);
        for which in ThetaIndex::ALL {
            let delta = match which {
                ThetaIndex::S0 | ThetaIndex::Barrier => args.fd_delta_price,
                ThetaIndex::Mu | ThetaIndex::Sigma => args.fd_delta_rate,
            };
            let (fd, _) = greek_fd(
                pricer,
                &r.params,
                which,
                FdScheme::central(delta),
                r.n_paths,
                r.seed,
            )?;
            records.push(GreeksRecord {
                schema: SCHEMA_VERSION,
                command: "greeks".into(),
                estimator: "oss_pathwise".into(),
                direction: r.spec.direction.name().into(),
                knock: r.spec.knock.name().into(),
                payoff: r.spec.payoff.name().into(),
                s0: r.params.s0,
                barrier: r.params.barrier,
                n_obs: r.params.n_obs,
                n_paths: r.n_paths,
                seed: r.seed,
                theta: which.name().into(),
                pathwise: greeks.component(which),
                pathwise_se: se.component(which),
                fd_central: fd,
                fd_step: delta,
            });
        }
        Ok(records)
    })?;
    write_records(&records, r.format, r.output.as_deref())
}
