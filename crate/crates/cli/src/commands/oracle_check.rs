use ossmc::engine::{self, EstimatorKind};
use ossmc::model::ThetaIndex;
use ossmc::oracle::{quadrature_greek, quadrature_pv, QuadratureGrid};

use crate::config::{self, SCHEMA_VERSION};
use crate::output::{write_records, OracleCheckRecord};
use crate::{with_threads, CliError, OracleCheckArgs};

pub fn run(args: &OracleCheckArgs) -> Result<(), CliError> {
    let r = config::resolve(&args.model, &args.run)?;
    let grid = QuadratureGrid::new(args.nodes, r.params.n_obs)?;
    let records = with_threads(r.threads, || -> Result<Vec<OracleCheckRecord>, CliError> {
        // the pathwise estimator supplies both the price and the Greeks
        let mc = engine::run(
            EstimatorKind::OssPathwise,
            &r.params,
            &r.spec,
            r.n_paths,
            r.seed,
        )?;
        let greeks = mc.greeks.expect("pathwise estimator returns greeks");
        let se = mc.greek_stderr.expect("pathwise estimator returns greek stderr");

        let record = |quantity: &'static str, quadrature: f64, estimate: f64, stderr: f64| {
            OracleCheckRecord {
                schema: SCHEMA_VERSION,
                command: "oracle-check".into(),
                direction: r.spec.direction.name().into(),
                knock: r.spec.knock.name().into(),
                payoff: r.spec.payoff.name().into(),
                s0: r.params.s0,
                barrier: r.params.barrier,
                n_obs: r.params.n_obs,
                nodes: args.nodes,
                n_paths: r.n_paths,
                seed: r.seed,
                quantity: quantity.into(),
                quadrature,
                estimate,
                stderr,
                zscore: (stderr > 0.0).then(|| (estimate - quadrature).abs() / stderr),
            }
        };

        let mut records = Vec::with_capacity(5);
        let quad_pv = quadrature_pv(&r.params, &r.spec, &grid)?;
        records.push(record("pv", quad_pv, mc.pv, mc.pv_stderr));
        for (name, which) in [
            ("delta", ThetaIndex::S0),
            ("beta", ThetaIndex::Barrier),
            ("rho", ThetaIndex::Mu),
            ("vega", ThetaIndex::Sigma),
        ] {
            let quad = quadrature_greek(&r.params, &r.spec, &grid, which)?;
            records.push(record(
                name,
                quad,
                greeks.component(which),
                se.component(which),
            ));
        }
        Ok(records)
    })?;
    write_records(&records, r.format, r.output.as_deref())
}
