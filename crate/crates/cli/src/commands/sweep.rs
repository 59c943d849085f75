use clap::ValueEnum;

use ossmc::engine::{self, EstimatorKind};
use ossmc::fd::{greek_fd, FdScheme};
use ossmc::model::{KnockStyle, ModelParams, Payoff, ThetaIndex};
use ossmc::oracle::{quadrature_greek, quadrature_pv, QuadratureGrid};

use crate::config::{self, SCHEMA_VERSION};
use crate::output::{write_records, SweepRecord};
use crate::{with_threads, CliError, EstimatorArg, SweepArgs};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Initial asset price grid (one pricing per grid point).
    S0,
    /// Sample-count grid at fixed parameters.
    N,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::S0 => "s0",
            SweepParam::N => "n_paths",
        }
    }
}

fn grid(args: &SweepArgs) -> Result<Vec<f64>, CliError> {
    if !args.values.is_empty() {
        return Ok(args.values.clone());
    }
    let (from, to, step) = match (args.from, args.to, args.step) {
        (Some(f), Some(t), Some(s)) if s > 0.0 && t >= f => (f, t, s),
        _ => {
            return Err(CliError::Usage(
                "sweep needs --values or a valid --from/--to/--step range".into(),
            ))
        }
    };
    let mut out = Vec::new();
    let mut v = from;
    while v <= to + 1e-12 * step {
        out.push(v);
        v += step;
    }
    Ok(out)
}

pub fn run(args: &SweepArgs) -> Result<(), CliError> {
    let r = config::resolve(&args.model, &args.run)?;
    let values = grid(args)?;
    let kinds: Vec<EstimatorKind> = args
        .estimators
        .iter()
        .map(|e| match e {
            EstimatorArg::Standard => EstimatorKind::Standard,
            EstimatorArg::Oss => EstimatorKind::Oss,
            EstimatorArg::OssPathwise => EstimatorKind::OssPathwise,
        })
        .collect();

    let records = with_threads(r.threads, || -> Result<Vec<SweepRecord>, CliError> {
        let mut records = Vec::new();
        for &value in &values {
            let (params, n_paths) = match args.param {
                SweepParam::S0 => (ModelParams { s0: value, ..r.params }, r.n_paths),
                SweepParam::N => {
                    if value < 1.0 || value.fract() != 0.0 {
                        return Err(CliError::Usage(format!(
                            "n_paths grid value {value} is not a positive integer"
                        )));
                    }
                    (r.params, value as u64)
                }
            };
            // quadrature reference where the oracle applies (n_obs <= 3 and
            // an instrument with a direct OSS form)
            let reference = QuadratureGrid::new(64, params.n_obs).ok().and_then(|grid| {
                let pv = quadrature_pv(&params, &r.spec, &grid).ok()?;
                let delta = quadrature_greek(&params, &r.spec, &grid, ThetaIndex::S0).ok()?;
                Some((pv, delta))
            });
            for &kind in &kinds {
                let out = engine::run(kind, &params, &r.spec, n_paths, r.seed)?;
                // FD Delta of the estimator's own price under common random
                // numbers; the pathwise estimator prices identically to oss
                let fd_kind = match kind {
                    EstimatorKind::Standard => EstimatorKind::Standard,
                    _ => EstimatorKind::Oss,
                };
                let pricer = |p: &ModelParams, n: u64, seed: u64| {
                    engine::run(fd_kind, p, &r.spec, n, seed)
                };
                let fd = if r.spec.knock == KnockStyle::In
                    && !matches!(r.spec.payoff, Payoff::Digital { .. })
                    && kind == EstimatorKind::Standard
                {
                    // no standard-MC estimator for non-digital knock-ins
                    None
                } else {
                    Some(
                        greek_fd(
                            pricer,
                            &params,
                            ThetaIndex::S0,
                            FdScheme::forward(args.fd_delta),
                            n_paths,
                            r.seed,
                        )?
                        .0,
                    )
                };
                records.push(SweepRecord {
                    schema: SCHEMA_VERSION,
                    command: "sweep".into(),
                    param: args.param.name().into(),
                    value,
                    estimator: kind.name().into(),
                    n_paths,
                    seed: r.seed,
                    pv: out.pv,
                    pv_stderr: out.pv_stderr,
                    delta_pathwise: out.greeks.map(|g| g.d_s0),
                    delta_pathwise_se: out.greek_stderr.map(|g| g.d_s0),
                    delta_fd_forward: fd,
                    fd_step: args.fd_delta,
                    ref_pv: reference.map(|x| x.0),
                    ref_delta: reference.map(|x| x.1),
                });
            }
        }
        Ok(records)
    })?;
    write_records(&records, r.format, r.output.as_deref())
}
