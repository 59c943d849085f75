use ossmc::coco::{calibrate_with, generate_targets, CocoEstimator};

use crate::config::{self, SCHEMA_VERSION};
use crate::output::{write_records, CalibrationRecord, TraceRecord};
use crate::{with_threads, CalibrateArgs, CliError};

pub fn run(args: &CalibrateArgs) -> Result<(), CliError> {
    let r = config::resolve_calibration(args)?;

    let (targets, target_source): (Vec<f64>, &'static str) = match (&r.targets, &r.generate) {
        (Some(t), _) => (t.clone(), "config"),
        (None, Some(g)) => {
            // benchmark targets are generated with the OSS estimator at the
            // dedicated seed and path count
            let t = with_threads(r.threads, || {
                generate_targets(
                    &r.specs,
                    g.barrier,
                    g.sigma,
                    g.n_paths,
                    g.seed,
                    CocoEstimator::OneStepSurvival,
                )
            })?;
            (t, "generated")
        }
        (None, None) => unreachable!("resolve_calibration enforces targets"),
    };

    let mut records = Vec::new();
    let mut traces = Vec::new();
    let mut first_failure: Option<String> = None;
    for &combo in &r.combos {
        let problem = config::build_problem(&r, &targets, combo);
        let result = with_threads(r.threads, || calibrate_with(&problem, &r.solver))?;
        if let (None, Some(f)) = (&first_failure, &result.failure) {
            first_failure = Some(f.clone());
        }
        records.push(CalibrationRecord {
            schema: SCHEMA_VERSION,
            command: "calibrate".into(),
            method: combo.0.name().into(),
            estimator: combo.1.name().into(),
            n_paths: combo.2,
            seed: r.seed,
            target_source: target_source.into(),
            initial_barrier: r.initial.0,
            initial_sigma: r.initial.1,
            fitted_barrier: result.fitted.0,
            fitted_sigma: result.fitted.1,
            data_fit: result.data_fit,
            iterations: result.iterations,
            path_batches: result.path_batches,
            failure: result.failure.clone(),
        });
        for (i, t) in result.trace.iter().enumerate() {
            traces.push(TraceRecord {
                schema: SCHEMA_VERSION,
                command: "calibrate-trace".into(),
                method: combo.0.name().into(),
                estimator: combo.1.name().into(),
                n_paths: combo.2,
                seed: r.seed,
                iter: i as u64,
                barrier: t.barrier,
                sigma: t.sigma,
                residual_norm: t.residual_norm,
            });
        }
    }

    write_records(&records, r.format, r.output.as_deref())?;
    if let Some(path) = &args.trace {
        write_records(&traces, r.format, Some(path))?;
    }
    // a diverged optimizer is a runtime failure, but the records and the
    // partial trace above are written first
    match first_failure {
        Some(f) => Err(CliError::Runtime(format!("optimizer failed: {f}"))),
        None => Ok(()),
    }
}
