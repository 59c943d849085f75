//! TOML configuration schemas and flag merging.
//!
//! Precedence everywhere: command-line flag, then configuration file, then
//! documented default.

use std::path::Path;

use serde::Deserialize;

use ossmc::coco::{
    CalibBounds, CalibMethod, CalibrationInstrument, CalibrationProblem, CoCoSpec, CocoEstimator,
    SolverOptions,
};
use ossmc::engine::EstimatorKind;
use ossmc::model::{BarrierDirection, InstrumentSpec, KnockStyle, ModelParams, Payoff};

use crate::{
    CliError, CocoEstimatorArg, DirectionArg, EstimatorArg, FormatArg, KnockArg, MethodArg,
    ModelArgs, PayoffArg, RunArgs,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_N_PATHS: u64 = 100_000;
pub const DEFAULT_SEED: u64 = 0;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

// ---------------------------------------------------------------------------
// Instrument configuration (price / greeks / sweep / oracle-check)
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema: Option<u32>,
    pub params: Option<ParamsSection>,
    pub instrument: Option<InstrumentSection>,
    pub run: Option<RunSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub s0: Option<f64>,
    pub barrier: Option<f64>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub dt: Option<f64>,
    pub rate: Option<f64>,
    pub strike: Option<f64>,
    pub n_obs: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSection {
    pub direction: Option<String>,
    pub knock: Option<String>,
    pub payoff: Option<String>,
    pub coupon: Option<f64>,
    pub delivery: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub estimator: Option<String>,
    pub n_paths: Option<u64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub format: Option<String>,
    pub output: Option<String>,
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn check_schema(schema: Option<u32>) -> Result<(), CliError> {
    match schema {
        None | Some(SCHEMA_VERSION) => Ok(()),
        Some(v) => Err(usage(format!(
            "unsupported config schema {v}, expected {SCHEMA_VERSION}"
        ))),
    }
}

/// Fully resolved inputs of an instrument command.
pub struct Resolved {
    pub params: ModelParams,
    pub spec: InstrumentSpec,
    pub estimator: EstimatorKind,
    pub n_paths: u64,
    pub seed: u64,
    pub threads: usize,
    pub format: FormatArg,
    pub output: Option<std::path::PathBuf>,
}

pub fn resolve(model: &ModelArgs, run: &RunArgs) -> Result<Resolved, CliError> {
    let file: FileConfig = match &model.config {
        Some(path) => load_toml(path)?,
        None => FileConfig::default(),
    };
    check_schema(file.schema)?;
    let p = file.params.unwrap_or_default();
    let i = file.instrument.unwrap_or_default();
    let r = file.run.unwrap_or_default();

    let need = |flag: Option<f64>, cfg: Option<f64>, name: &str| {
        flag.or(cfg)
            .ok_or_else(|| usage(format!("missing required parameter `{name}`")))
    };
    let params = ModelParams {
        s0: need(model.s0, p.s0, "s0")?,
        barrier: need(model.barrier, p.barrier, "barrier")?,
        mu: need(model.mu, p.mu, "mu")?,
        sigma: need(model.sigma, p.sigma, "sigma")?,
        dt: need(model.dt, p.dt, "dt")?,
        rate: need(model.rate, p.rate, "rate")?,
        strike: model.strike.or(p.strike).unwrap_or(0.0),
        n_obs: model
            .n_obs
            .or(p.n_obs)
            .ok_or_else(|| usage("missing required parameter `n_obs`"))?,
    };
    params.validate().map_err(CliError::from)?;

    let direction = match model.direction {
        Some(DirectionArg::Up) => BarrierDirection::Up,
        Some(DirectionArg::Down) => BarrierDirection::Down,
        None => match i.direction.as_deref() {
            Some("up") | None => BarrierDirection::Up,
            Some("down") => BarrierDirection::Down,
            Some(other) => return Err(usage(format!("unknown direction `{other}`"))),
        },
    };
    let knock = match model.knock {
        Some(KnockArg::Out) => KnockStyle::Out,
        Some(KnockArg::In) => KnockStyle::In,
        None => match i.knock.as_deref() {
            Some("out") | None => KnockStyle::Out,
            Some("in") => KnockStyle::In,
            Some(other) => return Err(usage(format!("unknown knock style `{other}`"))),
        },
    };
    let payoff_kind = match model.payoff {
        Some(PayoffArg::VanillaCall) => "vanilla_call",
        Some(PayoffArg::Digital) => "digital",
        Some(PayoffArg::Forward) => "forward",
        None => i.payoff.as_deref().unwrap_or("vanilla_call"),
    };
    let coupon = model.coupon.or(i.coupon);
    let delivery = model.delivery.or(i.delivery);
    let payoff = match payoff_kind {
        "vanilla_call" => Payoff::VanillaCall,
        "digital" => Payoff::Digital {
            coupon: coupon.ok_or_else(|| usage("digital payoff requires `coupon`"))?,
        },
        "forward" => Payoff::Forward {
            delivery: delivery.ok_or_else(|| usage("forward payoff requires `delivery`"))?,
        },
        other => return Err(usage(format!("unknown payoff `{other}`"))),
    };
    let spec = InstrumentSpec::new(direction, knock, payoff);
    spec.validate().map_err(CliError::from)?;

    let estimator = match run.estimator {
        Some(EstimatorArg::Standard) => EstimatorKind::Standard,
        Some(EstimatorArg::Oss) => EstimatorKind::Oss,
        Some(EstimatorArg::OssPathwise) => EstimatorKind::OssPathwise,
        None => match r.estimator.as_deref() {
            Some("standard") => EstimatorKind::Standard,
            Some("oss") | None => EstimatorKind::Oss,
            Some("oss_pathwise") => EstimatorKind::OssPathwise,
            Some(other) => return Err(usage(format!("unknown estimator `{other}`"))),
        },
    };
    let n_paths = run.n_paths.or(r.n_paths).unwrap_or(DEFAULT_N_PATHS);
    if n_paths == 0 {
        return Err(usage("n_paths must be at least 1"));
    }
    let format = resolve_format(run.format, r.format.as_deref())?;
    let output = run
        .output
        .clone()
        .or_else(|| r.output.as_ref().map(std::path::PathBuf::from));

    Ok(Resolved {
        params,
        spec,
        estimator,
        n_paths,
        seed: run.seed.or(r.seed).unwrap_or(DEFAULT_SEED),
        threads: resolve_threads(run.threads, r.threads),
        format,
        output,
    })
}

pub fn resolve_format(flag: Option<FormatArg>, cfg: Option<&str>) -> Result<FormatArg, CliError> {
    match flag {
        Some(f) => Ok(f),
        None => match cfg {
            Some("csv") | None => Ok(FormatArg::Csv),
            Some("jsonl") => Ok(FormatArg::Jsonl),
            Some(other) => Err(usage(format!("unknown output format `{other}`"))),
        },
    }
}

pub fn resolve_threads(flag: Option<usize>, cfg: Option<usize>) -> usize {
    flag.or(cfg)
        .or_else(|| {
            std::env::var("OSSMC_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Calibration problem configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema: Option<u32>,
    pub method: Option<String>,
    pub estimator: Option<String>,
    pub n_paths: Option<u64>,
    pub seed: Option<u64>,
    pub initial: Option<InitialSection>,
    pub bounds: Option<BoundsSection>,
    #[serde(default)]
    pub instruments: Vec<CocoInstrumentSection>,
    pub targets: Option<TargetsSection>,
    pub solver: Option<SolverSection>,
    pub matrix: Option<MatrixSection>,
    pub run: Option<RunSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub barrier: f64,
    pub sigma: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub barrier: [f64; 2],
    pub sigma: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocoInstrumentSection {
    pub face: f64,
    pub coupon_rate: f64,
    pub frequency: u32,
    pub conversion_price: f64,
    pub maturity: f64,
    pub rate: f64,
    pub s0: f64,
    pub target: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsSection {
    pub generate: bool,
    pub barrier: f64,
    pub sigma: f64,
    pub n_paths: u64,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub max_iter: Option<u64>,
    pub tol: Option<f64>,
    pub damping: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSection {
    pub methods: Vec<String>,
    pub estimators: Option<Vec<String>>,
    pub n_paths: Vec<u64>,
}

pub fn parse_method(name: &str) -> Result<CalibMethod, CliError> {
    match name {
        "nelder_mead" => Ok(CalibMethod::NelderMead),
        "gauss_newton_fd" => Ok(CalibMethod::GaussNewtonFd),
        "gauss_newton_pathwise" => Ok(CalibMethod::GaussNewtonPathwise),
        other => Err(usage(format!("unknown method `{other}`"))),
    }
}

pub fn parse_coco_estimator(name: &str) -> Result<CocoEstimator, CliError> {
    match name {
        "standard" => Ok(CocoEstimator::Standard),
        "oss" => Ok(CocoEstimator::OneStepSurvival),
        other => Err(usage(format!("unknown estimator `{other}`"))),
    }
}

/// One calibration to run, plus the output plumbing.
pub struct ResolvedCalibration {
    /// `(method, estimator, n_paths)` combinations to run.
    pub combos: Vec<(CalibMethod, CocoEstimator, u64)>,
    pub specs: Vec<CoCoSpec>,
    /// Explicit targets from the config, if all instruments carry one.
    pub targets: Option<Vec<f64>>,
    pub generate: Option<TargetsSection>,
    pub initial: (f64, f64),
    pub bounds: CalibBounds,
    pub seed: u64,
    pub solver: SolverOptions,
    pub threads: usize,
    pub format: FormatArg,
    pub output: Option<std::path::PathBuf>,
}

pub fn resolve_calibration(args: &crate::CalibrateArgs) -> Result<ResolvedCalibration, CliError> {
    let cfg: ProblemConfig = load_toml(&args.config)?;
    check_schema(cfg.schema)?;
    if cfg.instruments.is_empty() {
        return Err(usage("calibration config needs at least one [[instruments]] block"));
    }
    let specs: Vec<CoCoSpec> = cfg
        .instruments
        .iter()
        .map(|i| CoCoSpec {
            face: i.face,
            coupon_rate: i.coupon_rate,
            frequency: i.frequency,
            conversion_price: i.conversion_price,
            maturity: i.maturity,
            rate: i.rate,
            s0: i.s0,
        })
        .collect();
    for spec in &specs {
        spec.validate().map_err(CliError::from)?;
    }

    let explicit: Vec<Option<f64>> = cfg.instruments.iter().map(|i| i.target).collect();
    let targets = if explicit.iter().all(|t| t.is_some()) {
        Some(explicit.iter().map(|t| t.unwrap()).collect())
    } else {
        None
    };
    let generate = cfg.targets;
    if let Some(g) = &generate {
        if !g.generate {
            return Err(usage("[targets] present but generate = false"));
        }
    }
    if targets.is_none() && generate.is_none() {
        return Err(usage(
            "either every instrument needs a `target` or a [targets] generation block is required",
        ));
    }

    let initial = cfg
        .initial
        .map(|i| (i.barrier, i.sigma))
        .ok_or_else(|| usage("missing `initial = { barrier = ..., sigma = ... }`"))?;
    let min_s0 = specs.iter().map(|s| s.s0).fold(f64::INFINITY, f64::min);
    let bounds = match cfg.bounds {
        Some(b) => CalibBounds {
            barrier: (b.barrier[0], b.barrier[1]),
            sigma: (b.sigma[0], b.sigma[1]),
        },
        None => CalibBounds {
            barrier: (1e-4, 0.95 * min_s0),
            sigma: (1e-3, 3.0),
        },
    };

    let method = match args.method {
        Some(MethodArg::NelderMead) => CalibMethod::NelderMead,
        Some(MethodArg::GaussNewtonFd) => CalibMethod::GaussNewtonFd,
        Some(MethodArg::GaussNewtonPathwise) => CalibMethod::GaussNewtonPathwise,
        None => parse_method(cfg.method.as_deref().unwrap_or("gauss_newton_pathwise"))?,
    };
    let estimator = match args.estimator {
        Some(CocoEstimatorArg::Standard) => CocoEstimator::Standard,
        Some(CocoEstimatorArg::Oss) => CocoEstimator::OneStepSurvival,
        None => parse_coco_estimator(cfg.estimator.as_deref().unwrap_or("oss"))?,
    };
    let n_paths = args.n_paths.or(cfg.n_paths).unwrap_or(DEFAULT_N_PATHS);
    if n_paths == 0 {
        return Err(usage("n_paths must be at least 1"));
    }

    // a [matrix] block expands into the (method, estimator, n) grid;
    // invalid combinations (pathwise Jacobian on the standard estimator)
    // are skipped
    let combos = match (&cfg.matrix, args.method.is_some() || args.n_paths.is_some()) {
        (Some(m), false) => {
            let estimators = match &m.estimators {
                Some(list) => list
                    .iter()
                    .map(|e| parse_coco_estimator(e))
                    .collect::<Result<Vec<_>, _>>()?,
                None => vec![estimator],
            };
            let mut combos = Vec::new();
            for method_name in &m.methods {
                let method = parse_method(method_name)?;
                for &est in &estimators {
                    if method == CalibMethod::GaussNewtonPathwise
                        && est != CocoEstimator::OneStepSurvival
                    {
                        continue;
                    }
                    for &n in &m.n_paths {
                        combos.push((method, est, n));
                    }
                }
            }
            combos
        }
        _ => vec![(method, estimator, n_paths)],
    };

    let run = cfg.run.unwrap_or_default();
    let defaults = SolverOptions::default();
    let solver = match cfg.solver {
        Some(s) => SolverOptions {
            max_iter: s.max_iter.unwrap_or(defaults.max_iter),
            tol: s.tol.unwrap_or(defaults.tol),
            damping: s.damping.unwrap_or(defaults.damping),
        },
        None => defaults,
    };

    Ok(ResolvedCalibration {
        combos,
        specs,
        targets,
        generate,
        initial,
        bounds,
        seed: args.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED),
        solver,
        threads: resolve_threads(args.threads, run.threads),
        format: resolve_format(args.format, run.format.as_deref())?,
        output: args
            .output
            .clone()
            .or_else(|| run.output.as_ref().map(std::path::PathBuf::from)),
    })
}

/// Builds the domain problem for one matrix combination.
pub fn build_problem(
    resolved: &ResolvedCalibration,
    targets: &[f64],
    combo: (CalibMethod, CocoEstimator, u64),
) -> CalibrationProblem {
    CalibrationProblem {
        instruments: resolved
            .specs
            .iter()
            .zip(targets)
            .map(|(spec, &target)| CalibrationInstrument {
                spec: *spec,
                target,
            })
            .collect(),
        initial: resolved.initial,
        bounds: resolved.bounds,
        n_paths: combo.2,
        seed: resolved.seed,
        method: combo.0,
        estimator: combo.1,
    }
}
