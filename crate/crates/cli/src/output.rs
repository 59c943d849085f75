//! Output records with a frozen field order (see `docs/output-schema.md`).
//!
//! Records never carry wall-clock fields: repeated runs with the same
//! configuration and seed must produce byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CliError, FormatArg};

#[derive(Debug, Serialize, Deserialize)]
pub struct PriceRecord {
    pub schema: u32,
    pub command: String,
    pub estimator: String,
    pub direction: String,
    pub knock: String,
    pub payoff: String,
    pub s0: f64,
    pub barrier: f64,
    pub mu: f64,
    pub sigma: f64,
    pub dt: f64,
    pub n_obs: u32,
    pub rate: f64,
    pub strike: f64,
    pub coupon: Option<f64>,
    pub delivery: Option<f64>,
    pub n_paths: u64,
    pub seed: u64,
    pub pv: f64,
    pub pv_stderr: f64,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub rho: Option<f64>,
    pub vega: Option<f64>,
    pub delta_se: Option<f64>,
    pub beta_se: Option<f64>,
    pub rho_se: Option<f64>,
    pub vega_se: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GreeksRecord {
    pub schema: u32,
    pub command: String,
    pub estimator: String,
    pub direction: String,
    pub knock: String,
    pub payoff: String,
    pub s0: f64,
    pub barrier: f64,
    pub n_obs: u32,
    pub n_paths: u64,
    pub seed: u64,
    pub theta: String,
    pub pathwise: f64,
    pub pathwise_se: f64,
    pub fd_central: f64,
    pub fd_step: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepRecord {
    pub schema: u32,
    pub command: String,
    pub param: String,
    pub value: f64,
    pub estimator: String,
    pub n_paths: u64,
    pub seed: u64,
    pub pv: f64,
    pub pv_stderr: f64,
    pub delta_pathwise: Option<f64>,
    pub delta_pathwise_se: Option<f64>,
    /// Empty where the estimator has no direct form to difference.
    pub delta_fd_forward: Option<f64>,
    pub fd_step: f64,
    pub ref_pv: Option<f64>,
    pub ref_delta: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleCheckRecord {
    pub schema: u32,
    pub command: String,
    pub direction: String,
    pub knock: String,
    pub payoff: String,
    pub s0: f64,
    pub barrier: f64,
    pub n_obs: u32,
    pub nodes: usize,
    pub n_paths: u64,
    pub seed: u64,
    pub quantity: String,
    pub quadrature: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// Empty when the estimate is deterministic (zero standard error).
    pub zscore: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub schema: u32,
    pub command: String,
    pub method: String,
    pub estimator: String,
    pub n_paths: u64,
    pub seed: u64,
    pub target_source: String,
    pub initial_barrier: f64,
    pub initial_sigma: f64,
    pub fitted_barrier: f64,
    pub fitted_sigma: f64,
    pub data_fit: f64,
    pub iterations: u64,
    pub path_batches: u64,
    pub failure: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub schema: u32,
    pub command: String,
    pub method: String,
    pub estimator: String,
    pub n_paths: u64,
    pub seed: u64,
    pub iter: u64,
    pub barrier: f64,
    pub sigma: f64,
    pub residual_norm: f64,
}

/// Reads records back from a file written by [`write_records`].
pub fn read_records<T: serde::de::DeserializeOwned>(
    path: &Path,
    format: FormatArg,
) -> Result<Vec<T>, CliError> {
    match format {
        FormatArg::Csv => {
            let mut r = csv::Reader::from_path(path)
                .map_err(|e| CliError::Runtime(format!("csv read: {e}")))?;
            r.deserialize()
                .collect::<Result<Vec<T>, _>>()
                .map_err(|e| CliError::Runtime(format!("csv read: {e}")))
        }
        FormatArg::Jsonl => std::fs::read_to_string(path)?
            .lines()
            .map(|line| {
                serde_json::from_str(line).map_err(|e| CliError::Runtime(format!("json read: {e}")))
            })
            .collect(),
    }
}

/// Writes all records as CSV (RFC-4180 quoting, header row) or JSON-lines.
pub fn write_records<T: Serialize>(
    records: &[T],
    format: FormatArg,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let mut sink: Box<dyn Write> = match output {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    match format {
        FormatArg::Csv => {
            let mut w = csv::Writer::from_writer(&mut sink);
            for r in records {
                w.serialize(r)
                    .map_err(|e| CliError::Runtime(format!("csv write: {e}")))?;
            }
            w.flush()?;
        }
        FormatArg::Jsonl => {
            for r in records {
                let line = serde_json::to_string(r)
                    .map_err(|e| CliError::Runtime(format!("json write: {e}")))?;
                writeln!(sink, "{line}")?;
            }
        }
    }
    sink.flush()?;
    Ok(())
}
