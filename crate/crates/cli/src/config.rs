//! Run configuration: command-line flags merged over an optional JSON file.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use gsbm::calibrate::FitMethod;
use gsbm::timefunc::{PiecewiseConstantFn, TimeGrid};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Simulate skew-BM driver paths and the geometric levels they drive.
    Simulate,
    /// Tabulate the transition density on a grid of end points.
    Density,
    /// Rolling-window calibration of a volatility series.
    Calibrate,
    /// Rolling calibrate-and-forecast backtest with error report.
    Forecast,
    /// Annual totals to a moving-variance volatility series.
    Ingest,
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitArg {
    Penalized,
    Mle,
}

impl From<FitArg> for FitMethod {
    fn from(f: FitArg) -> Self {
        match f {
            FitArg::Penalized => FitMethod::Penalized,
            FitArg::Mle => FitMethod::Mle,
        }
    }
}

/// Every setting, as flags; each may also come from `--config`.
#[derive(Debug, Default, Parser, Serialize, Deserialize)]
#[command(name = "gsbm", version, about = "Geometric skew Brownian motion: simulate, evaluate, calibrate, forecast")]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Command to run; may instead be given as "command" in the config file.
    #[arg(value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,

    /// JSON file with any of these settings; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Random seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Shape α(t) as breakpoints "t0:v0,t1:v1,…".
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,

    /// Drift μ(t) as breakpoints.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,

    /// Volatility σ(t) as breakpoints.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,

    /// Start time (density).
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,

    /// End time / horizon.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,

    /// Uniform time steps per path (simulate).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,

    /// Number of paths (simulate).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<u64>,

    /// Initial level G₀ (simulate).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g0: Option<f64>,

    /// Start state (density).
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,

    /// Lower end of the density grid.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ymin: Option<f64>,

    /// Upper end of the density grid.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ymax: Option<f64>,

    /// Number of density grid points (selftest: cases per suite).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,

    /// Input CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,

    /// Main output file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    /// Plot-data CSV (forecast).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plot_out: Option<PathBuf>,

    /// Calibration window length.
    #[arg(long = "L")]
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub window_len: Option<usize>,

    /// Forecast horizon.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,

    /// Moving-variance window (ingest).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,

    /// Window estimator.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitArg>,

    /// Replace every calibrated shape by this value (forecast).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force_alpha: Option<f64>,
}

impl RunConfig {
    /// Overlay the parsed flags on the config file named by `--config`.
    pub fn resolve(self) -> Result<RunConfig, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let mut merged: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        let Value::Object(base) = &mut merged else {
            return Err(CliError::validation(format!("config {} must be a JSON object", path.display())));
        };
        let Value::Object(flags) = serde_json::to_value(&self).expect("flags serialize") else {
            unreachable!("config struct serializes to an object")
        };
        base.extend(flags);
        let mut cfg: RunConfig =
            serde_json::from_value(merged).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        cfg.config = Some(path);
        Ok(cfg)
    }

    pub fn command(&self) -> Result<Command, CliError> {
        self.command
            .ok_or_else(|| CliError::validation("no command given (simulate, density, calibrate, forecast, ingest, selftest)"))
    }

    pub fn fit_method(&self) -> FitMethod {
        self.fit.map(FitMethod::from).unwrap_or_default()
    }

    pub fn require<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::validation(format!("--{name} is required for this command")))
    }

    pub fn out_path(&self) -> Result<&Path, CliError> {
        Self::require(&self.out, "out").map(PathBuf::as_path)
    }

    pub fn input_path(&self) -> Result<&Path, CliError> {
        Self::require(&self.input, "input").map(PathBuf::as_path)
    }
}

/// Parse `"t0:v0,t1:v1,…"` into a step function on `[t0, end]`.
pub fn parse_breakpoints(spec: &str, end: f64, name: &str, bounds: Option<(f64, f64)>) -> Result<PiecewiseConstantFn, CliError> {
    let bad = |msg: String| CliError::validation(format!("--{name} \"{spec}\": {msg}"));
    let mut points = Vec::new();
    let mut values = Vec::new();
    for item in spec.split(',') {
        let (t, v) = item
            .split_once(':')
            .ok_or_else(|| bad(format!("expected t:v, got '{}'", item.trim())))?;
        let t: f64 = t.trim().parse().map_err(|_| bad(format!("invalid time '{}'", t.trim())))?;
        let v: f64 = v.trim().parse().map_err(|_| bad(format!("invalid value '{}'", v.trim())))?;
        points.push(t);
        values.push(v);
    }
    if let Some(&last) = points.last() {
        if !(end > last) {
            return Err(bad(format!("last breakpoint {last} must lie before the end time {end}")));
        }
    }
    points.push(end);
    let grid = TimeGrid::new(points).map_err(|e| bad(e.to_string()))?;
    let f = match bounds {
        Some((lo, hi)) => PiecewiseConstantFn::bounded(grid, values, lo, hi),
        None => PiecewiseConstantFn::new(grid, values),
    };
    f.map_err(|e| bad(e.to_string()))
}
