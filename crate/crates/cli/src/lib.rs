//! Command-line surface for the geometric skew Brownian motion library.
//!
//! Every command writes bulk data only to the paths it is given, prints one
//! JSON summary line on standard output and sends diagnostics to standard
//! error. Exit codes: 0 success, 2 invalid input, 3 numerical or fitting
//! failure, 4 I/O failure. Set `GSBM_VERBOSE=1` for progress messages.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::fmt;
use std::io::Write;

use clap::error::ErrorKind;
use clap::Parser;
use gsbm::GsbmError;
use serde_json::{json, Value};

pub mod commands;
pub mod config;

pub use config::{Command, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// A failure with its exit code and, optionally, structured detail for the
/// summary line.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    pub detail: Option<Value>,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into(), detail: None }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERIC, message: message.into(), detail: None }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into(), detail: None }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<GsbmError> for CliError {
    fn from(e: GsbmError) -> Self {
        let code = match &e {
            GsbmError::Domain(_) | GsbmError::Ingest { .. } => EXIT_VALIDATION,
            GsbmError::Numeric { .. } | GsbmError::Fit { .. } => EXIT_NUMERIC,
            GsbmError::Io(_) => EXIT_IO,
            GsbmError::Csv(c) if c.is_io_error() => EXIT_IO,
            GsbmError::Json(j) if j.is_io() => EXIT_IO,
            GsbmError::Csv(_) | GsbmError::Json(_) => EXIT_VALIDATION,
        };
        Self { code, message: e.to_string(), detail: None }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

/// Whether `GSBM_VERBOSE` asks for progress messages.
pub fn verbose() -> bool {
    std::env::var("GSBM_VERBOSE").is_ok_and(|v| !v.is_empty() && v != "0")
}

/// Parse `args` (program name first), run the command and return the exit
/// code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_VALIDATION
                }
            };
        }
    };
    let command = cfg.command;
    let outcome = cfg.resolve().and_then(|cfg| {
        let command = cfg.command()?;
        commands::dispatch(command, &cfg, err).map(|summary| (command, summary))
    });
    let name = |c: Option<Command>| c.map(|c| json!(c)).unwrap_or(Value::Null);
    match outcome {
        Ok((command, mut summary)) => {
            summary["command"] = json!(command);
            summary["status"] = json!("ok");
            emit(out, &summary);
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            let mut summary = json!({
                "command": name(command),
                "status": "error",
                "exit_code": e.code,
                "error": e.message,
            });
            if let Some(detail) = e.detail {
                summary["detail"] = detail;
            }
            emit(out, &summary);
            e.code
        }
    }
}

fn emit(out: &mut dyn Write, summary: &Value) {
    let _ = writeln!(out, "{summary}");
    let _ = out.flush();
}
