//! One function per command; each returns the fields of its summary line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gsbm::calibrate::{calibrate_window_with, fit_parameter_polys, write_estimates_csv, WindowEstimates, WindowFlag};
use gsbm::gsbm::{cond_exp_const_oracle, cond_exp_forecast, simulate_gsbm, ForecastQuery, GsbmModel};
use gsbm::pipeline::{descriptive_stats, ingest_csv, moving_variance, rolling_forecast_with, ForecastOptions, VolSeries};
use gsbm::rng::StreamKey;
use gsbm::sbm::{breakpoint_spec, InhomKernel, SkewStepKernel};
use gsbm::timefunc::TimeGrid;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{parse_breakpoints, Command, RunConfig};
use crate::{verbose, CliError};

pub fn dispatch(command: Command, cfg: &RunConfig, err: &mut dyn Write) -> Result<Value, CliError> {
    match command {
        Command::Simulate => simulate(cfg, err),
        Command::Density => density(cfg, err),
        Command::Calibrate => calibrate(cfg, err),
        Command::Forecast => forecast(cfg, err),
        Command::Ingest => ingest(cfg, err),
        Command::Selftest => selftest(cfg, err),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Read an input file, naming it in any I/O error.
fn read_input<T>(path: &Path, read: impl FnOnce(&Path) -> gsbm::Result<T>) -> Result<T, CliError> {
    read(path).map_err(|e| match e {
        gsbm::GsbmError::Io(io) => CliError::io(format!("{}: {io}", path.display())),
        e => e.into(),
    })
}

fn positive(value: f64, name: &str) -> Result<f64, CliError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(CliError::validation(format!("--{name} must be positive, got {value}")))
    }
}

fn at_least(value: usize, min: usize, name: &str) -> Result<usize, CliError> {
    if value >= min {
        Ok(value)
    } else {
        Err(CliError::validation(format!("--{name} must be at least {min}, got {value}")))
    }
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

fn simulate(cfg: &RunConfig, err: &mut dyn Write) -> Result<Value, CliError> {
    let horizon = positive(cfg.t.unwrap_or(1.0), "t")?;
    let alpha = parse_breakpoints(RunConfig::require(&cfg.alpha, "alpha")?, horizon, "alpha", Some((0.0, 1.0)))?;
    let mu = parse_breakpoints(RunConfig::require(&cfg.mu, "mu")?, horizon, "mu", None)?;
    let sigma = parse_breakpoints(RunConfig::require(&cfg.sigma, "sigma")?, horizon, "sigma", Some((0.0, f64::MAX)))?;
    let g0 = positive(cfg.g0.unwrap_or(1.0), "g0")?;
    let steps = at_least(cfg.steps.unwrap_or(100), 1, "steps")?;
    let n_paths = cfg.paths.unwrap_or(1);
    if n_paths == 0 {
        return Err(CliError::validation("--paths must be at least 1"));
    }
    let seed = cfg.seed.unwrap_or(0);
    let out = cfg.out_path()?;

    let model = GsbmModel::aligned(mu, sigma, alpha, g0)?;
    let grid = TimeGrid::uniform(model.grid().start(), horizon, steps)?.union(model.grid())?;
    if verbose() {
        let _ = writeln!(err, "simulate: {n_paths} paths on {} steps, seed {seed}", grid.n_intervals());
    }
    let paths = simulate_gsbm(&model, &grid, StreamKey::new(seed), n_paths)?;

    let mut w = create(out)?;
    writeln!(
        w,
        "# seed={seed} g0={g0} alpha={} mu={} sigma={}",
        breakpoint_spec(model.alpha()),
        breakpoint_spec(model.mu()),
        breakpoint_spec(model.sigma())
    )?;
    writeln!(w, "path,t,x,g")?;
    for (i, p) in paths.iter().enumerate() {
        for ((t, x), g) in grid.points().iter().zip(&p.driver.states).zip(&p.levels) {
            writeln!(w, "{i},{t},{x},{g}")?;
        }
    }
    finish(w, out)?;
    let terminal: Vec<f64> = paths.iter().map(|p| p.terminal()).collect();
    Ok(json!({
        "out": out,
        "paths": n_paths,
        "steps": grid.n_intervals(),
        "rows": paths.len() * grid.points().len(),
        "seed": seed,
        "terminal_mean": terminal.iter().sum::<f64>() / terminal.len() as f64,
    }))
}

fn density(cfg: &RunConfig, err: &mut dyn Write) -> Result<Value, CliError> {
    let t = *RunConfig::require(&cfg.t, "t")?;
    let alpha = parse_breakpoints(RunConfig::require(&cfg.alpha, "alpha")?, t, "alpha", Some((0.0, 1.0)))?;
    let s = cfg.s.unwrap_or(alpha.grid().start());
    let x = cfg.x.unwrap_or(0.0);
    let (ymin, ymax) = (cfg.ymin.unwrap_or(-4.0), cfg.ymax.unwrap_or(4.0));
    if !(ymin < ymax && ymin.is_finite() && ymax.is_finite()) {
        return Err(CliError::validation(format!("need finite --ymin < --ymax, got {ymin}, {ymax}")));
    }
    let n = at_least(cfg.n.unwrap_or(801), 2, "n")?;
    let out = cfg.out_path()?;

    let kernel = InhomKernel::new(s, t, &alpha)?;
    if verbose() {
        let _ = writeln!(err, "density: {n} points on [{ymin}, {ymax}] from x={x}, s={s}, t={t}");
    }
    let step = (ymax - ymin) / (n - 1) as f64;
    let ys: Vec<f64> = (0..n).map(|i| if i == n - 1 { ymax } else { ymin + i as f64 * step }).collect();
    let ps: Vec<f64> = ys.par_iter().map(|&y| kernel.density(x, y)).collect::<gsbm::Result<_>>()?;

    let mut w = create(out)?;
    writeln!(w, "y,p")?;
    for (y, p) in ys.iter().zip(&ps) {
        writeln!(w, "{y},{p}")?;
    }
    finish(w, out)?;
    let mass: f64 = ys.windows(2).zip(ps.windows(2)).map(|(y, p)| 0.5 * (y[1] - y[0]) * (p[0] + p[1])).sum();
    Ok(json!({ "out": out, "points": n, "mass": mass }))
}

fn ingest(cfg: &RunConfig, err: &mut dyn Write) -> Result<Value, CliError> {
    let input = cfg.input_path()?;
    let w = at_least(cfg.w.unwrap_or(12), 2, "w")?;
    let out = cfg.out_path()?;
    let raw = read_input(input, |p| ingest_csv(p))?;
    if verbose() {
        let _ = writeln!(err, "ingest: {} years from {}", raw.len(), input.display());
    }
    let vol = moving_variance(&raw, w)?;
    let mut file = create(out)?;
    vol.write_csv(&mut file)?;
    finish(file, out)?;
    let present: Vec<f64> = vol.values.iter().flatten().copied().collect();
    Ok(json!({
        "out": out,
        "years": [raw.years.first(), raw.years.last()],
        "n_raw": raw.len(),
        "w": w,
        "n_vol": vol.len(),
        "gaps": vol.len() - present.len(),
        "totals_stats": descriptive_stats(&raw.totals).ok(),
        "vol_stats": descriptive_stats(&present).ok(),
    }))
}

fn window_len(cfg: &RunConfig) -> Result<usize, CliError> {
    at_least(cfg.window_len.unwrap_or(12), 6, "L")
}

fn calibrate(cfg: &RunConfig, err: &mut dyn Write) -> Result<Value, CliError> {
    let input = cfg.input_path()?;
    let l = window_len(cfg)?;
    let h = cfg.h.unwrap_or(0);
    let method = cfg.fit_method();
    let out = cfg.out_path()?;
    let series = read_input(input, |p| VolSeries::read_csv(p))?;
    let n = series.len();
    if n < l + h.max(1) {
        return Err(CliError::validation(format!("series of length {n} too short for L={l}, h={h}")));
    }
    if verbose() {
        let _ = writeln!(err, "calibrate: {} windows of length {l}", n - h - l + 1);
    }
    let outcomes: Vec<Option<WindowEstimates>> = (l..=n - h)
        .into_par_iter()
        .map(|t| {
            let window: Option<Vec<f64>> = series.values[t - l..t].iter().copied().collect();
            window.map(|w| calibrate_window_with(&w, t, method))
        })
        .collect();
    let skipped = outcomes.iter().filter(|o| o.is_none()).count();
    let estimates: Vec<WindowEstimates> = outcomes.into_iter().flatten().collect();
    let mut file = create(out)?;
    write_estimates_csv(&mut file, &estimates)?;
    finish(file, out)?;

    let count = |f: WindowFlag| estimates.iter().filter(|e| e.flag == f).count();
    let usable: Vec<_> = estimates.iter().filter_map(|e| e.usable()).collect();
    let polys = fit_parameter_polys(&estimates).ok();
    Ok(json!({
        "out": out,
        "L": l,
        "windows": estimates.len(),
        "skipped_gaps": skipped,
        "flags": {
            "ok": count(WindowFlag::Ok),
            "degenerate": count(WindowFlag::Degenerate),
            "near_degenerate": count(WindowFlag::NearDegenerate),
            "fit_failed": count(WindowFlag::FitFailed),
        },
        "median": {
            "mu": median(usable.iter().map(|p| p.mu).collect()),
            "sigma": median(usable.iter().map(|p| p.sigma).collect()),
            "alpha": median(usable.iter().map(|p| p.alpha).collect()),
        },
        "polys": polys,
    }))
}

fn forecast(cfg: &RunConfig, err: &mut dyn Write) -> Result<Value, CliError> {
    let input = cfg.input_path()?;
    let l = window_len(cfg)?;
    let h = at_least(cfg.h.unwrap_or(1), 1, "h")?;
    let opts = ForecastOptions { force_alpha: cfg.force_alpha, fit: cfg.fit_method() };
    let series = read_input(input, |p| VolSeries::read_csv(p))?;
    if verbose() {
        let _ = writeln!(err, "forecast: {} points, L={l}, h={h}", series.len());
    }
    let mut report = rolling_forecast_with(&series, l, h, &opts)?;
    report.w = cfg.w.or(report.w);
    if let Some(out) = &cfg.out {
        let mut file = create(out)?;
        report.write_json(&mut file)?;
        writeln!(file)?;
        finish(file, out)?;
    }
    if let Some(plot) = &cfg.plot_out {
        let mut file = create(plot)?;
        report.write_plot_csv(&mut file)?;
        finish(file, plot)?;
    }
    let baseline = report.baseline.as_deref();
    Ok(json!({
        "out": cfg.out,
        "plot_out": cfg.plot_out,
        "L": l,
        "h": h,
        "predictions": report.predictions.len(),
        "gaps": report.gaps,
        "rmse": report.rmse,
        "nrmse_range": report.nrmse_range,
        "nrmse_mean": report.nrmse_mean,
        "baseline_rmse": baseline.map(|b| b.rmse),
        "baseline_nrmse_range": baseline.map(|b| b.nrmse_range),
    }))
}

struct Suite {
    name: &'static str,
    tol: f64,
    max_error: f64,
    cases: usize,
}

impl Suite {
    fn json(&self) -> Value {
        json!({
            "name": self.name,
            "cases": self.cases,
            "tol": self.tol,
            "max_error": self.max_error,
            "pass": self.max_error <= self.tol,
        })
    }
}

/// Randomized oracle checks: inhomogeneous vs closed-form density,
/// conditional mean vs the error-function closed form, and the symmetric
/// case vs geometric Brownian motion.
fn selftest(cfg: &RunConfig, err: &mut dyn Write) -> Result<Value, CliError> {
    let key = StreamKey::new(cfg.seed.unwrap_or(0));
    let n = at_least(cfg.n.unwrap_or(20), 1, "n")?;
    let draw = |suite: u64, case: usize, lo: [f64; 5], hi: [f64; 5]| -> [f64; 5] {
        // One stream address per coordinate: (suite, 5·case + k).
        std::array::from_fn(|k| lo[k] + (hi[k] - lo[k]) * key.at(suite, (5 * case + k) as u64).open01())
    };

    let density_err: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let [a, x, y, dt, _] = draw(0, i, [0.0, -3.0, -4.0, 0.1, 0.0], [1.0, 3.0, 4.0, 4.0, 1.0]);
            let alpha = gsbm::timefunc::PiecewiseConstantFn::constant(0.0, dt, a)?;
            let inhom = InhomKernel::new(0.0, dt, &alpha)?.density(x, y)?;
            Ok((inhom - SkewStepKernel::new(a, dt, x)?.density(y)).abs())
        })
        .collect::<gsbm::Result<_>>()?;

    let mgf_err: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let [a, mu, sigma, t, ratio] = draw(1, i, [0.0, -0.2, 0.05, 0.2, 0.3], [1.0, 0.2, 0.6, 3.0, 3.0]);
            let model = GsbmModel::constant(mu, sigma, a, 1.0, t)?;
            let got = cond_exp_forecast(&ForecastQuery::new(0.0, t, ratio, &model)?)?;
            let want = ((mu - 0.5 * sigma * sigma) * t).exp() * cond_exp_const_oracle(a, sigma, t, ratio.ln() / sigma)?;
            Ok((got / want - 1.0).abs())
        })
        .collect::<gsbm::Result<_>>()?;

    let gbm_err: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let [gs, mu, sigma, s, dt] = draw(2, i, [0.1, -0.3, 0.05, 0.0, 0.1], [50.0, 0.3, 0.8, 3.0, 4.0]);
            let model = GsbmModel::constant(mu, sigma, 0.5, 1.0, s + dt)?;
            let got = cond_exp_forecast(&ForecastQuery::new(s, s + dt, gs, &model)?)?;
            Ok((got / (gs * (mu * dt).exp()) - 1.0).abs())
        })
        .collect::<gsbm::Result<_>>()?;

    let worst = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let suites = [
        Suite { name: "density_closed_form", tol: 1e-8, max_error: worst(&density_err), cases: n },
        Suite { name: "conditional_mean_closed_form", tol: 1e-5, max_error: worst(&mgf_err), cases: n },
        Suite { name: "symmetric_reduces_to_gbm", tol: 1e-6, max_error: worst(&gbm_err), cases: n },
    ];
    for s in &suites {
        if verbose() {
            let _ = writeln!(err, "selftest {}: max error {:e} (tol {:e})", s.name, s.max_error, s.tol);
        }
    }
    let report: Vec<Value> = suites.iter().map(Suite::json).collect();
    let failed: Vec<&str> = suites.iter().filter(|s| !(s.max_error <= s.tol)).map(|s| s.name).collect();
    if failed.is_empty() {
        Ok(json!({ "suites": report }))
    } else {
        Err(CliError {
            detail: Some(json!({ "suites": report })),
            ..CliError::numeric(format!("tolerance breached in {}", failed.join(", ")))
        })
    }
}
