//! Disaster-impact data: ingestion, moving-variance series, descriptive
//! statistics, the rolling calibrate-and-forecast loop and error reports.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_window_with, FitMethod, GsbmParams, WindowFlag};
use crate::error::{domain, GsbmError, Result};
use crate::gsbm::{cond_exp_forecast, ForecastQuery, GsbmModel};
use crate::rng::StreamKey;
use crate::sbm::azzalini_marginal_sample;

/// Annual totals of people affected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub years: Vec<i32>,
    pub totals: Vec<f64>,
}

impl RawSeries {
    pub fn new(years: Vec<i32>, totals: Vec<f64>) -> Result<Self> {
        if years.len() != totals.len() {
            return domain("years and totals differ in length");
        }
        if years.windows(2).any(|w| w[1] != w[0] + 1) {
            return domain("years must increase by exactly one");
        }
        if totals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return domain("totals must be finite and non-negative");
        }
        Ok(Self { years, totals })
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    year: String,
    total_affected: String,
}

/// Parse `year,total_affected`. Every offending line is reported.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<RawSeries> {
    let path = path.as_ref();
    let file = File::open(path)?;
    ingest_reader(BufReader::new(file), path)
}

pub fn ingest_reader<R: Read>(reader: R, path: &Path) -> Result<RawSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["year", "total_affected"] {
        return Err(GsbmError::Ingest {
            path: path.to_path_buf(),
            problems: vec![format!("line 1: expected header year,total_affected, got {}", headers.iter().collect::<Vec<_>>().join(","))],
        });
    }
    let mut problems = Vec::new();
    let mut years = Vec::new();
    let mut totals = Vec::new();
    for (i, rec) in rdr.deserialize::<RawRow>().enumerate() {
        let line = i + 2;
        let row = match rec {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {line}: malformed row ({e})"));
                continue;
            }
        };
        let year = match row.year.parse::<i32>() {
            Ok(y) => y,
            Err(_) => {
                problems.push(format!("line {line}: invalid year '{}'", row.year));
                continue;
            }
        };
        if row.total_affected.is_empty() {
            problems.push(format!("line {line}: missing total for {year}"));
            continue;
        }
        let total = match row.total_affected.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => v,
            _ => {
                problems.push(format!("line {line}: invalid total '{}'", row.total_affected));
                continue;
            }
        };
        if let Some(&prev) = years.last() {
            if year == prev {
                problems.push(format!("line {line}: duplicated year {year}"));
                continue;
            }
            if year != prev + 1 {
                problems.push(format!("line {line}: year {year} does not follow {prev}"));
                continue;
            }
        }
        years.push(year);
        totals.push(total);
    }
    if years.is_empty() && problems.is_empty() {
        problems.push("no data rows".into());
    }
    if !problems.is_empty() {
        return Err(GsbmError::Ingest {
            path: path.to_path_buf(),
            problems,
        });
    }
    RawSeries::new(years, totals)
}

/// Trailing moving variance of the totals; zero-variance windows are gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolSeries {
    pub index: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub window_w: Option<usize>,
}

impl VolSeries {
    /// Series from plain values; non-positive entries become gaps.
    pub fn from_values(index: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if index.len() != values.len() {
            return domain("index and values differ in length");
        }
        let values = values
            .into_iter()
            .map(|v| if v > 0.0 && v.is_finite() { Some(v) } else { None })
            .collect();
        Ok(Self {
            index,
            values,
            window_w: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV `t,V`; gaps are empty cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "V"])?;
        for (t, v) in self.index.iter().zip(&self.values) {
            wtr.write_record([t.to_string(), v.map(|x| x.to_string()).unwrap_or_default()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_from(BufReader::new(File::open(path)?), path)
    }

    pub fn read_from<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut index = Vec::new();
        let mut values = Vec::new();
        let mut problems = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = match rec {
                Ok(r) if r.len() == 2 => r,
                Ok(r) => {
                    problems.push(format!("line {line}: expected 2 fields, got {}", r.len()));
                    continue;
                }
                Err(e) => {
                    problems.push(format!("line {line}: {e}"));
                    continue;
                }
            };
            let t = match rec[0].parse::<f64>() {
                Ok(t) => t,
                Err(_) => {
                    problems.push(format!("line {line}: invalid time '{}'", &rec[0]));
                    continue;
                }
            };
            let v = if rec[1].is_empty() {
                None
            } else {
                match rec[1].parse::<f64>() {
                    Ok(v) if v > 0.0 && v.is_finite() => Some(v),
                    Ok(_) => None,
                    Err(_) => {
                        problems.push(format!("line {line}: invalid value '{}'", &rec[1]));
                        continue;
                    }
                }
            };
            index.push(t);
            values.push(v);
        }
        if !problems.is_empty() {
            return Err(GsbmError::Ingest {
                path: path.to_path_buf(),
                problems,
            });
        }
        Ok(Self {
            index,
            values,
            window_w: None,
        })
    }
}

/// Unbiased sample variance over the trailing window of length `w`.
pub fn moving_variance(raw: &RawSeries, w: usize) -> Result<VolSeries> {
    if w < 2 {
        return domain(format!("moving-variance window must be at least 2, got {w}"));
    }
    if raw.len() < w {
        return domain(format!("series of length {} shorter than window {w}", raw.len()));
    }
    let mut index = Vec::with_capacity(raw.len() - w + 1);
    let mut values = Vec::with_capacity(raw.len() - w + 1);
    for u in (w - 1)..raw.len() {
        let win = &raw.totals[u + 1 - w..=u];
        let mean = win.iter().sum::<f64>() / w as f64;
        let var = win.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w - 1) as f64;
        index.push(raw.years[u] as f64);
        values.push(if var > 0.0 { Some(var) } else { None });
    }
    Ok(VolSeries {
        index,
        values,
        window_w: Some(w),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Mean, unbiased standard deviation, moment skewness `m₃/m₂^{3/2}` and
/// non-excess kurtosis `m₄/m₂²`.
pub fn descriptive_stats(x: &[f64]) -> Result<DescriptiveStats> {
    if x.len() < 4 {
        return domain(format!("descriptive statistics need at least 4 values, got {}", x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return domain("descriptive statistics need finite values");
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    if !(m2 > 0.0) {
        return domain("descriptive statistics need nonzero variance");
    }
    let std = (m2 / (n - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    Ok(DescriptiveStats {
        mean,
        std,
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    })
}

/// One aligned forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Index label of the forecast origin.
    pub t: f64,
    /// Index label of the forecast target.
    pub target: f64,
    pub v_hat: f64,
    pub v_real: f64,
}

/// Realized vs predicted values with error metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub h: usize,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub window_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    pub predictions: Vec<Prediction>,
    pub rmse: f64,
    /// RMSE divided by the range of the realized values.
    pub nrmse_range: f64,
    /// RMSE divided by the mean of the realized values.
    pub nrmse_mean: f64,
    /// Forecast origins that produced no prediction.
    pub gaps: usize,
    /// The realized range is zero; `nrmse_range` is reported as 0.
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Box<ForecastReport>>,
}

impl ForecastReport {
    fn from_predictions(h: usize, predictions: Vec<Prediction>, gaps: usize) -> Self {
        let n = predictions.len();
        let (rmse, nrmse_range, nrmse_mean, degenerate) = if n == 0 {
            (f64::NAN, f64::NAN, f64::NAN, true)
        } else {
            let mse = predictions.iter().map(|p| (p.v_hat - p.v_real).powi(2)).sum::<f64>() / n as f64;
            let rmse = mse.sqrt();
            let max = predictions.iter().map(|p| p.v_real).fold(f64::NEG_INFINITY, f64::max);
            let min = predictions.iter().map(|p| p.v_real).fold(f64::INFINITY, f64::min);
            let mean = predictions.iter().map(|p| p.v_real).sum::<f64>() / n as f64;
            let range = max - min;
            if range > 0.0 {
                (rmse, rmse / range, rmse / mean, false)
            } else {
                (rmse, 0.0, rmse / mean, true)
            }
        };
        Self {
            h,
            window_len: None,
            w: None,
            predictions,
            rmse,
            nrmse_range,
            nrmse_mean,
            gaps,
            degenerate,
            baseline: None,
        }
    }

    /// Alias for the range-normalized error.
    pub fn nrmse(&self) -> f64 {
        self.nrmse_range
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Plot data `t,v_real,v_hat,rel_error` keyed by target time.
    pub fn write_plot_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "v_real", "v_hat", "rel_error"])?;
        for p in &self.predictions {
            wtr.write_record([
                p.target.to_string(),
                p.v_real.to_string(),
                p.v_hat.to_string(),
                ((p.v_hat - p.v_real) / p.v_real).to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Knobs for [`rolling_forecast_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ForecastOptions {
    /// Replace every calibrated shape by this value.
    pub force_alpha: Option<f64>,
    /// Window estimator.
    pub fit: FitMethod,
}

/// Rolling calibrate-and-forecast loop with default options.
pub fn rolling_forecast(series: &VolSeries, window_len: usize, h: usize) -> Result<ForecastReport> {
    rolling_forecast_with(series, window_len, h, &ForecastOptions::default())
}

/// For each `t = L, …, N − h`: calibrate constant parameters on
/// `[t − L + 1, t]`, then forecast `V_{t+h}` as the conditional mean with a
/// window-relative origin (`G₀` = first window value, `s = L − 1`).
pub fn rolling_forecast_with(series: &VolSeries, window_len: usize, h: usize, opts: &ForecastOptions) -> Result<ForecastReport> {
    if window_len < 6 {
        return domain(format!("window length must be at least 6, got {window_len}"));
    }
    if h < 1 {
        return domain("forecast horizon must be at least 1");
    }
    let n = series.len();
    if n < window_len + h {
        return domain(format!("series of length {n} too short for L={window_len}, h={h}"));
    }
    if let Some(a) = opts.force_alpha {
        if !(0.0..=1.0).contains(&a) {
            return domain(format!("forced shape must lie in [0, 1], got {a}"));
        }
    }

    let outcomes: Vec<Option<Prediction>> = (window_len..=n - h)
        .into_par_iter()
        .map(|t| forecast_one(series, window_len, h, t, opts))
        .collect::<Result<_>>()?;
    let gaps = outcomes.iter().filter(|o| o.is_none()).count();
    let predictions: Vec<Prediction> = outcomes.into_iter().flatten().collect();

    let baseline_preds: Vec<Prediction> = predictions
        .iter()
        .map(|p| Prediction { v_hat: series_value_at(series, p.t), ..*p })
        .collect();
    let mut baseline = ForecastReport::from_predictions(h, baseline_preds, gaps);
    baseline.window_len = Some(window_len);

    let mut report = ForecastReport::from_predictions(h, predictions, gaps);
    report.window_len = Some(window_len);
    report.w = series.window_w;
    report.baseline = Some(Box::new(baseline));
    Ok(report)
}

fn series_value_at(series: &VolSeries, label: f64) -> f64 {
    let i = series.index.iter().position(|&t| t == label).unwrap();
    series.values[i].unwrap()
}

fn forecast_one(series: &VolSeries, window_len: usize, h: usize, t: usize, opts: &ForecastOptions) -> Result<Option<Prediction>> {
    let window: Option<Vec<f64>> = series.values[t - window_len..t].iter().copied().collect();
    let (Some(window), Some(v_real)) = (window, series.values[t + h - 1]) else {
        return Ok(None);
    };
    let est = calibrate_window_with(&window, t, opts.fit);
    if est.flag != WindowFlag::Ok {
        return Ok(None);
    }
    let p = est.params.expect("ok window carries parameters");
    let alpha = opts.force_alpha.unwrap_or(p.alpha);
    let s = (window_len - 1) as f64;
    let target = s + h as f64;
    let model = GsbmModel::constant(p.mu, p.sigma, alpha, window[0], target)?;
    let gs = window[window_len - 1];
    let v_hat = match cond_exp_forecast(&ForecastQuery::new(s, target, gs, &model)?) {
        Ok(v) => v,
        Err(GsbmError::Numeric { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(Some(Prediction {
        t: series.index[t - 1],
        target: series.index[t + h - 1],
        v_hat,
        v_real,
    }))
}

/// `V̂_{t+h} = V_t` for every origin `t = 1, …, N − h` with both values
/// present.
pub fn persistence_baseline(series: &VolSeries, h: usize) -> Result<ForecastReport> {
    if h < 1 {
        return domain("forecast horizon must be at least 1");
    }
    if series.len() <= h {
        return domain(format!("series of length {} too short for h={h}", series.len()));
    }
    let mut preds = Vec::new();
    let mut gaps = 0;
    for i in 0..series.len() - h {
        match (series.values[i], series.values[i + h]) {
            (Some(v), Some(r)) => preds.push(Prediction {
                t: series.index[i],
                target: series.index[i + h],
                v_hat: v,
                v_real: r,
            }),
            _ => gaps += 1,
        }
    }
    let mut report = ForecastReport::from_predictions(h, preds, gaps);
    report.w = series.window_w;
    Ok(report)
}

/// Synthetic levels whose one-period log-increments are i.i.d.
/// `(μ − σ²/2) + σ·Z`, with `Z` the unit-time Azzalini marginal of shape
/// `α`. This is the law the window calibration assumes, so the generating
/// parameters are what the rolling estimates should recover. Index labels
/// run `1..=n`.
pub fn synthetic_series(params: GsbmParams, g0: f64, n: usize, key: StreamKey) -> Result<VolSeries> {
    if !(g0 > 0.0 && g0.is_finite()) {
        return domain(format!("initial level must be positive, got {g0}"));
    }
    if !(params.sigma >= 0.0 && params.sigma.is_finite() && params.mu.is_finite()) {
        return domain("synthetic series needs finite μ and σ ≥ 0");
    }
    if n < 2 {
        return domain(format!("synthetic series needs at least 2 values, got {n}"));
    }
    let drift = params.mu - 0.5 * params.sigma * params.sigma;
    let mut log_level = g0.ln();
    let mut values = Vec::with_capacity(n);
    values.push(g0);
    for k in 1..n {
        let z = azzalini_marginal_sample(params.alpha, 1.0, &mut key.at(0, k as u64))?;
        log_level += drift + params.sigma * z;
        values.push(log_level.exp());
    }
    VolSeries::from_values((1..=n).map(|i| i as f64).collect(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::path::PathBuf;

    fn ingest(text: &str) -> Result<RawSeries> {
        ingest_reader(text.as_bytes(), &PathBuf::from("mem.csv"))
    }

    #[test]
    fn ingest_well_formed() {
        let r = ingest("year,total_affected\n2000,10\n2001,0\n2002,35.5\n").unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.years, vec![2000, 2001, 2002]);
        assert_eq!(r.totals, vec![10.0, 0.0, 35.5]);
    }

    #[test]
    fn ingest_reports_offending_lines() {
        let err = ingest("year,total_affected\n2000,10\n2000,5\n2001,\n2002,abc\n2005,3\n").unwrap_err();
        match err {
            GsbmError::Ingest { problems, .. } => {
                assert!(problems[0].contains("line 3") && problems[0].contains("duplicated"));
                assert!(problems[1].contains("line 4") && problems[1].contains("missing"));
                assert!(problems[2].contains("line 5"));
                assert!(problems[3].contains("line 6"));
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(ingest("yr,total\n2000,1\n").is_err());
    }

    #[test]
    fn moving_variance_jump() {
        // window [0,0,0,c]: mean c/4, Σ(x−m)² = 3c²/16 + 9c²/16 = 3c²/4, /(w−1) = c²/4
        let raw = RawSeries::new((2000..2006).collect(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 8.0]).unwrap();
        let v = moving_variance(&raw, 4).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.values[0], None);
        assert_eq!(v.values[1], None);
        assert_relative_eq!(v.values[2].unwrap(), 64.0 / 4.0, epsilon = 1e-12);
        assert_eq!(v.index, vec![2003.0, 2004.0, 2005.0]);
    }

    #[test]
    fn moving_variance_errors_and_constant() {
        let raw = RawSeries::new((0..5).collect(), vec![3.0; 5]).unwrap();
        assert!(moving_variance(&raw, 1).is_err());
        assert!(moving_variance(&raw, 6).is_err());
        assert!(moving_variance(&raw, 3).unwrap().values.iter().all(|v| v.is_none()));
    }

    #[test]
    fn two_point_moments() {
        let s = descriptive_stats(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.skewness, 0.0);
        assert_relative_eq!(s.kurtosis, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.std, (4.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert!(descriptive_stats(&[1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(descriptive_stats(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn persistence_examples() {
        let flat = VolSeries::from_values((0..10).map(f64::from).collect(), vec![4.0; 10]).unwrap();
        let r = persistence_baseline(&flat, 1).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.nrmse_range, 0.0);
        assert!(r.degenerate);

        let lin = VolSeries::from_values((0..20).map(f64::from).collect(), (1..=20).map(f64::from).collect()).unwrap();
        let r = persistence_baseline(&lin, 1).unwrap();
        assert_relative_eq!(r.rmse, 1.0, epsilon = 1e-15);
        // realized values 2..=20
        assert_relative_eq!(r.nrmse_range, 1.0 / 18.0, epsilon = 1e-15);
        assert_relative_eq!(r.nrmse_range * 18.0, r.rmse, epsilon = 1e-15);
        assert!(persistence_baseline(&lin, 0).is_err());
    }

    #[test]
    fn vol_csv_round_trip_with_gaps() {
        let v = VolSeries {
            index: vec![1.0, 2.0, 3.0],
            values: vec![Some(2.5), None, Some(1.0)],
            window_w: None,
        };
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "t,V\n1,2.5\n2,\n3,1\n");
        let back = VolSeries::read_from(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn rolling_forecast_preconditions() {
        let v = VolSeries::from_values((0..10).map(f64::from).collect(), vec![1.0; 10]).unwrap();
        assert!(rolling_forecast(&v, 5, 1).is_err());
        assert!(rolling_forecast(&v, 6, 0).is_err());
        assert!(rolling_forecast(&v, 10, 1).is_err());
        let r = rolling_forecast(&v, 6, 1).unwrap();
        assert_eq!(r.gaps, 10 - 1 - 6 + 1);
        assert!(r.predictions.is_empty());
    }
}
