//! Deterministic functional parameters: step functions on time grids and
//! global least-squares cubic polynomials.
//!
//! One grid unit is one observation period (a year for annual data).

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, GsbmError, Result};

/// Strictly increasing time points; the first one is the model origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return domain(format!("time grid needs at least 2 points, got {}", points.len()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return domain("time grid points must be finite");
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return domain(format!(
                "time grid must be strictly increasing, found {} then {}",
                w[0], w[1]
            ));
        }
        Ok(Self { points })
    }

    /// `steps` equal intervals covering `[start, end]`.
    pub fn uniform(start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(end > start) {
            return domain(format!("uniform grid needs end > start and steps ≥ 1 (got [{start}, {end}], {steps})"));
        }
        let dt = (end - start) / steps as f64;
        let mut pts: Vec<f64> = (0..steps).map(|i| start + i as f64 * dt).collect();
        pts.push(end);
        Self::new(pts)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn n_intervals(&self) -> usize {
        self.points.len() - 1
    }

    /// Index of the interval `[t_i, t_{i+1})` containing `t`; the right
    /// endpoint belongs to the last interval.
    pub fn interval_index(&self, t: f64) -> Result<usize> {
        if !(t >= self.start() && t <= self.end()) {
            return domain(format!(
                "time {t} outside grid span [{}, {}]",
                self.start(),
                self.end()
            ));
        }
        let idx = self.points.partition_point(|&p| p <= t);
        Ok((idx - 1).min(self.n_intervals() - 1))
    }

    /// Grid containing the points of both grids, restricted to the common
    /// span.
    pub fn union(&self, other: &TimeGrid) -> Result<TimeGrid> {
        let start = self.start().max(other.start());
        let end = self.end().min(other.end());
        if !(end > start) {
            return domain("grids do not overlap");
        }
        let mut pts: Vec<f64> = self
            .points
            .iter()
            .chain(&other.points)
            .copied()
            .filter(|&p| p >= start && p <= end)
            .collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        TimeGrid::new(pts)
    }

    /// True when every point of `other` inside this grid's span is one of our
    /// points (up to a relative tolerance).
    pub fn refines(&self, other: &TimeGrid) -> bool {
        let scale = self.end().abs().max(self.start().abs()).max(1.0);
        other
            .points
            .iter()
            .filter(|&&p| p > self.start() && p < self.end())
            .all(|&p| {
                let i = self.points.partition_point(|&q| q < p);
                let near = |j: usize| j < self.points.len() && (self.points[j] - p).abs() <= 1e-12 * scale;
                near(i) || (i > 0 && near(i - 1))
            })
    }
}

/// A càdlàg step function: `values[i]` holds on `[t_i, t_{i+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantFn {
    grid: TimeGrid,
    values: Vec<f64>,
    bounds: Option<(f64, f64)>,
}

impl PiecewiseConstantFn {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::build(grid, values, None)
    }

    /// Step function whose values must lie in `[lo, hi]`.
    pub fn bounded(grid: TimeGrid, values: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        Self::build(grid, values, Some((lo, hi)))
    }

    fn build(grid: TimeGrid, values: Vec<f64>, bounds: Option<(f64, f64)>) -> Result<Self> {
        if values.len() != grid.n_intervals() {
            return domain(format!(
                "step function needs {} values, got {}",
                grid.n_intervals(),
                values.len()
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return domain(format!("step function value {v} is not finite"));
        }
        if let Some((lo, hi)) = bounds {
            if let Some(v) = values.iter().find(|&&v| v < lo || v > hi) {
                return domain(format!("step function value {v} outside [{lo}, {hi}]"));
            }
        }
        Ok(Self {
            grid,
            values,
            bounds,
        })
    }

    /// Constant function on `[start, end]`.
    pub fn constant(start: f64, end: f64, value: f64) -> Result<Self> {
        Self::new(TimeGrid::new(vec![start, end])?, vec![value])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        Ok(self.values[self.grid.interval_index(t)?])
    }

    /// Interior breakpoints (grid points strictly inside the span).
    pub fn breakpoints(&self) -> &[f64] {
        let p = self.grid.points();
        &p[1..p.len() - 1]
    }

    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }

    /// True when the function takes a single value on `[a, b]`.
    pub fn is_constant_on(&self, a: f64, b: f64) -> Result<bool> {
        let i = self.grid.interval_index(a)?;
        let j = self.grid.interval_index(b)?;
        // b sitting exactly on a breakpoint does not see the next value
        let j = if j > i && self.grid.points()[j] == b { j - 1 } else { j };
        Ok(self.values[i..=j].windows(2).all(|w| w[0] == w[1]))
    }

    /// ∫_a^b f(τ) dτ for `a ≤ b` inside the span.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Ok(-self.integral(b, a)?);
        }
        self.grid.interval_index(a)?;
        self.grid.interval_index(b)?;
        let p = self.grid.points();
        let mut acc = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let lo = p[i].max(a);
            let hi = p[i + 1].min(b);
            if hi > lo {
                acc += v * (hi - lo);
            }
        }
        Ok(acc)
    }

    /// The same function expressed on a finer grid inside its span.
    pub fn resample(&self, grid: &TimeGrid) -> Result<Self> {
        if grid.start() < self.grid.start() || grid.end() > self.grid.end() || !grid.refines(&self.grid) {
            return domain("target grid must refine the step function's grid within its span");
        }
        let values = grid
            .points()
            .windows(2)
            .map(|w| self.eval(0.5 * (w[0] + w[1])))
            .collect::<Result<Vec<_>>>()?;
        Self::build(grid.clone(), values, self.bounds)
    }

    /// Apply `f` to every value, keeping the grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Write CSV with columns `t_start,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t_start", "value"])?;
        for (t, v) in self.grid.points().iter().zip(&self.values) {
            wtr.write_record([t.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read the `t_start,value` CSV; the grid is closed at `end`.
    pub fn read_csv<R: Read>(r: R, end: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        for rec in rdr.deserialize::<(f64, f64)>() {
            let (t, v) = rec?;
            pts.push(t);
            vals.push(v);
        }
        pts.push(end);
        Self::new(TimeGrid::new(pts)?, vals)
    }
}

/// `a0 + a1 t + a2 t² + a3 t³`. Serialized as a 4-element JSON array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct CubicPoly {
    coeffs: [f64; 4],
}

impl TryFrom<[f64; 4]> for CubicPoly {
    type Error = GsbmError;
    fn try_from(c: [f64; 4]) -> Result<Self> {
        CubicPoly::new(c)
    }
}

impl From<CubicPoly> for [f64; 4] {
    fn from(p: CubicPoly) -> Self {
        p.coeffs
    }
}

impl CubicPoly {
    pub fn new(coeffs: [f64; 4]) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return domain(format!("cubic coefficients must be finite, got {coeffs:?}"));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> [f64; 4] {
        self.coeffs
    }

    /// Horner evaluation.
    pub fn eval(&self, t: f64) -> f64 {
        let [a0, a1, a2, a3] = self.coeffs;
        ((a3 * t + a2) * t + a1) * t + a0
    }
}

/// Least-squares cubic through `(ts, ys)` by Householder QR of the
/// Vandermonde design matrix.
pub fn poly_fit_cubic(ts: &[f64], ys: &[f64]) -> Result<CubicPoly> {
    if ts.len() != ys.len() {
        return Err(GsbmError::Fit {
            message: format!("length mismatch: {} times, {} values", ts.len(), ys.len()),
            best: None,
        });
    }
    if ts.len() < 4 {
        return Err(GsbmError::Fit {
            message: format!("cubic fit needs at least 4 points, got {}", ts.len()),
            best: None,
        });
    }
    if ts.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(GsbmError::Fit {
            message: "non-finite sample".into(),
            best: None,
        });
    }

    // Centre and scale t so the columns are well conditioned, then map the
    // coefficients back.
    let n = ts.len();
    let lo = ts.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let c = 0.5 * (lo + hi);
    let s = 0.5 * (hi - lo);
    if s <= 0.0 {
        return Err(GsbmError::Fit {
            message: "rank-deficient design: all sample times coincide".into(),
            best: None,
        });
    }
    let design = DMatrix::from_fn(n, 4, |i, j| ((ts[i] - c) / s).powi(j as i32));
    let rhs = DVector::from_column_slice(ys);
    let qr = design.qr();
    let r = qr.r();
    let rmax = (0..4).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..4).any(|i| r[(i, i)].abs() <= 1e-12 * rmax) {
        return Err(GsbmError::Fit {
            message: "rank-deficient design: fewer than 4 distinct sample times".into(),
            best: None,
        });
    }
    let qty = qr.q().transpose() * rhs;
    let b = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| GsbmError::Fit {
            message: "singular triangular factor".into(),
            best: None,
        })?;

    // p(t) = Σ b_j ((t - c)/s)^j, expanded into powers of t.
    let mut a = [0.0; 4];
    for (j, &bj) in b.iter().enumerate() {
        let scale = bj / s.powi(j as i32);
        for (k, ak) in a.iter_mut().enumerate().take(j + 1) {
            *ak += scale * binom(j, k) * (-c).powi((j - k) as i32);
        }
    }
    CubicPoly::new(a)
}

fn binom(n: usize, k: usize) -> f64 {
    const ROWS: [[f64; 4]; 4] = [
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.0, 0.0],
        [1.0, 2.0, 1.0, 0.0],
        [1.0, 3.0, 3.0, 1.0],
    ];
    ROWS[n][k]
}
