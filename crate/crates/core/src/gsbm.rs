//! Geometric skew Brownian motion
//! `G_t = G₀·exp(∫(μ − σ²/2)ds + ∫σ dX^α)` and its conditional mean.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, GsbmError, Result};
use crate::normal::{norm_cdf, norm_sf};
use crate::quad::TanhSinh;
use crate::rng::StreamKey;
use crate::sbm::{simulate_path, InhomKernel, SbmPath};
use crate::timefunc::{PiecewiseConstantFn, TimeGrid};

/// Drift, volatility and shape on a shared grid plus the initial level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsbmModel {
    mu: PiecewiseConstantFn,
    sigma: PiecewiseConstantFn,
    alpha: PiecewiseConstantFn,
    g0: f64,
}

impl GsbmModel {
    /// All three functions must live on the same grid.
    pub fn new(mu: PiecewiseConstantFn, sigma: PiecewiseConstantFn, alpha: PiecewiseConstantFn, g0: f64) -> Result<Self> {
        if mu.grid() != sigma.grid() || mu.grid() != alpha.grid() {
            return domain("drift, volatility and shape must share one grid");
        }
        if !(g0 > 0.0 && g0.is_finite()) {
            return domain(format!("initial level must be positive, got {g0}"));
        }
        if let Some(s) = sigma.values().iter().find(|&&s| s < 0.0) {
            return domain(format!("volatility must be non-negative, got {s}"));
        }
        if let Some(a) = alpha.values().iter().find(|&&a| !(0.0..=1.0).contains(&a)) {
            return domain(format!("shape parameter must lie in [0, 1], got {a}"));
        }
        let alpha = PiecewiseConstantFn::bounded(alpha.grid().clone(), alpha.values().to_vec(), 0.0, 1.0)?;
        Ok(Self { mu, sigma, alpha, g0 })
    }

    /// Bring the three functions onto the union of their grids first.
    pub fn aligned(mu: PiecewiseConstantFn, sigma: PiecewiseConstantFn, alpha: PiecewiseConstantFn, g0: f64) -> Result<Self> {
        let grid = mu.grid().union(sigma.grid())?.union(alpha.grid())?;
        Self::new(mu.resample(&grid)?, sigma.resample(&grid)?, alpha.resample(&grid)?, g0)
    }

    /// Constant parameters on `[0, horizon]`.
    pub fn constant(mu: f64, sigma: f64, alpha: f64, g0: f64, horizon: f64) -> Result<Self> {
        Self::new(
            PiecewiseConstantFn::constant(0.0, horizon, mu)?,
            PiecewiseConstantFn::constant(0.0, horizon, sigma)?,
            PiecewiseConstantFn::constant(0.0, horizon, alpha)?,
            g0,
        )
    }

    pub fn mu(&self) -> &PiecewiseConstantFn {
        &self.mu
    }

    pub fn sigma(&self) -> &PiecewiseConstantFn {
        &self.sigma
    }

    pub fn alpha(&self) -> &PiecewiseConstantFn {
        &self.alpha
    }

    pub fn g0(&self) -> f64 {
        self.g0
    }

    pub fn grid(&self) -> &TimeGrid {
        self.mu.grid()
    }

    /// The model with its initial level replaced.
    pub fn with_g0(&self, g0: f64) -> Result<Self> {
        Self::new(self.mu.clone(), self.sigma.clone(), self.alpha.clone(), g0)
    }

    /// ∫_a^b (μ(τ) − σ(τ)²/2) dτ.
    fn log_drift(&self, a: f64, b: f64) -> Result<f64> {
        Ok(self.mu.integral(a, b)? - 0.5 * self.sigma.map(|s| s * s)?.integral(a, b)?)
    }
}

/// Levels of `G` along a driving skew-BM path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsbmPath {
    pub grid: TimeGrid,
    pub levels: Vec<f64>,
    pub driver: SbmPath,
}

impl GsbmPath {
    pub fn terminal(&self) -> f64 {
        *self.levels.last().unwrap()
    }

    /// CSV `t,g`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,g")?;
        for (t, g) in self.grid.points().iter().zip(&self.levels) {
            writeln!(w, "{t},{g}")?;
        }
        Ok(())
    }
}

/// Pathwise solution with per-step constant parameters; for step-function
/// σ the increment sum is the stochastic integral exactly.
pub fn gsbm_path(model: &GsbmModel, driver: &SbmPath) -> Result<GsbmPath> {
    let grid = &driver.grid;
    if grid.start() < model.grid().start() || grid.end() > model.grid().end() || !grid.refines(model.grid()) {
        return domain("driver grid must refine the model grid within its span");
    }
    let pts = grid.points();
    let mut levels = Vec::with_capacity(pts.len());
    levels.push(model.g0);
    let mut log_level = model.g0.ln();
    for (i, w) in pts.windows(2).enumerate() {
        let mid = 0.5 * (w[0] + w[1]);
        let mu = model.mu.eval(mid)?;
        let sigma = model.sigma.eval(mid)?;
        let dt = w[1] - w[0];
        log_level += (mu - 0.5 * sigma * sigma) * dt + sigma * (driver.states[i + 1] - driver.states[i]);
        levels.push(log_level.exp().max(f64::MIN_POSITIVE));
    }
    Ok(GsbmPath {
        grid: grid.clone(),
        levels,
        driver: driver.clone(),
    })
}

/// Simulate `n_paths` geometric paths with drivers started at zero.
pub fn simulate_gsbm(model: &GsbmModel, grid: &TimeGrid, key: StreamKey, n_paths: u64) -> Result<Vec<GsbmPath>> {
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let driver = simulate_path(&model.alpha, grid, 0.0, key, i)?;
            gsbm_path(model, &driver)
        })
        .collect()
}

/// Arguments of `E[G_t | G_s = gs]`.
#[derive(Debug, Clone)]
pub struct ForecastQuery<'a> {
    pub s: f64,
    pub t: f64,
    pub gs: f64,
    pub model: &'a GsbmModel,
}

impl<'a> ForecastQuery<'a> {
    pub fn new(s: f64, t: f64, gs: f64, model: &'a GsbmModel) -> Result<Self> {
        if !(gs > 0.0 && gs.is_finite()) {
            return domain(format!("observed level must be positive, got {gs}"));
        }
        let origin = model.grid().start();
        if !(s >= origin && s < t && t <= model.grid().end()) {
            return domain(format!(
                "forecast needs {origin} ≤ s < t ≤ {}, got s={s}, t={t}",
                model.grid().end()
            ));
        }
        if !model.sigma.is_constant_on(origin, t)? {
            return domain("volatility must be constant on [0, t] for the conditional mean");
        }
        if !(model.sigma.eval(origin)? > 0.0) {
            return domain("volatility must be positive for the conditional mean");
        }
        Ok(Self { s, t, gs, model })
    }
}

/// Conditional mean of the geometric process:
///
/// ```text
/// E[G_t | G_s] = G_s·exp(∫_0^t(μ − σ²/2)dτ − log(G_s/G₀))·∫ e^{σy} p_α(t, y | s, F(G_s)) dy
/// F(x) = (log(x/G₀) − ∫_0^s(μ − σ²/2)dτ) / σ
/// ```
///
/// with `p_α` from the local-time quadrature.
pub fn cond_exp_forecast(q: &ForecastQuery<'_>) -> Result<f64> {
    let m = q.model;
    let origin = m.grid().start();
    let sigma = m.sigma.eval(origin)?;
    let drift_t = m.log_drift(origin, q.t)?;
    let drift_s = m.log_drift(origin, q.s)?;
    let log_ratio = (q.gs / m.g0).ln();
    let f = (log_ratio - drift_s) / sigma;

    let kernel = InhomKernel::new(q.s, q.t, &m.alpha)?;
    let tilted = tilted_mass(&kernel, f, sigma)?;
    if !(tilted > 0.0) {
        return Err(GsbmError::Numeric {
            message: format!("non-positive exponential moment {tilted}"),
            achieved: f64::INFINITY,
        });
    }
    // e^{σy} = e^{σF}·e^{σ(y−F)}
    Ok(q.gs * (drift_t - log_ratio + sigma * f + tilted.ln()).exp())
}

/// `∫ e^{σ(y − x)} p(y | x) dy` with the window widened until the Gaussian
/// tail bound `p ≤ 3·φ_T(y − x)` certifies a relative truncation error
/// below 1e-8.
pub fn tilted_mass(kernel: &InhomKernel, x: f64, sigma: f64) -> Result<f64> {
    let horizon = kernel.horizon();
    let sd = horizon.sqrt();
    let shift = sigma * horizon;
    let half_width = (shift + 12.0) * sd;
    let mgf = (0.5 * sigma * sigma * horizon).exp();
    // The total is of order `mgf`; pieces far in a tail are judged against
    // that scale rather than their own vanishing size.
    let quad = TanhSinh {
        abs_tol: 1e-13 * mgf,
        // The inner density quadrature is accurate to ~1e-10; asking more of
        // the outer rule only makes it chase that noise.
        rel_tol: 1e-8,
        min_level: 3,
        max_evals: 1 << 14,
    };

    let piece = |a: f64, b: f64| -> Result<f64> {
        let mut cuts = vec![a];
        if a < 0.0 && b > 0.0 {
            cuts.push(0.0);
        }
        cuts.push(b);
        let mut err = None;
        let q = quad.integrate_pieces(&cuts, |n| match kernel.density(x, n.x) {
            Ok(p) => (sigma * (n.x - x)).exp() * p,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(q.value),
        }
    };

    let mut lo = x - half_width;
    let mut hi = x + half_width;
    let mut total = piece(lo, hi)?;
    let upper = |hi: f64| 3.0 * mgf * norm_sf((hi - x - shift) / sd);
    let lower = |lo: f64| 3.0 * mgf * norm_cdf((lo - x - shift) / sd);
    for _ in 0..64 {
        let (tu, tl) = (upper(hi), lower(lo));
        if tu + tl < 1e-8 * total.abs() {
            return Ok(total);
        }
        if tu >= tl {
            total += piece(hi, hi + 4.0 * sd)?;
            hi += 4.0 * sd;
        } else {
            total += piece(lo - 4.0 * sd, lo)?;
            lo -= 4.0 * sd;
        }
    }
    Err(GsbmError::Numeric {
        message: "tail of the exponential moment did not vanish".into(),
        achieved: (upper(hi) + lower(lo)) / total.abs(),
    })
}

/// `∫ e^{σy} p(x → y; dt) dy` for the constant-shape closed-form kernel:
///
/// ```text
/// e^{σ²dt/2}·[e^{σx} + (2α−1)(e^{−σa}Q((a − σdt)/√dt) − e^{σa}Q((a + σdt)/√dt))],  a = |x|
/// ```
pub fn cond_exp_const_oracle(alpha: f64, sigma: f64, dt: f64, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return domain(format!("shape parameter must lie in [0, 1], got {alpha}"));
    }
    if !(dt > 0.0) || !sigma.is_finite() || !x.is_finite() {
        return domain("oracle needs dt > 0 and finite sigma, x");
    }
    let sd = dt.sqrt();
    let a = x.abs();
    let skew = 2.0 * alpha - 1.0;
    let gauss = (sigma * x).exp();
    let pos = (-sigma * a).exp() * norm_sf((a - sigma * dt) / sd);
    let neg = (sigma * a).exp() * norm_sf((a + sigma * dt) / sd);
    Ok((0.5 * sigma * sigma * dt).exp() * (gauss + skew * (pos - neg)))
}
