//! Time-inhomogeneous skew Brownian motion `X^α`.
//!
//! With a constant shape parameter the one-step law from `x0` over `dt` has
//! the closed form
//!
//! ```text
//! p(y) = φ_dt(y − x0) + sgn(y)·(2α − 1)·φ_dt(|x0| + |y|)
//! F(y) = Φ((y − x0)/√dt) − (2α − 1)·Q((|x0| + |y|)/√dt)
//! ```
//!
//! which drives exact per-interval simulation. For a general step function
//! `α(·)` the transition density is the sum of a local-time integral over
//! the first arrival at zero and an image term; [`density_inhom`] evaluates
//! it by tanh-sinh quadrature.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, GsbmError, Result};
use crate::normal::{gauss_pdf, norm_cdf, norm_sf};
use crate::quad::TanhSinh;
use crate::rng::{StepRng, StreamKey};
use crate::timefunc::{PiecewiseConstantFn, TimeGrid};

/// Durations below this are treated as degenerate.
pub const MIN_DT: f64 = 1e-12;

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        domain(format!("shape parameter must lie in [0, 1], got {alpha}"))
    }
}

/// One-step transition law of skew BM with constant shape parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewStepKernel {
    alpha: f64,
    dt: f64,
    x0: f64,
}

impl SkewStepKernel {
    pub fn new(alpha: f64, dt: f64, x0: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return domain(format!("step duration must be positive, got {dt}"));
        }
        if !x0.is_finite() {
            return domain(format!("start state must be finite, got {x0}"));
        }
        Ok(Self { alpha, dt, x0 })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// Transition density at `y`.
    pub fn density(&self, y: f64) -> f64 {
        let skew = 2.0 * self.alpha - 1.0;
        let p = gauss_pdf(y - self.x0, self.dt) + sgn(y) * skew * gauss_pdf(self.x0.abs() + y.abs(), self.dt);
        // α ∈ {0, 1} cancels exactly in theory; clip rounding residue.
        p.max(0.0)
    }

    /// Transition CDF at `y`.
    pub fn cdf(&self, y: f64) -> f64 {
        let sd = self.dt.sqrt();
        let skew = 2.0 * self.alpha - 1.0;
        let f = norm_cdf((y - self.x0) / sd) - skew * norm_sf((self.x0.abs() + y.abs()) / sd);
        f.clamp(0.0, 1.0)
    }

    /// Exact draw by inverse transform.
    pub fn sample(&self, rng: &mut StepRng) -> Result<f64> {
        self.quantile(rng.open01())
    }

    /// Solve `cdf(y) = u`. The sign of the root is decided from `cdf(0)`
    /// first, so the search never straddles the kink at zero.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("quantile level must lie in (0, 1), got {u}"));
        }
        let sd = self.dt.sqrt();
        let tol = 1e-12 * sd;
        let reach = 10.0 * sd;
        let f0 = self.cdf(0.0);

        let (mut lo, mut hi) = if u <= f0 {
            (self.x0.min(0.0) - reach, 0.0)
        } else {
            (0.0, self.x0.max(0.0) + reach)
        };
        let mut expand = 0;
        while self.cdf(lo) > u {
            lo -= reach;
            expand += 1;
            if expand > 20 {
                return Err(self.bracket_failure(u));
            }
        }
        while self.cdf(hi) < u {
            hi += reach;
            expand += 1;
            if expand > 20 {
                return Err(self.bracket_failure(u));
            }
        }

        let mut flo = self.cdf(lo) - u;
        let mut fhi = self.cdf(hi) - u;
        if flo == 0.0 {
            return Ok(lo);
        }
        if fhi == 0.0 {
            return Ok(hi);
        }

        // Bisection until the bracket is narrow, then Illinois false position
        // with every fourth step a bisection so the bracket keeps shrinking.
        let mut side = 0i8;
        let mut last = f64::NAN;
        for iter in 0..400 {
            let width = hi - lo;
            if width <= tol {
                break;
            }
            let use_secant = width <= 1e-3 * sd && iter % 4 != 3;
            let mut y = if use_secant {
                hi - fhi * (hi - lo) / (fhi - flo)
            } else {
                0.5 * (lo + hi)
            };
            if !(y > lo && y < hi) {
                y = 0.5 * (lo + hi);
                if !(y > lo && y < hi) {
                    break;
                }
            }
            let fy = self.cdf(y) - u;
            if fy == 0.0 || (y - last).abs() <= tol {
                return Ok(self.keep_side(y, u <= f0));
            }
            last = y;
            if fy < 0.0 {
                lo = y;
                flo = fy;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            } else {
                hi = y;
                fhi = fy;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            }
        }
        Ok(self.keep_side(0.5 * (lo + hi), u <= f0))
    }

    fn keep_side(&self, y: f64, negative: bool) -> f64 {
        if negative {
            y.min(0.0)
        } else {
            y.max(0.0)
        }
    }

    fn bracket_failure(&self, u: f64) -> GsbmError {
        GsbmError::Numeric {
            message: format!("could not bracket quantile {u} of {self:?}"),
            achieved: f64::INFINITY,
        }
    }
}

/// `density_const`: closed-form transition density.
pub fn density_const(k: &SkewStepKernel, y: f64) -> f64 {
    k.density(y)
}

/// `step_cdf_const`: closed-form transition CDF.
pub fn step_cdf_const(k: &SkewStepKernel, y: f64) -> f64 {
    k.cdf(y)
}

/// `sample_step`: exact inverse-transform draw.
pub fn sample_step(k: &SkewStepKernel, rng: &mut StepRng) -> Result<f64> {
    k.sample(rng)
}

/// Arguments of the transition density `p_α(t, y | s, x)`.
#[derive(Debug, Clone)]
pub struct DensityQuery<'a> {
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub alpha: &'a PiecewiseConstantFn,
}

impl<'a> DensityQuery<'a> {
    pub fn new(s: f64, t: f64, x: f64, y: f64, alpha: &'a PiecewiseConstantFn) -> Result<Self> {
        if !(s < t) {
            return domain(format!("density query needs s < t, got s={s}, t={t}"));
        }
        if !(x.is_finite() && y.is_finite()) {
            return domain("density query states must be finite");
        }
        let g = alpha.grid();
        if s < g.start() || t > g.end() {
            return domain(format!(
                "shape function span [{}, {}] does not cover [{s}, {t}]",
                g.start(),
                g.end()
            ));
        }
        for &a in alpha.values() {
            check_alpha(a)?;
        }
        Ok(Self { s, t, x, y, alpha })
    }
}

/// Precomputed pieces of the local-time integral for one `(s, t, α)`.
#[derive(Debug, Clone)]
pub struct InhomKernel {
    s: f64,
    horizon: f64,
    /// Breakpoints in `u ∈ [0, horizon]` with the shape value on each piece.
    pieces: Vec<(f64, f64, f64)>,
    quad: TanhSinh,
}

impl InhomKernel {
    pub fn new(s: f64, t: f64, alpha: &PiecewiseConstantFn) -> Result<Self> {
        let q = DensityQuery::new(s, t, 0.0, 0.0, alpha)?;
        let horizon = q.t - q.s;
        if horizon <= MIN_DT {
            return Err(GsbmError::Numeric {
                message: format!("degenerate transition horizon {horizon:e}"),
                achieved: f64::INFINITY,
            });
        }
        let mut cuts = vec![0.0];
        cuts.extend(
            alpha
                .breakpoints()
                .iter()
                .filter(|&&b| b > s && b < t)
                .map(|&b| b - s),
        );
        cuts.push(horizon);
        let mut pieces = Vec::with_capacity(cuts.len() - 1);
        for w in cuts.windows(2) {
            let a = alpha.eval(s + 0.5 * (w[0] + w[1]))?;
            pieces.push((w[0], w[1], a));
        }
        Ok(Self {
            s,
            horizon,
            pieces,
            quad: TanhSinh::with_abs_tol(1e-9),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn start(&self) -> f64 {
        self.s
    }

    /// Shape value just before the end of the horizon.
    fn alpha_last(&self) -> f64 {
        self.pieces.last().unwrap().2
    }

    /// `p_α(t, y | s, x)`.
    pub fn density(&self, x: f64, y: f64) -> Result<f64> {
        let horizon = self.horizon;
        let image = if x * y > 0.0 {
            gauss_pdf(y - x, horizon) - gauss_pdf(y + x, horizon)
        } else {
            0.0
        };

        if y == 0.0 {
            // Continuous completion: the mean of the one-sided limits
            // 2α·φ(x) and 2(1 − α)·φ(x).
            return Ok(gauss_pdf(x, horizon));
        }
        if y.abs() < 1e-10 * horizon.sqrt() {
            // The arrival-time kernel has collapsed onto u = horizon.
            let w = weight(self.alpha_last(), y);
            return Ok((w * gauss_pdf(x.abs() + y.abs(), horizon) + image).max(0.0));
        }

        let y2 = y * y;
        let ln_y = y.abs().ln() - (2.0 * PI).ln();
        let x2 = x * x;
        let mut total = 0.0;
        for &(u0, u1, a) in &self.pieces {
            let w = weight(a, y);
            if w == 0.0 {
                continue;
            }
            // Sub-split where the integrand changes scale: near u = horizon
            // at distance ~y², near u = 0 at distance ~x².
            let mut cuts = vec![u0, u1];
            for c in [horizon - y2, x2] {
                if c > u0 + 1e-9 * (u1 - u0) && c < u1 - 1e-9 * (u1 - u0) {
                    cuts.push(c);
                }
            }
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for seg in cuts.windows(2) {
                let (lo, hi) = (seg[0], seg[1]);
                let q = self.quad.integrate(lo, hi, |n| {
                    // Distances computed from the nearest exact endpoint.
                    let u = if lo == 0.0 { n.from_a } else { lo + n.from_a };
                    let d = if hi == horizon { n.to_b } else { (horizon - hi) + n.to_b };
                    if u <= 0.0 || d <= 0.0 {
                        return 0.0;
                    }
                    (ln_y - 1.5 * d.ln() - 0.5 * u.ln() - y2 / (2.0 * d) - x2 / (2.0 * u)).exp()
                })?;
                total += w * q.value;
            }
        }
        Ok((total + image).max(0.0))
    }
}

fn weight(alpha: f64, y: f64) -> f64 {
    1.0 + (2.0 * alpha - 1.0) * sgn(y)
}

/// `density_inhom`: transition density for a step-function shape parameter.
pub fn density_inhom(q: &DensityQuery<'_>) -> Result<f64> {
    InhomKernel::new(q.s, q.t, q.alpha)?.density(q.x, q.y)
}

/// A simulated skew-BM trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmPath {
    pub grid: TimeGrid,
    pub states: Vec<f64>,
    pub seed: u64,
    pub path_index: u64,
}

impl SbmPath {
    pub fn terminal(&self) -> f64 {
        *self.states.last().unwrap()
    }

    /// CSV `t,x` preceded by a comment recording seed and shape breakpoints.
    pub fn write_csv<W: Write>(&self, mut w: W, alpha: &PiecewiseConstantFn) -> Result<()> {
        writeln!(
            w,
            "# seed={} path={} alpha={}",
            self.seed,
            self.path_index,
            breakpoint_spec(alpha)
        )?;
        writeln!(w, "t,x")?;
        for (t, x) in self.grid.points().iter().zip(&self.states) {
            writeln!(w, "{t},{x}")?;
        }
        Ok(())
    }
}

/// `t0:v0,t1:v1,…` rendering of a step function.
pub fn breakpoint_spec(f: &PiecewiseConstantFn) -> String {
    f.grid()
        .points()
        .iter()
        .zip(f.values())
        .map(|(t, v)| format!("{t}:{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Exact simulation on `grid`, one inverse-transform step per interval.
pub fn simulate_path(
    alpha: &PiecewiseConstantFn,
    grid: &TimeGrid,
    x0: f64,
    key: StreamKey,
    path_index: u64,
) -> Result<SbmPath> {
    check_alignment(alpha, grid)?;
    if !x0.is_finite() {
        return domain(format!("start state must be finite, got {x0}"));
    }
    let pts = grid.points();
    let mut states = Vec::with_capacity(pts.len());
    states.push(x0);
    let mut x = x0;
    for (i, w) in pts.windows(2).enumerate() {
        let a = alpha.eval(0.5 * (w[0] + w[1]))?;
        let k = SkewStepKernel::new(a, w[1] - w[0], x)?;
        x = k.sample(&mut key.at(path_index, i as u64))?;
        states.push(x);
    }
    Ok(SbmPath {
        grid: grid.clone(),
        states,
        seed: key.seed,
        path_index,
    })
}

/// Paths `0..n_paths`, simulated in parallel.
pub fn simulate_paths(
    alpha: &PiecewiseConstantFn,
    grid: &TimeGrid,
    x0: f64,
    key: StreamKey,
    n_paths: u64,
) -> Result<Vec<SbmPath>> {
    check_alignment(alpha, grid)?;
    (0..n_paths)
        .into_par_iter()
        .map(|i| simulate_path(alpha, grid, x0, key, i))
        .collect()
}

fn check_alignment(alpha: &PiecewiseConstantFn, grid: &TimeGrid) -> Result<()> {
    for &a in alpha.values() {
        check_alpha(a)?;
    }
    let ag = alpha.grid();
    if grid.start() < ag.start() || grid.end() > ag.end() {
        return domain(format!(
            "simulation grid [{}, {}] leaves the shape function span [{}, {}]",
            grid.start(),
            grid.end(),
            ag.start(),
            ag.end()
        ));
    }
    if !grid.refines(ag) {
        return domain("simulation grid must contain every shape-function breakpoint");
    }
    Ok(())
}

/// Azzalini construction `2√(α(1−α))·W¹_t + (2α−1)·|W²_t|`; skew-normal
/// with scale √t and shape `(2α−1)/(2√(α(1−α)))`.
pub fn azzalini_marginal_sample(alpha: f64, t: f64, rng: &mut StepRng) -> Result<f64> {
    check_alpha(alpha)?;
    if !(t > 0.0) {
        return domain(format!("time must be positive, got {t}"));
    }
    let (z1, z2) = rng.normal_pair();
    let sd = t.sqrt();
    let skew = 2.0 * alpha - 1.0;
    if alpha == 0.0 || alpha == 1.0 {
        return Ok(skew * (sd * z2).abs());
    }
    Ok(2.0 * (alpha * (1.0 - alpha)).sqrt() * sd * z1 + skew * (sd * z2).abs())
}

/// Occupation-time estimate of the symmetric local time at zero,
/// `(1/2ε)·Σ 1{|X_{t_i}| ≤ ε}·Δt_i`. Biased on coarse grids.
pub fn local_time_estimate(path: &SbmPath, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return domain(format!("band half-width must be positive, got {eps}"));
    }
    if path.grid.n_intervals() < 100 {
        return domain(format!(
            "local-time estimate needs at least 100 steps, got {}",
            path.grid.n_intervals()
        ));
    }
    let occ: f64 = path
        .grid
        .points()
        .windows(2)
        .zip(&path.states)
        .filter(|(_, x)| x.abs() <= eps)
        .map(|(w, _)| w[1] - w[0])
        .sum();
    Ok(occ / (2.0 * eps))
}
