//! Time-inhomogeneous geometric skew Brownian motion.
//!
//! * [`timefunc`]: step functions and cubic polynomials for the functional
//!   parameters μ(t), σ(t), α(t).
//! * [`sbm`]: transition densities, exact sampling and path simulation of
//!   the skew Brownian motion driver.
//! * [`gsbm`]: the geometric process and its conditional-mean forecaster.
//! * [`calibrate`]: rolling-window skew-normal likelihood fits.
//! * [`pipeline`]: moving-variance series, the rolling forecast loop and
//!   error reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod error;
pub mod gsbm;
pub mod normal;
pub mod pipeline;
pub mod quad;
pub mod rng;
pub mod sbm;
pub mod timefunc;

pub use error::{GsbmError, Result};
