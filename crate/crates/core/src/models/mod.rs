//! Coefficient sets of path-dependent volatility models
//!
//! dY = b(t, Y, Ỹ^{g1}, Ỹ^{g2}) dt + a(t, Y, Ỹ^{h1}, Ỹ^{h2}) dW
//!
//! with Ỹ^{g1} = ∫g1(u, Y) du, Ỹ^{g2} = ∫g2(u, Y) dW, Ỹ^{h1} = ∫h1(u, Y) du
//! and Ỹ^{h2} = ∫h2(u, Y) dW.

mod blanc;
mod custom;
mod guyon;
mod platen;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

pub use blanc::{BlancModel, BlancParams};
pub use custom::FnModel;
pub use guyon::{GuyonModel, GuyonParams};
pub use platen::{PlatenLamperti, PlatenModel, PlatenParams};

use crate::error::{Error, Result};

/// Values below this are raised to it before a square root is taken.
pub const SQRT_FLOOR: f64 = 1e-12;

fn step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Closed-form extended Lamperti transform S(t, y, ỹ^h) = ∫_ε^y dξ / a(t, ξ, ỹ^h).
pub trait LampertiForm: Send + Sync {
    fn transform(&self, t: f64, y: f64, y_h: f64) -> Result<f64>;
    fn inverse(&self, t: f64, x: f64, y_h: f64) -> Result<f64>;
    /// ∂S/∂ỹ^h
    fn d_dh(&self, t: f64, y: f64, y_h: f64) -> Result<f64>;
    /// ∂S/∂t
    fn d_dt(&self, t: f64, y: f64, y_h: f64) -> Result<f64>;
}

pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    fn initial_value(&self) -> f64;

    /// b(t, y, ỹ^{g1}, ỹ^{g2})
    fn drift(&self, t: f64, y: f64, y_g1: f64, y_g2: f64) -> Result<f64>;

    /// a(t, y, ỹ^{h1}, ỹ^{h2})
    fn diffusion(&self, t: f64, y: f64, y_h1: f64, y_h2: f64) -> Result<f64>;

    fn diffusion_dy(&self, t: f64, y: f64, y_h1: f64, y_h2: f64) -> Result<f64> {
        let h = step(y);
        Ok((self.diffusion(t, y + h, y_h1, y_h2)? - self.diffusion(t, y - h, y_h1, y_h2)?) / (2.0 * h))
    }

    /// ∂a/∂ỹ^{h1}
    fn diffusion_dh(&self, t: f64, y: f64, y_h1: f64, y_h2: f64) -> Result<f64> {
        let h = step(y_h1);
        Ok((self.diffusion(t, y, y_h1 + h, y_h2)? - self.diffusion(t, y, y_h1 - h, y_h2)?) / (2.0 * h))
    }

    fn diffusion_dt(&self, t: f64, y: f64, y_h1: f64, y_h2: f64) -> Result<f64> {
        let h = step(t);
        Ok((self.diffusion(t + h, y, y_h1, y_h2)? - self.diffusion(t - h, y, y_h1, y_h2)?) / (2.0 * h))
    }

    fn g1(&self, _t: f64, _y: f64) -> Result<f64> {
        Ok(0.0)
    }

    fn g2(&self, _t: f64, _y: f64) -> Result<f64> {
        Ok(0.0)
    }

    fn g2_dy(&self, t: f64, y: f64) -> Result<f64> {
        let h = step(y);
        Ok((self.g2(t, y + h)? - self.g2(t, y - h)?) / (2.0 * h))
    }

    fn h1(&self, _t: f64, _y: f64) -> Result<f64> {
        Ok(0.0)
    }

    fn h2(&self, _t: f64, _y: f64) -> Result<f64> {
        Ok(0.0)
    }

    /// Whether a stays strictly positive on the state space.
    fn is_elliptic(&self) -> bool;

    /// Whether a depends on the Brownian-integral term ỹ^{h2}.
    fn diffusion_has_brownian_memory(&self) -> bool {
        false
    }

    fn lamperti_closed_form(&self) -> Option<&dyn LampertiForm> {
        None
    }

    /// Lower limit ε of the Lamperti integral.
    fn lamperti_anchor(&self) -> f64 {
        self.initial_value()
    }

    /// Infimum of the state space (used to bracket inverse transforms).
    fn lower_bound(&self) -> f64 {
        f64::NEG_INFINITY
    }

    /// Square-root clamp statistics accumulated so far.
    fn clamp_stats(&self) -> ClampStats {
        ClampStats::default()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClampStats {
    pub evaluations: u64,
    pub clamps: u64,
}

impl ClampStats {
    pub fn ratio(&self) -> f64 {
        if self.evaluations == 0 {
            0.0
        } else {
            self.clamps as f64 / self.evaluations as f64
        }
    }
}

/// Counts square roots taken by a model and how many hit the floor.
#[derive(Debug, Default)]
pub struct SqrtGuard {
    evaluations: AtomicU64,
    clamps: AtomicU64,
}

impl Clone for SqrtGuard {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl SqrtGuard {
    /// Value raised to [`SQRT_FLOOR`] if below it; NaN passes through.
    pub fn floor(&self, v: f64) -> f64 {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        if v < SQRT_FLOOR {
            self.clamps.fetch_add(1, Ordering::Relaxed);
            SQRT_FLOOR
        } else {
            v
        }
    }

    pub fn sqrt(&self, v: f64) -> f64 {
        self.floor(v).sqrt()
    }

    pub fn stats(&self) -> ClampStats {
        ClampStats {
            evaluations: self.evaluations.load(Ordering::Relaxed),
            clamps: self.clamps.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
        self.clamps.store(0, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub severity: Severity,
    pub field: &'static str,
    pub message: String,
}

impl Violation {
    pub(crate) fn error(field: &'static str, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, field, message: message.into() }
    }

    pub(crate) fn warning(field: &'static str, message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, field, message: message.into() }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{kind}: {}: {}", self.field, self.message)
    }
}

pub(crate) fn require_finite(out: &mut Vec<Violation>, field: &'static str, v: f64) -> bool {
    if v.is_finite() {
        true
    } else {
        out.push(Violation::error(field, format!("must be finite, got {v}")));
        false
    }
}

pub(crate) fn require_nonnegative(out: &mut Vec<Violation>, field: &'static str, v: f64) {
    if require_finite(out, field, v) && v < 0.0 {
        out.push(Violation::error(field, format!("must be nonnegative, got {v}")));
    }
}

pub(crate) fn require_positive(out: &mut Vec<Violation>, field: &'static str, v: f64) {
    if require_finite(out, field, v) && v <= 0.0 {
        out.push(Violation::error(field, format!("must be positive, got {v}")));
    }
}

/// Error if any violation is hard.
pub(crate) fn reject(violations: &[Violation]) -> Result<()> {
    let hard: Vec<String> = violations.iter().filter(|v| v.is_error()).map(|v| format!("{}: {}", v.field, v.message)).collect();
    if hard.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(hard.join("; ")))
    }
}

pub(crate) fn finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term, value: v })
    }
}
