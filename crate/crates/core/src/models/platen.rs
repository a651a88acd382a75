//! Square-root volatility factor of the growth optimal portfolio in
//! market activity time, with a path-dependent activity intensity
//!
//! M = ξ (4λ² (√Y - λ e^{-λt} ∫ e^{λu} √Y du)² + η).

use super::{finite, reject, require_finite, require_nonnegative, require_positive, ClampStats, LampertiForm, Model, SqrtGuard, Violation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlatenParams {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub xi: f64,
    pub lambda: f64,
    pub eta: f64,
    pub y0: f64,
}

impl PlatenParams {
    /// Unit drift and volatility coefficients with y₀ = 0.1, ξ = 0.05,
    /// η = 0.000314: the setting of the zero-coupon-bond benchmark.
    pub fn reference(lambda: f64) -> Self {
        Self { alpha: 1.0, beta: 1.0, sigma: 1.0, xi: 0.05, lambda, eta: 0.000314, y0: 0.1 }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        require_nonnegative(&mut out, "alpha", self.alpha);
        require_positive(&mut out, "beta", self.beta);
        require_nonnegative(&mut out, "sigma", self.sigma);
        require_nonnegative(&mut out, "xi", self.xi);
        require_nonnegative(&mut out, "lambda", self.lambda);
        require_nonnegative(&mut out, "eta", self.eta);
        require_positive(&mut out, "y0", self.y0);
        require_finite(&mut out, "alpha", self.alpha);
        if out.is_empty() && self.alpha < 0.5 * self.sigma * self.sigma {
            out.push(Violation::error(
                "alpha",
                format!("Feller-like condition α ≥ σ²/2 violated ({} < {})", self.alpha, 0.5 * self.sigma * self.sigma),
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PlatenModel {
    params: PlatenParams,
    lamperti: PlatenLamperti,
    guard: SqrtGuard,
}

impl PlatenModel {
    pub fn new(params: PlatenParams) -> Result<Self> {
        reject(&params.validate())?;
        let lamperti = PlatenLamperti::new(params, params.y0);
        Ok(Self { params, lamperti, guard: SqrtGuard::default() })
    }

    pub fn params(&self) -> &PlatenParams {
        &self.params
    }

    /// c = λ e^{-λt} ỹ^h.
    pub fn memory(&self, t: f64, y_h: f64) -> f64 {
        let l = self.params.lambda;
        l * (-l * t).exp() * y_h
    }

    /// Activity intensity M(t, y, ỹ^h).
    pub fn intensity(&self, t: f64, y: f64, y_h: f64) -> f64 {
        let sq = self.guard.sqrt(y);
        self.params.xi * self.quad(sq, self.memory(t, y_h))
    }

    /// ∂M/∂y.
    pub fn intensity_dy(&self, t: f64, y: f64, y_h: f64) -> f64 {
        let sq = self.guard.sqrt(y);
        let l = self.params.lambda;
        4.0 * self.params.xi * l * l * (sq - self.memory(t, y_h)) / sq
    }

    fn quad(&self, sq: f64, c: f64) -> f64 {
        let l = self.params.lambda;
        4.0 * l * l * (sq - c) * (sq - c) + self.params.eta
    }

    pub fn lamperti(&self) -> &PlatenLamperti {
        &self.lamperti
    }
}

impl Model for PlatenModel {
    fn name(&self) -> &str {
        "platen"
    }

    fn initial_value(&self) -> f64 {
        self.params.y0
    }

    fn drift(&self, t: f64, y: f64, y_g1: f64, _y_g2: f64) -> Result<f64> {
        let p = &self.params;
        finite("b", (p.alpha - p.beta * y) * self.intensity(t, y, y_g1))
    }

    fn diffusion(&self, t: f64, y: f64, y_h1: f64, _y_h2: f64) -> Result<f64> {
        let p = &self.params;
        let sq = self.guard.sqrt(y);
        let q = self.quad(sq, self.memory(t, y_h1));
        finite("a", p.sigma * p.xi.sqrt() * sq * q.sqrt())
    }

    fn diffusion_dy(&self, t: f64, y: f64, y_h1: f64, _y_h2: f64) -> Result<f64> {
        let p = &self.params;
        if p.sigma == 0.0 || p.xi == 0.0 {
            return Ok(0.0);
        }
        let sq = self.guard.sqrt(y);
        let c = self.memory(t, y_h1);
        let q = self.quad(sq, c);
        if q <= 0.0 {
            return Ok(0.0);
        }
        let l = p.lambda;
        // d/dy [√y √Q] with dQ/dy = 4λ²(√y - c)/√y
        finite("∂a/∂y", p.sigma * p.xi.sqrt() * (q.sqrt() / (2.0 * sq) + 2.0 * l * l * (sq - c) / q.sqrt()))
    }

    fn diffusion_dh(&self, t: f64, y: f64, y_h1: f64, _y_h2: f64) -> Result<f64> {
        let p = &self.params;
        let sq = self.guard.sqrt(y);
        let c = self.memory(t, y_h1);
        let q = self.quad(sq, c);
        if q <= 0.0 || p.xi == 0.0 {
            return Ok(0.0);
        }
        let l = p.lambda;
        let dc = l * (-l * t).exp();
        finite("∂a/∂ỹh", -p.sigma * p.xi.sqrt() * sq * 4.0 * l * l * (sq - c) * dc / q.sqrt())
    }

    fn diffusion_dt(&self, t: f64, y: f64, y_h1: f64, _y_h2: f64) -> Result<f64> {
        let p = &self.params;
        let sq = self.guard.sqrt(y);
        let c = self.memory(t, y_h1);
        let q = self.quad(sq, c);
        if q <= 0.0 || p.xi == 0.0 {
            return Ok(0.0);
        }
        let l = p.lambda;
        finite("∂a/∂t", p.sigma * p.xi.sqrt() * sq * 4.0 * l * l * l * c * (sq - c) / q.sqrt())
    }

    fn g1(&self, t: f64, y: f64) -> Result<f64> {
        Ok(self.guard.sqrt(y) * (self.params.lambda * t).exp())
    }

    fn h1(&self, t: f64, y: f64) -> Result<f64> {
        Ok(self.guard.sqrt(y) * (self.params.lambda * t).exp())
    }

    fn is_elliptic(&self) -> bool {
        self.params.sigma > 0.0 && self.params.xi > 0.0 && self.params.eta > 0.0
    }

    fn lamperti_closed_form(&self) -> Option<&dyn LampertiForm> {
        self.is_elliptic().then_some(&self.lamperti as &dyn LampertiForm)
    }

    fn lower_bound(&self) -> f64 {
        0.0
    }

    fn clamp_stats(&self) -> ClampStats {
        self.guard.stats()
    }
}

/// S(t, y, ỹ^h) = k [asinh z(√y) - asinh z(√ε)] with k = 1/(λσ√ξ) and
/// z(u) = 2λ(u - c)/√η; the λ = 0 limit is 2(√y - √ε)/(σ√(ξη)).
#[derive(Debug, Clone, Copy)]
pub struct PlatenLamperti {
    params: PlatenParams,
    anchor: f64,
}

impl PlatenLamperti {
    pub fn new(params: PlatenParams, anchor: f64) -> Self {
        Self { params, anchor }
    }

    fn z(&self, t: f64, u: f64, y_h: f64) -> f64 {
        let l = self.params.lambda;
        2.0 * l * (u - l * (-l * t).exp() * y_h) / self.params.eta.sqrt()
    }

    fn k(&self) -> f64 {
        let p = &self.params;
        1.0 / (p.lambda * p.sigma * p.xi.sqrt())
    }

    fn flat(&self) -> bool {
        self.params.lambda == 0.0
    }

    fn check(&self, y: f64) -> Result<()> {
        if !(y > 0.0) {
            return Err(Error::domain("lamperti", format!("needs y > 0, got {y}")));
        }
        Ok(())
    }

    // (1/√(1+z_y²) - 1/√(1+z_ε²))
    fn slope_gap(&self, t: f64, y: f64, y_h: f64) -> f64 {
        let zy = self.z(t, y.sqrt(), y_h);
        let ze = self.z(t, self.anchor.sqrt(), y_h);
        1.0 / (1.0 + zy * zy).sqrt() - 1.0 / (1.0 + ze * ze).sqrt()
    }
}

impl LampertiForm for PlatenLamperti {
    fn transform(&self, t: f64, y: f64, y_h: f64) -> Result<f64> {
        self.check(y)?;
        let p = &self.params;
        if self.flat() {
            return Ok(2.0 * (y.sqrt() - self.anchor.sqrt()) / (p.sigma * (p.xi * p.eta).sqrt()));
        }
        let s = self.k() * (self.z(t, y.sqrt(), y_h).asinh() - self.z(t, self.anchor.sqrt(), y_h).asinh());
        finite("lamperti", s)
    }

    fn inverse(&self, t: f64, x: f64, y_h: f64) -> Result<f64> {
        let p = &self.params;
        let root = if self.flat() {
            self.anchor.sqrt() + 0.5 * x * p.sigma * (p.xi * p.eta).sqrt()
        } else {
            let l = p.lambda;
            let w = x / self.k() + self.z(t, self.anchor.sqrt(), y_h).asinh();
            l * (-l * t).exp() * y_h + p.eta.sqrt() * w.sinh() / (2.0 * l)
        };
        if !(root > 0.0) || !root.is_finite() {
            return Err(Error::domain("lamperti inverse", format!("x = {x} has no preimage (√y = {root})")));
        }
        Ok(root * root)
    }

    fn d_dh(&self, t: f64, y: f64, y_h: f64) -> Result<f64> {
        self.check(y)?;
        if self.flat() {
            return Ok(0.0);
        }
        let l = self.params.lambda;
        let dz = -2.0 * l * l * (-l * t).exp() / self.params.eta.sqrt();
        finite("∂S/∂ỹh", self.k() * dz * self.slope_gap(t, y, y_h))
    }

    fn d_dt(&self, t: f64, y: f64, y_h: f64) -> Result<f64> {
        self.check(y)?;
        if self.flat() {
            return Ok(0.0);
        }
        let l = self.params.lambda;
        let c = l * (-l * t).exp() * y_h;
        let dz = 2.0 * l * l * c / self.params.eta.sqrt();
        finite("∂S/∂t", self.k() * dz * self.slope_gap(t, y, y_h))
    }
}
