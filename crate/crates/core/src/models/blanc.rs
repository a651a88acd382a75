//! Squared volatility Y = σ² = β0 + β1 (R1 - α)² + β2 R2 where the trend R1
//! is a Brownian integral, so the diffusion coefficient itself carries
//! memory of W.

use super::{finite, reject, require_finite, require_nonnegative, require_positive, ClampStats, Model, SqrtGuard, Violation};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlancParams {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub r10: f64,
    pub r20: f64,
}

impl BlancParams {
    pub fn y0(&self) -> f64 {
        self.beta0 + self.beta1 * (self.r10 - self.alpha).powi(2) + self.beta2 * self.r20
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        require_nonnegative(&mut out, "beta0", self.beta0);
        require_nonnegative(&mut out, "beta1", self.beta1);
        require_nonnegative(&mut out, "beta2", self.beta2);
        require_nonnegative(&mut out, "alpha", self.alpha);
        require_positive(&mut out, "lambda1", self.lambda1);
        require_positive(&mut out, "lambda2", self.lambda2);
        require_finite(&mut out, "r10", self.r10);
        require_nonnegative(&mut out, "r20", self.r20);
        if out.is_empty() && self.beta0 + self.beta2 * self.r20 <= 0.0 {
            out.push(Violation::error("beta0", "β0 + β2 R20 must be positive"));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BlancModel {
    params: BlancParams,
    guard: SqrtGuard,
}

impl BlancModel {
    pub fn new(params: BlancParams) -> Result<Self> {
        reject(&params.validate())?;
        Ok(Self { params, guard: SqrtGuard::default() })
    }

    pub fn params(&self) -> &BlancParams {
        &self.params
    }

    /// R1 from a Brownian-integral term (ỹ^{g2} or ỹ^{h2}).
    pub fn r1(&self, t: f64, integral: f64) -> f64 {
        let p = &self.params;
        (-p.lambda1 * t).exp() * (p.r10 + p.lambda1 * integral)
    }

    pub fn r2(&self, t: f64, y_g1: f64) -> f64 {
        let p = &self.params;
        (-p.lambda2 * t).exp() * (p.r20 + p.lambda2 * y_g1)
    }
}

impl Model for BlancModel {
    fn name(&self) -> &str {
        "blanc"
    }

    fn initial_value(&self) -> f64 {
        self.params.y0()
    }

    fn drift(&self, t: f64, y: f64, y_g1: f64, y_g2: f64) -> Result<f64> {
        let p = &self.params;
        let r1 = self.r1(t, y_g2);
        let b = (p.beta1 * p.lambda1 * p.lambda1 + p.beta2 * p.lambda2) * y
            - p.beta2 * p.lambda2 * self.r2(t, y_g1)
            - 2.0 * p.beta1 * p.lambda1 * r1 * (r1 - p.alpha);
        finite("b", b)
    }

    fn diffusion(&self, t: f64, y: f64, _y_h1: f64, y_h2: f64) -> Result<f64> {
        let p = &self.params;
        finite("a", 2.0 * p.beta1 * p.lambda1 * (self.r1(t, y_h2) - p.alpha) * self.guard.sqrt(y))
    }

    fn diffusion_dy(&self, t: f64, y: f64, _y_h1: f64, y_h2: f64) -> Result<f64> {
        let p = &self.params;
        finite("∂a/∂y", p.beta1 * p.lambda1 * (self.r1(t, y_h2) - p.alpha) / self.guard.sqrt(y))
    }

    fn g1(&self, t: f64, y: f64) -> Result<f64> {
        Ok((self.params.lambda2 * t).exp() * y)
    }

    fn g2(&self, t: f64, y: f64) -> Result<f64> {
        Ok((self.params.lambda1 * t).exp() * self.guard.sqrt(y))
    }

    fn g2_dy(&self, t: f64, y: f64) -> Result<f64> {
        Ok(0.5 * (self.params.lambda1 * t).exp() / self.guard.sqrt(y))
    }

    fn h2(&self, t: f64, y: f64) -> Result<f64> {
        self.g2(t, y)
    }

    fn is_elliptic(&self) -> bool {
        false
    }

    fn diffusion_has_brownian_memory(&self) -> bool {
        self.params.beta1 != 0.0
    }

    fn lower_bound(&self) -> f64 {
        0.0
    }

    fn clamp_stats(&self) -> ClampStats {
        self.guard.stats()
    }
}
