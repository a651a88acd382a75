//! Path-dependent volatility σ = β0 + β1 R1 + β2 √R2 with exponentially
//! weighted trend R1 and squared-volatility memory R2.

use super::{finite, reject, require_finite, require_nonnegative, require_positive, LampertiForm, Model, SqrtGuard, Violation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuyonParams {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub r10: f64,
    pub r20: f64,
}

impl GuyonParams {
    pub fn sigma0(&self) -> f64 {
        self.beta0 + self.beta1 * self.r10 + self.beta2 * self.r20.sqrt()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        require_nonnegative(&mut out, "beta0", self.beta0);
        require_nonnegative(&mut out, "beta1", self.beta1);
        require_nonnegative(&mut out, "beta2", self.beta2);
        require_positive(&mut out, "lambda1", self.lambda1);
        require_positive(&mut out, "lambda2", self.lambda2);
        require_finite(&mut out, "r10", self.r10);
        require_positive(&mut out, "r20", self.r20);
        if out.is_empty() {
            if self.sigma0() <= 0.0 {
                out.push(Violation::error("sigma0", format!("β0 + β1 R10 + β2 √R20 = {} must be positive", self.sigma0())));
            }
            if self.lambda2 >= 2.0 * self.lambda1 {
                out.push(Violation::warning("lambda2", "positivity condition λ₂<2λ₁ violated"));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GuyonModel {
    params: GuyonParams,
    lamperti: GuyonLamperti,
    guard: SqrtGuard,
}

impl GuyonModel {
    pub fn new(params: GuyonParams) -> Result<Self> {
        reject(&params.validate())?;
        let lamperti = GuyonLamperti { slope: params.beta1 * params.lambda1, anchor: params.sigma0() };
        Ok(Self { params, lamperti, guard: SqrtGuard::default() })
    }

    pub fn params(&self) -> &GuyonParams {
        &self.params
    }

    /// R1 rebuilt from the Brownian-integral term ỹ^{g2}.
    pub fn r1(&self, t: f64, y_g2: f64) -> f64 {
        let p = &self.params;
        (-p.lambda1 * t).exp() * (p.r10 + p.lambda1 * y_g2)
    }

    /// R2 rebuilt from the time-integral term ỹ^{g1}.
    pub fn r2(&self, t: f64, y_g1: f64) -> f64 {
        let p = &self.params;
        (-p.lambda2 * t).exp() * (p.r20 + p.lambda2 * y_g1)
    }
}

impl Model for GuyonModel {
    fn name(&self) -> &str {
        "guyon"
    }

    fn initial_value(&self) -> f64 {
        self.params.sigma0()
    }

    fn drift(&self, t: f64, y: f64, y_g1: f64, y_g2: f64) -> Result<f64> {
        let p = &self.params;
        let r2 = self.guard.floor(self.r2(t, y_g1));
        let b = -p.beta1 * p.lambda1 * self.r1(t, y_g2) + 0.5 * p.beta2 * p.lambda2 * (y * y - r2) / r2.sqrt();
        finite("b", b)
    }

    fn diffusion(&self, _t: f64, y: f64, _y_h1: f64, _y_h2: f64) -> Result<f64> {
        Ok(self.params.beta1 * self.params.lambda1 * y)
    }

    fn diffusion_dy(&self, _t: f64, _y: f64, _y_h1: f64, _y_h2: f64) -> Result<f64> {
        Ok(self.params.beta1 * self.params.lambda1)
    }

    fn diffusion_dh(&self, _t: f64, _y: f64, _y_h1: f64, _y_h2: f64) -> Result<f64> {
        Ok(0.0)
    }

    fn diffusion_dt(&self, _t: f64, _y: f64, _y_h1: f64, _y_h2: f64) -> Result<f64> {
        Ok(0.0)
    }

    /// e^{λ2 t} y², integrated in time into R2.
    fn g1(&self, t: f64, y: f64) -> Result<f64> {
        Ok((self.params.lambda2 * t).exp() * y * y)
    }

    /// e^{λ1 t} y, integrated against W into R1.
    fn g2(&self, t: f64, y: f64) -> Result<f64> {
        Ok((self.params.lambda1 * t).exp() * y)
    }

    fn g2_dy(&self, t: f64, _y: f64) -> Result<f64> {
        Ok((self.params.lambda1 * t).exp())
    }

    fn is_elliptic(&self) -> bool {
        self.lamperti.slope > 0.0
    }

    fn lamperti_closed_form(&self) -> Option<&dyn LampertiForm> {
        self.is_elliptic().then_some(&self.lamperti as &dyn LampertiForm)
    }

    fn lower_bound(&self) -> f64 {
        0.0
    }

    fn clamp_stats(&self) -> super::ClampStats {
        self.guard.stats()
    }
}

/// S(y) = ln(y/ε) / (β1 λ1).
#[derive(Debug, Clone, Copy)]
struct GuyonLamperti {
    slope: f64,
    anchor: f64,
}

impl LampertiForm for GuyonLamperti {
    fn transform(&self, _t: f64, y: f64, _y_h: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::domain("lamperti", format!("log transform needs y > 0, got {y}")));
        }
        Ok((y / self.anchor).ln() / self.slope)
    }

    fn inverse(&self, _t: f64, x: f64, _y_h: f64) -> Result<f64> {
        finite("lamperti inverse", self.anchor * (self.slope * x).exp())
    }

    fn d_dh(&self, _t: f64, _y: f64, _y_h: f64) -> Result<f64> {
        Ok(0.0)
    }

    fn d_dt(&self, _t: f64, _y: f64, _y_h: f64) -> Result<f64> {
        Ok(0.0)
    }
}
