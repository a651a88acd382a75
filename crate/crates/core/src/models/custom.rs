use std::fmt;
use std::sync::Arc;

use super::{finite, Model};
use crate::error::Result;

type Coef4 = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
type Coef2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

fn zero4() -> Coef4 {
    Arc::new(|_, _, _, _| 0.0)
}

fn zero2() -> Coef2 {
    Arc::new(|_, _| 0.0)
}

/// Model assembled from closures; unset coefficients are zero and unset
/// derivatives fall back to central differences.
#[derive(Clone)]
pub struct FnModel {
    name: String,
    y0: f64,
    drift: Coef4,
    diffusion: Coef4,
    diffusion_dy: Option<Coef4>,
    g1: Coef2,
    g2: Coef2,
    g2_dy: Option<Coef2>,
    h1: Coef2,
    h2: Coef2,
    elliptic: bool,
    lower_bound: f64,
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel").field("name", &self.name).field("y0", &self.y0).finish_non_exhaustive()
    }
}

impl FnModel {
    pub fn new(name: impl Into<String>, y0: f64) -> Self {
        Self {
            name: name.into(),
            y0,
            drift: zero4(),
            diffusion: zero4(),
            diffusion_dy: None,
            g1: zero2(),
            g2: zero2(),
            g2_dy: None,
            h1: zero2(),
            h2: zero2(),
            elliptic: false,
            lower_bound: f64::NEG_INFINITY,
        }
    }

    /// dY = σ dW.
    pub fn brownian(y0: f64, sigma: f64) -> Self {
        Self::new("brownian", y0)
            .with_diffusion(move |_, _, _, _| sigma)
            .with_diffusion_dy(|_, _, _, _| 0.0)
            .with_elliptic(sigma != 0.0)
    }

    /// dY = σ Y dW.
    pub fn geometric(y0: f64, sigma: f64) -> Self {
        Self::new("geometric", y0)
            .with_diffusion(move |_, y, _, _| sigma * y)
            .with_diffusion_dy(move |_, _, _, _| sigma)
            .with_elliptic(sigma != 0.0)
            .with_lower_bound(0.0)
    }

    pub fn with_drift(mut self, f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_diffusion(mut self, f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn with_diffusion_dy(mut self, f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion_dy = Some(Arc::new(f));
        self
    }

    pub fn with_g1(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.g1 = Arc::new(f);
        self
    }

    pub fn with_g2(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.g2 = Arc::new(f);
        self
    }

    pub fn with_g2_dy(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.g2_dy = Some(Arc::new(f));
        self
    }

    pub fn with_h1(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.h1 = Arc::new(f);
        self
    }

    pub fn with_h2(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.h2 = Arc::new(f);
        self
    }

    pub fn with_elliptic(mut self, elliptic: bool) -> Self {
        self.elliptic = elliptic;
        self
    }

    pub fn with_lower_bound(mut self, bound: f64) -> Self {
        self.lower_bound = bound;
        self
    }
}

impl Model for FnModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn initial_value(&self) -> f64 {
        self.y0
    }

    fn drift(&self, t: f64, y: f64, y_g1: f64, y_g2: f64) -> Result<f64> {
        finite("b", (self.drift)(t, y, y_g1, y_g2))
    }

    fn diffusion(&self, t: f64, y: f64, y_h1: f64, y_h2: f64) -> Result<f64> {
        finite("a", (self.diffusion)(t, y, y_h1, y_h2))
    }

    fn diffusion_dy(&self, t: f64, y: f64, y_h1: f64, y_h2: f64) -> Result<f64> {
        match &self.diffusion_dy {
            Some(f) => finite("∂a/∂y", f(t, y, y_h1, y_h2)),
            None => {
                let h = 1e-6 * y.abs().max(1.0);
                Ok((self.diffusion(t, y + h, y_h1, y_h2)? - self.diffusion(t, y - h, y_h1, y_h2)?) / (2.0 * h))
            }
        }
    }

    fn g1(&self, t: f64, y: f64) -> Result<f64> {
        finite("g1", (self.g1)(t, y))
    }

    fn g2(&self, t: f64, y: f64) -> Result<f64> {
        finite("g2", (self.g2)(t, y))
    }

    fn g2_dy(&self, t: f64, y: f64) -> Result<f64> {
        match &self.g2_dy {
            Some(f) => finite("∂g2/∂y", f(t, y)),
            None => {
                let h = 1e-6 * y.abs().max(1.0);
                Ok((self.g2(t, y + h)? - self.g2(t, y - h)?) / (2.0 * h))
            }
        }
    }

    fn h1(&self, t: f64, y: f64) -> Result<f64> {
        finite("h1", (self.h1)(t, y))
    }

    fn h2(&self, t: f64, y: f64) -> Result<f64> {
        finite("h2", (self.h2)(t, y))
    }

    fn is_elliptic(&self) -> bool {
        self.elliptic
    }

    fn lower_bound(&self) -> f64 {
        self.lower_bound
    }
}
