//! Codeword ODE system: each Brownian codeword χ turns the SDE into an
//! ordinary differential equation driven by α′ = χ′.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::brownian::{Codeword, MultiIndex, ProductQuantizer};
use crate::error::{Error, Result};
use crate::models::Model;

/// Lost codeword weight below which surviving weights are renormalized.
pub const LOST_WEIGHT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodewordState {
    pub t: f64,
    pub y: f64,
    pub y_g1: f64,
    pub y_g2: f64,
    pub y_h: f64,
}

impl CodewordState {
    pub fn initial(model: &dyn Model) -> Self {
        Self { t: 0.0, y: model.initial_value(), y_g1: 0.0, y_g2: 0.0, y_h: 0.0 }
    }

    fn to_array(self) -> [f64; 4] {
        [self.y, self.y_g1, self.y_g2, self.y_h]
    }

    fn from_array(t: f64, v: [f64; 4]) -> Self {
        Self { t, y: v[0], y_g1: v[1], y_g2: v[2], y_h: v[3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub dy: f64,
    pub dy_g1: f64,
    pub dy_g2: f64,
    pub dy_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

impl FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euler" => Ok(Self::Euler),
            "rk4" => Ok(Self::Rk4),
            other => Err(Error::InvalidArgument(format!("unknown integrator `{other}` (expected euler or rk4)"))),
        }
    }
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Euler => "euler",
            Self::Rk4 => "rk4",
        })
    }
}

fn check_supported(model: &dyn Model) -> Result<()> {
    if model.diffusion_has_brownian_memory() {
        return Err(Error::Unsupported(format!(
            "model `{}` has a diffusion coefficient depending on a Brownian integral; use recursive marginal quantization",
            model.name()
        )));
    }
    Ok(())
}

/// Right-hand side of the codeword system
///
/// dy    = b - a ∂a/∂y / 2 + a α′
/// dỹg1  = g1
/// dỹg2  = g2 α′ - a ∂g2/∂y / 2
/// dỹh   = h1
pub fn codeword_rhs(model: &dyn Model, s: &CodewordState, alpha_prime: f64) -> Result<StateDerivative> {
    let (t, y) = (s.t, s.y);
    let a = model.diffusion(t, y, s.y_h, 0.0)?;
    if model.is_elliptic() && !(a > 0.0) {
        return Err(Error::domain("a", format!("diffusion {a} not positive at t = {t}, y = {y}")));
    }
    let a_y = model.diffusion_dy(t, y, s.y_h, 0.0)?;
    let b = model.drift(t, y, s.y_g1, s.y_g2)?;
    let g2 = model.g2(t, y)?;
    let g2_y = if g2 == 0.0 && a == 0.0 { 0.0 } else { model.g2_dy(t, y)? };
    Ok(StateDerivative {
        dy: b - 0.5 * a * a_y + a * alpha_prime,
        dy_g1: model.g1(t, y)?,
        dy_g2: g2 * alpha_prime - 0.5 * a * g2_y,
        dy_h: model.h1(t, y)?,
    })
}

/// Uniform grid 0 = t_0 < … < t_n = T.
pub fn time_grid(horizon: f64, steps: usize) -> Vec<f64> {
    let mut times: Vec<f64> = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
    times[steps] = horizon;
    times
}

fn axpy(a: &[f64; 4], h: f64, k: &[f64; 4]) -> [f64; 4] {
    [a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2], a[3] + h * k[3]]
}

/// Fixed-step integration of v′ = f(t, v) on `times`.
fn integrate_fixed(
    times: &[f64],
    v0: [f64; 4],
    method: Integrator,
    f: impl Fn(f64, &[f64; 4]) -> Result<[f64; 4]>,
) -> Result<Vec<[f64; 4]>> {
    let mut out = Vec::with_capacity(times.len());
    out.push(v0);
    let mut v = v0;
    for (k, w) in times.windows(2).enumerate() {
        let (t, h) = (w[0], w[1] - w[0]);
        let blowup = |v: [f64; 4]| Error::Blowup { step: k + 1, t: w[1], state: v };
        let step = || -> Result<[f64; 4]> {
            Ok(match method {
                Integrator::Euler => axpy(&v, h, &f(t, &v)?),
                Integrator::Rk4 => {
                    let k1 = f(t, &v)?;
                    let k2 = f(t + 0.5 * h, &axpy(&v, 0.5 * h, &k1))?;
                    let k3 = f(t + 0.5 * h, &axpy(&v, 0.5 * h, &k2))?;
                    let k4 = f(w[1], &axpy(&v, h, &k3))?;
                    let mut next = v;
                    for i in 0..4 {
                        next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                    next
                }
            })
        };
        let next = match step() {
            Ok(next) => next,
            Err(Error::NonFinite { .. }) => return Err(blowup(v)),
            Err(e) => return Err(e),
        };
        if next.iter().any(|x| !x.is_finite()) {
            return Err(blowup(next));
        }
        v = next;
        out.push(v);
    }
    Ok(out)
}

/// Codeword system driven by an arbitrary α′ on the uniform grid.
pub fn integrate_driven(
    model: &dyn Model,
    alpha_prime: &(dyn Fn(f64) -> f64 + Sync),
    horizon: f64,
    steps: usize,
    method: Integrator,
) -> Result<Vec<CodewordState>> {
    check_supported(model)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let times = time_grid(horizon, steps);
    let v0 = CodewordState::initial(model).to_array();
    let path = integrate_fixed(&times, v0, method, |t, v| {
        let d = codeword_rhs(model, &CodewordState::from_array(t, *v), alpha_prime(t))?;
        Ok([d.dy, d.dy_g1, d.dy_g2, d.dy_h])
    })?;
    Ok(times.iter().zip(path).map(|(&t, v)| CodewordState::from_array(t, v)).collect())
}

#[derive(Debug, Clone)]
pub struct CodewordPath {
    pub index: MultiIndex,
    pub flat_index: usize,
    pub weight: f64,
    pub times: Vec<f64>,
    pub states: Vec<CodewordState>,
    /// α′ at each node
    pub alpha_prime: Vec<f64>,
}

impl CodewordPath {
    pub fn terminal(&self) -> &CodewordState {
        self.states.last().expect("path has at least one node")
    }
}

fn integrate_one(model: &dyn Model, cw: &Codeword, horizon: f64, steps: usize, method: Integrator) -> Result<CodewordPath> {
    let states = integrate_driven(model, &|t| cw.derivative(t), horizon, steps, method)?;
    let times: Vec<f64> = states.iter().map(|s| s.t).collect();
    Ok(CodewordPath {
        index: cw.index().clone(),
        flat_index: cw.flat_index(),
        weight: cw.weight(),
        alpha_prime: times.iter().map(|&t| cw.derivative(t)).collect(),
        times,
        states,
    })
}

pub fn integrate_codeword(
    model: &dyn Model,
    pq: &ProductQuantizer,
    index: &MultiIndex,
    steps: usize,
    method: Integrator,
) -> Result<CodewordPath> {
    let cw = pq.codeword_by_index(index)?;
    integrate_one(model, &cw, pq.horizon(), steps, method)
}

#[derive(Debug)]
pub struct BundleFailure {
    pub index: MultiIndex,
    pub flat_index: usize,
    pub weight: f64,
    pub error: Error,
}

/// One integrated path per codeword, in lexicographic order, plus the
/// codewords whose integration failed.
#[derive(Debug)]
pub struct Bundle {
    pub paths: Vec<CodewordPath>,
    pub failures: Vec<BundleFailure>,
}

impl Bundle {
    pub fn lost_weight(&self) -> f64 {
        self.failures.iter().map(|f| f.weight).sum()
    }

    /// Renormalizes surviving weights when the lost weight is below
    /// `tolerance`; errors otherwise.
    pub fn apply_loss_policy(&mut self, tolerance: f64) -> Result<()> {
        if self.failures.is_empty() {
            return Ok(());
        }
        let lost = self.lost_weight();
        if lost >= tolerance || self.paths.is_empty() {
            return Err(Error::LostWeight { lost, tolerance });
        }
        let kept: f64 = self.paths.iter().map(|p| p.weight).sum();
        for p in &mut self.paths {
            p.weight /= kept;
        }
        Ok(())
    }

    /// Σ π_i f(path_i).
    pub fn expectation(&self, f: impl Fn(&CodewordPath) -> f64) -> f64 {
        self.paths.iter().map(|p| p.weight * f(p)).sum()
    }

    /// CSV with header `t,index,weight,y,y_g1,y_g2,y_h`, one row per path node.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "t,index,weight,y,y_g1,y_g2,y_h")?;
        for p in &self.paths {
            for s in &p.states {
                writeln!(out, "{},{},{},{},{},{},{}", s.t, p.flat_index, p.weight, s.y, s.y_g1, s.y_g2, s.y_h)?;
            }
        }
        Ok(())
    }
}

/// Integrates every codeword of `pq` in parallel; per-codeword failures are
/// collected rather than propagated.
pub fn integrate_bundle(model: &dyn Model, pq: &ProductQuantizer, steps: usize, method: Integrator) -> Result<Bundle> {
    check_supported(model)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let results: Vec<(Codeword, Result<CodewordPath>)> = (0..pq.len())
        .into_par_iter()
        .map(|f| {
            let cw = pq.codeword_at(f).expect("index in range");
            let r = integrate_one(model, &cw, pq.horizon(), steps, method);
            (cw, r)
        })
        .collect();
    let mut bundle = Bundle { paths: Vec::with_capacity(results.len()), failures: Vec::new() };
    for (cw, r) in results {
        match r {
            Ok(p) => bundle.paths.push(p),
            Err(error) => bundle.failures.push(BundleFailure {
                index: cw.index().clone(),
                flat_index: cw.flat_index(),
                weight: cw.weight(),
                error,
            }),
        }
    }
    Ok(bundle)
}

fn require_elliptic(model: &dyn Model) -> Result<()> {
    if !model.is_elliptic() {
        return Err(Error::Unsupported(format!("model `{}` is not elliptic; no Lamperti transform", model.name())));
    }
    check_supported(model)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn rec(
        f: &dyn Fn(f64) -> Result<f64>,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm)?, f(rm)?);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol.max(1e-15 * (left + right).abs()) {
            return Ok(left + right + delta / 15.0);
        }
        Ok(rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)? + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    let (fa, fb, fm) = (f(a)?, f(b)?, f(0.5 * (a + b))?);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 24)
}

const QUAD_TOL: f64 = 1e-13;

fn reciprocal_diffusion(model: &dyn Model, t: f64, y_h: f64) -> impl Fn(f64) -> Result<f64> + '_ {
    move |u| {
        let a = model.diffusion(t, u, y_h, 0.0)?;
        if !(a > 0.0) {
            return Err(Error::domain("a", format!("diffusion {a} not positive at y = {u}")));
        }
        Ok(1.0 / a)
    }
}

/// S(t, y, ỹ^h) = ∫_ε^y dξ / a(t, ξ, ỹ^h).
pub fn lamperti(model: &dyn Model, t: f64, y: f64, y_h: f64) -> Result<f64> {
    require_elliptic(model)?;
    if let Some(s) = model.lamperti_closed_form() {
        return s.transform(t, y, y_h);
    }
    if y <= model.lower_bound() {
        return Err(Error::domain("lamperti", format!("y = {y} outside the state space")));
    }
    adaptive_simpson(&reciprocal_diffusion(model, t, y_h), model.lamperti_anchor(), y, QUAD_TOL)
}

/// ∂S/∂ỹ^h = -∫_ε^y ∂a/∂ỹ^h / a².
pub fn lamperti_dh(model: &dyn Model, t: f64, y: f64, y_h: f64) -> Result<f64> {
    require_elliptic(model)?;
    if let Some(s) = model.lamperti_closed_form() {
        return s.d_dh(t, y, y_h);
    }
    let f = |u: f64| -> Result<f64> {
        let a = model.diffusion(t, u, y_h, 0.0)?;
        Ok(-model.diffusion_dh(t, u, y_h, 0.0)? / (a * a))
    };
    adaptive_simpson(&f, model.lamperti_anchor(), y, QUAD_TOL)
}

/// ∂S/∂t = -∫_ε^y ∂a/∂t / a².
pub fn lamperti_dt(model: &dyn Model, t: f64, y: f64, y_h: f64) -> Result<f64> {
    require_elliptic(model)?;
    if let Some(s) = model.lamperti_closed_form() {
        return s.d_dt(t, y, y_h);
    }
    let f = |u: f64| -> Result<f64> {
        let a = model.diffusion(t, u, y_h, 0.0)?;
        Ok(-model.diffusion_dt(t, u, y_h, 0.0)? / (a * a))
    };
    adaptive_simpson(&f, model.lamperti_anchor(), y, QUAD_TOL)
}

/// Inverse of [`lamperti`] in y: closed form when available, otherwise a
/// bracketed root search on the quadrature transform.
pub fn lamperti_inverse(model: &dyn Model, t: f64, x: f64, y_h: f64) -> Result<f64> {
    require_elliptic(model)?;
    if let Some(s) = model.lamperti_closed_form() {
        return s.inverse(t, x, y_h);
    }
    let anchor = model.lamperti_anchor();
    if x == 0.0 {
        return Ok(anchor);
    }
    let floor = model.lower_bound();
    let g = |y: f64| -> Result<f64> { Ok(lamperti(model, t, y, y_h)? - x) };
    // Expand a bracket from the anchor in the direction of x.
    let (mut lo, mut hi) = (anchor, anchor);
    let mut width = 0.1 * anchor.abs().max(1.0);
    let no_root = || Error::domain("lamperti inverse", format!("x = {x} has no preimage"));
    for _ in 0..200 {
        if x > 0.0 {
            lo = hi;
            hi += width;
            if g(hi)? >= 0.0 {
                break;
            }
        } else {
            hi = lo;
            lo = if floor.is_finite() { floor + 0.5 * (lo - floor) } else { lo - width };
            if lo - floor <= 1e-300 {
                return Err(no_root());
            }
            if g(lo)? <= 0.0 {
                break;
            }
        }
        width *= 2.0;
    }
    let (mut glo, mut ghi) = (g(lo)?, g(hi)?);
    if glo > 0.0 || ghi < 0.0 {
        return Err(no_root());
    }
    // Illinois variant of regula falsi.
    let mut side = 0;
    for _ in 0..200 {
        let mid = (lo * ghi - hi * glo) / (ghi - glo);
        let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
        let gm = g(mid)?;
        if gm == 0.0 || (hi - lo) <= 1e-15 * mid.abs().max(1e-300) {
            return Ok(mid);
        }
        if gm < 0.0 {
            lo = mid;
            glo = gm;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            ghi = gm;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
        if (hi - lo) <= 1e-14 * hi.abs().max(1e-12) {
            return Ok(0.5 * (lo + hi));
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Integrates the transformed equation
///
/// dx = b/a - ∂a/∂y / 2 + ∂S/∂ỹ^h · h1 + ∂S/∂t + α′
///
/// and maps each node back through S⁻¹.
pub fn integrate_lamperti_route(
    model: &dyn Model,
    alpha_prime: &(dyn Fn(f64) -> f64 + Sync),
    horizon: f64,
    steps: usize,
    method: Integrator,
) -> Result<Vec<CodewordState>> {
    require_elliptic(model)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let times = time_grid(horizon, steps);
    let y0 = model.initial_value();
    let x0 = lamperti(model, 0.0, y0, 0.0)?;
    let path = integrate_fixed(&times, [x0, 0.0, 0.0, 0.0], method, |t, v| {
        let [x, y_g1, y_g2, y_h] = *v;
        let y = lamperti_inverse(model, t, x, y_h)?;
        let a = model.diffusion(t, y, y_h, 0.0)?;
        let a_y = model.diffusion_dy(t, y, y_h, 0.0)?;
        let b = model.drift(t, y, y_g1, y_g2)?;
        let h1 = model.h1(t, y)?;
        let ap = alpha_prime(t);
        let dx = b / a - 0.5 * a_y + lamperti_dh(model, t, y, y_h)? * h1 + lamperti_dt(model, t, y, y_h)? + ap;
        let g2 = model.g2(t, y)?;
        let g2_y = model.g2_dy(t, y)?;
        Ok([dx, model.g1(t, y)?, g2 * ap - 0.5 * a * g2_y, h1])
    })?;
    times
        .iter()
        .zip(path)
        .map(|(&t, v)| {
            let y = lamperti_inverse(model, t, v[0], v[3])?;
            Ok(CodewordState { t, y, y_g1: v[1], y_g2: v[2], y_h: v[3] })
        })
        .collect()
}
