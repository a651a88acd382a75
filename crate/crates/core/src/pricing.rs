//! Zero-coupon bond under the benchmark approach: price = s₀ E[S_T⁻¹] for
//! the growth optimal portfolio
//!
//! S_t = s₀ exp(∫(r + M/(2Y)) ds + ∫√(M/Y) dW),
//!
//! by functional quantization (one deterministic path per codeword) or by
//! Euler Monte Carlo.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::brownian::ProductQuantizer;
use crate::engine::{integrate_bundle, time_grid, Bundle, CodewordPath, Integrator, LOST_WEIGHT_TOLERANCE};
use crate::error::{Error, Result};
use crate::models::{ClampStats, Model, PlatenModel, SqrtGuard};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    pub s0: f64,
    pub rate: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl MarketParams {
    pub fn new(s0: f64, rate: f64, horizon: f64, steps: usize) -> Result<Self> {
        if !(s0 > 0.0 && s0.is_finite()) {
            return Err(Error::InvalidArgument(format!("s0 must be positive, got {s0}")));
        }
        if !rate.is_finite() {
            return Err(Error::InvalidArgument(format!("rate must be finite, got {rate}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        Ok(Self { s0, rate, horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PricingMethod {
    Fq,
    Mc,
}

impl fmt::Display for PricingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fq => "fq",
            Self::Mc => "mc",
        })
    }
}

impl FromStr for PricingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fq" => Ok(Self::Fq),
            "mc" => Ok(Self::Mc),
            other => Err(Error::InvalidArgument(format!("unknown pricing method '{other}' (fq|mc)"))),
        }
    }
}

/// Per-step exponent of the quantized S⁻¹ recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExponentForm {
    /// drift + α′ vol: the codeword integrates against dα like a smooth path.
    #[default]
    Codeword,
    /// Subtracts ½ a ∂vol/∂y so the stochastic term mimics the Itô integral.
    ItoCorrected,
}

impl FromStr for ExponentForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "codeword" => Ok(Self::Codeword),
            "ito" | "ito-corrected" => Ok(Self::ItoCorrected),
            other => Err(Error::InvalidArgument(format!("unknown exponent form '{other}' (codeword|ito)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceResult {
    pub method: PricingMethod,
    pub value: f64,
    /// 95% interval, Monte Carlo only.
    pub ci: Option<(f64, f64)>,
    /// Codewords (fq) or paths (mc) that entered the estimate.
    pub samples: usize,
    pub runtime: Duration,
    pub clamps: ClampStats,
}

impl PriceResult {
    pub const CSV_HEADER: &'static str = "method,lambda,T,N,n,value,ci_low,ci_high,runtime_s";

    /// One CSV row; `runtime_s` is written as 0 when `timing` is off so that
    /// files stay byte-identical across runs.
    pub fn csv_row(&self, lambda: f64, mkt: &MarketParams, timing: bool) -> String {
        let (lo, hi) = match self.ci {
            Some((lo, hi)) => (lo.to_string(), hi.to_string()),
            None => (String::new(), String::new()),
        };
        let runtime = if timing { self.runtime.as_secs_f64() } else { 0.0 };
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method, lambda, mkt.horizon, self.samples, mkt.steps, self.value, lo, hi, runtime
        )
    }
}

/// Ŝ⁻¹ on the time grid of a Platen codeword path.
pub fn gop_inverse_codeword(model: &PlatenModel, path: &CodewordPath, mkt: &MarketParams) -> Result<Vec<f64>> {
    gop_inverse_with(model, path, mkt, ExponentForm::Codeword, &SqrtGuard::default())
}

/// Ŝ⁻¹_{s_i} = Ŝ⁻¹_{s_{i-1}} exp(-Δ (drift_i + α′(s_i) vol_i)) with
/// drift = r + M̂/(2Ŷ), vol = √(M̂/Ŷ) and M̂ rebuilt from the quantized path
/// through the Riemann sum λΔ Σ_{j≤i} e^{-λ(s_i - s_j)} √Ŷ_{s_j}.
pub fn gop_inverse_with(
    model: &PlatenModel,
    path: &CodewordPath,
    mkt: &MarketParams,
    form: ExponentForm,
    guard: &SqrtGuard,
) -> Result<Vec<f64>> {
    let n = mkt.steps;
    if path.states.len() != n + 1 || path.alpha_prime.len() != n + 1 {
        return Err(Error::InvalidArgument(format!(
            "path has {} nodes, market grid needs {}",
            path.states.len(),
            n + 1
        )));
    }
    if (path.times[n] - mkt.horizon).abs() > 1e-12 * mkt.horizon {
        return Err(Error::InvalidArgument(format!("path ends at {}, market horizon is {}", path.times[n], mkt.horizon)));
    }
    let p = model.params();
    let (l, dt) = (p.lambda, mkt.dt());
    let decay = (-l * dt).exp();
    let mut out = Vec::with_capacity(n + 1);
    let mut inv = 1.0 / mkt.s0;
    out.push(inv);
    let mut conv = guard.sqrt(path.states[0].y);
    for i in 1..=n {
        let y = guard.floor(path.states[i].y);
        let sq = y.sqrt();
        conv = decay * conv + sq;
        let c = l * dt * conv;
        let m = p.xi * (4.0 * l * l * (sq - c).powi(2) + p.eta);
        let vol = (m / y).sqrt();
        let mut e = mkt.rate + m / (2.0 * y) + path.alpha_prime[i] * vol;
        if form == ExponentForm::ItoCorrected {
            let m_y = 4.0 * p.xi * l * l * (sq - c) / sq;
            e -= 0.5 * p.sigma * (0.5 * m_y - m / (2.0 * y));
        }
        inv *= (-dt * e).exp();
        if !inv.is_finite() {
            return Err(Error::NonFinite { term: "S⁻¹", value: inv });
        }
        out.push(inv);
    }
    Ok(out)
}

fn check_grid(pq: &ProductQuantizer, mkt: &MarketParams) -> Result<()> {
    if (pq.horizon() - mkt.horizon).abs() > 1e-12 * mkt.horizon {
        return Err(Error::InvalidArgument(format!(
            "quantizer horizon {} differs from market horizon {}",
            pq.horizon(),
            mkt.horizon
        )));
    }
    Ok(())
}

/// Integrated codeword bundle on the market grid, with the lost-weight policy applied.
pub fn platen_bundle(model: &PlatenModel, pq: &ProductQuantizer, mkt: &MarketParams, method: Integrator) -> Result<Bundle> {
    check_grid(pq, mkt)?;
    let mut bundle = integrate_bundle(model, pq, mkt.steps, method)?;
    bundle.apply_loss_policy(LOST_WEIGHT_TOLERANCE)?;
    Ok(bundle)
}

fn terminal_inverses(model: &PlatenModel, bundle: &Bundle, mkt: &MarketParams, form: ExponentForm, guard: &SqrtGuard) -> Result<Vec<f64>> {
    bundle
        .paths
        .par_iter()
        .map(|p| gop_inverse_with(model, p, mkt, form, guard).map(|v| v[mkt.steps]))
        .collect()
}

/// s₀ Σ π_i Ŝ⁻¹_i(T) from an already integrated bundle.
pub fn price_from_bundle(model: &PlatenModel, bundle: &Bundle, mkt: &MarketParams, form: ExponentForm) -> Result<PriceResult> {
    let start = Instant::now();
    let guard = SqrtGuard::default();
    let inv = terminal_inverses(model, bundle, mkt, form, &guard)?;
    let value = mkt.s0 * bundle.paths.iter().zip(&inv).map(|(p, v)| p.weight * v).sum::<f64>();
    Ok(PriceResult {
        method: PricingMethod::Fq,
        value,
        ci: None,
        samples: bundle.paths.len(),
        runtime: start.elapsed(),
        clamps: guard.stats(),
    })
}

pub fn price_zcb_fq(model: &PlatenModel, pq: &ProductQuantizer, mkt: &MarketParams) -> Result<PriceResult> {
    price_zcb_fq_with(model, pq, mkt, Integrator::default(), ExponentForm::Codeword)
}

pub fn price_zcb_fq_with(
    model: &PlatenModel,
    pq: &ProductQuantizer,
    mkt: &MarketParams,
    method: Integrator,
    form: ExponentForm,
) -> Result<PriceResult> {
    let start = Instant::now();
    let bundle = platen_bundle(model, pq, mkt, method)?;
    let mut result = price_from_bundle(model, &bundle, mkt, form)?;
    result.runtime = start.elapsed();
    Ok(result)
}

/// (Ŝ_T, π) per codeword, sorted by value with equal values merged.
pub fn terminal_distribution(model: &PlatenModel, pq: &ProductQuantizer, mkt: &MarketParams) -> Result<Vec<(f64, f64)>> {
    let bundle = platen_bundle(model, pq, mkt, Integrator::default())?;
    terminal_distribution_from_bundle(model, &bundle, mkt)
}

pub fn terminal_distribution_from_bundle(model: &PlatenModel, bundle: &Bundle, mkt: &MarketParams) -> Result<Vec<(f64, f64)>> {
    let inv = terminal_inverses(model, bundle, mkt, ExponentForm::Codeword, &SqrtGuard::default())?;
    let mut atoms: Vec<(f64, f64)> = inv.iter().zip(&bundle.paths).map(|(v, p)| (1.0 / v, p.weight)).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (v, w) in atoms {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => merged.push((v, w)),
        }
    }
    Ok(merged)
}

/// Weighted mean and variance of a discrete law.
pub fn weighted_moments(atoms: &[(f64, f64)]) -> (f64, f64) {
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    let mean = atoms.iter().map(|(v, w)| v * w).sum::<f64>() / total;
    let var = atoms.iter().map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / total;
    (mean, var)
}

/// One Euler path of (Y, ∫e^{λu}√Y du, log s₀S⁻¹); returns s₀ S_T⁻¹.
fn mc_path(model: &PlatenModel, mkt: &MarketParams, times: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
    let dt = mkt.dt();
    let sq_dt = dt.sqrt();
    let mut y = model.initial_value();
    let mut y_h = 0.0;
    let mut log_inv = 0.0;
    for &t in &times[..mkt.steps] {
        let z: f64 = StandardNormal.sample(rng);
        let m = model.intensity(t, y, y_h);
        let x = m / y.max(crate::models::SQRT_FLOOR);
        let b = model.drift(t, y, y_h, 0.0)?;
        let a = model.diffusion(t, y, y_h, 0.0)?;
        let g = model.g1(t, y)?;
        log_inv -= (mkt.rate + 0.5 * x) * dt + x.sqrt() * sq_dt * z;
        y += b * dt + a * sq_dt * z;
        y_h += g * dt;
    }
    Ok(log_inv.exp())
}

/// Mean and 95% interval of s₀ S_T⁻¹ over `paths` Euler paths. Path k draws
/// from stream k of a ChaCha8 generator seeded with `seed`, and the sum runs
/// in path order, so the estimate does not depend on the thread count.
pub fn price_zcb_mc(model: &PlatenModel, mkt: &MarketParams, paths: usize, seed: u64) -> Result<PriceResult> {
    if paths < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 paths, got {paths}")));
    }
    let start = Instant::now();
    let before = model.clamp_stats();
    let times = time_grid(mkt.horizon, mkt.steps);
    let values: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            mc_path(model, mkt, &times, &mut rng)
        })
        .collect::<Result<_>>()?;
    let m = paths as f64;
    // shifted by the first sample so a constant payoff gives a zero-width interval
    let v0 = values[0];
    let (s1, s2) = values.iter().fold((0.0, 0.0), |(a, b), v| (a + (v - v0), b + (v - v0) * (v - v0)));
    let mean = v0 + s1 / m;
    let var = ((s2 - s1 * s1 / m) / (m - 1.0)).max(0.0);
    let half = Z95 * (var / m).sqrt();
    let after = model.clamp_stats();
    Ok(PriceResult {
        method: PricingMethod::Mc,
        value: mean,
        ci: Some((mean - half, mean + half)),
        samples: paths,
        runtime: start.elapsed(),
        clamps: ClampStats {
            evaluations: after.evaluations - before.evaluations,
            clamps: after.clamps - before.clamps,
        },
    })
}
