//! Karhunen–Loève basis of Brownian motion on [0, T] and its product
//! functional quantizer.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::quant1d::{GridCache, Quantizer1D};

/// Largest scalar level considered by [`allocate_levels`].
pub const MAX_SCALAR_LEVEL: usize = 128;

/// Default cap on the number of quantized KL coefficients.
pub const DEFAULT_MAX_LENGTH: usize = 32;

fn check_time(t: f64, horizon: f64) -> Result<()> {
    let slack = 1e-12 * horizon;
    if !(t >= -slack && t <= horizon + slack) {
        return Err(Error::domain("time", format!("t = {t} outside [0, {horizon}]")));
    }
    Ok(())
}

/// λ_ℓ = (T / (π(ℓ - 1/2)))², ℓ ≥ 1.
pub fn kl_eigenvalue(l: usize, horizon: f64) -> f64 {
    assert!(l >= 1, "eigenvalues are indexed from 1");
    let s = horizon / (PI * (l as f64 - 0.5));
    s * s
}

/// e_ℓ(t) = √(2/T) sin(t / √λ_ℓ).
pub fn kl_eigenfunction(l: usize, horizon: f64, t: f64) -> Result<f64> {
    check_time(t, horizon)?;
    Ok((2.0 / horizon).sqrt() * (t / kl_eigenvalue(l, horizon).sqrt()).sin())
}

/// Sum of all eigenvalues beyond the first `d`: T²/2 - Σ_{ℓ≤d} λ_ℓ.
pub fn kl_tail(d: usize, horizon: f64) -> f64 {
    let head: f64 = (1..=d).map(|l| kl_eigenvalue(l, horizon)).sum();
    (0.5 * horizon * horizon - head).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlBasis {
    horizon: f64,
    length: usize,
}

impl KlBasis {
    pub fn new(horizon: f64, length: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon, length })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn eigenvalue(&self, l: usize) -> f64 {
        kl_eigenvalue(l, self.horizon)
    }

    pub fn eigenfunction(&self, l: usize, t: f64) -> Result<f64> {
        kl_eigenfunction(l, self.horizon, t)
    }
}

/// Per-coefficient quantization levels N_1 ≥ N_2 ≥ … ≥ 2 with ∏ N_ℓ ≤ budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitAllocation {
    levels: Vec<usize>,
    budget: usize,
}

impl BitAllocation {
    /// User-supplied levels; trailing ones are dropped.
    pub fn explicit(levels: &[usize], budget: Option<usize>) -> Result<Self> {
        if levels.contains(&0) {
            return Err(Error::InvalidArgument("allocation levels must be at least 1".into()));
        }
        if levels.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(format!("allocation {levels:?} is not nonincreasing")));
        }
        let mut levels = levels.to_vec();
        while levels.last() == Some(&1) {
            levels.pop();
        }
        let product = levels
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::InvalidArgument("allocation product overflows".into()))?;
        let budget = budget.unwrap_or(product);
        if product > budget {
            return Err(Error::InvalidArgument(format!(
                "allocation product {product} exceeds the budget {budget}"
            )));
        }
        Ok(Self { levels, budget })
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Number of codewords ∏ N_ℓ.
    pub fn size(&self) -> usize {
        self.levels.iter().product()
    }

    /// Σ_ℓ λ_ℓ D(N_ℓ) + Σ_{ℓ>d} λ_ℓ.
    pub fn modeled_distortion(&self, horizon: f64, cache: &GridCache) -> Result<f64> {
        let mut total = kl_tail(self.levels.len(), horizon);
        for (l, &n) in self.levels.iter().enumerate() {
            total += kl_eigenvalue(l + 1, horizon) * cache.get(n)?.distortion();
        }
        Ok(total)
    }
}

/// Allocation minimizing the modeled product-quantizer distortion over
/// all level sequences with product at most `budget` and at most
/// `max_length` quantized coefficients (scalar levels capped at
/// [`MAX_SCALAR_LEVEL`]).
pub fn allocate_levels(budget: usize, horizon: f64, max_length: usize, cache: &GridCache) -> Result<BitAllocation> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    KlBasis::new(horizon, 0)?;
    let top = budget.min(MAX_SCALAR_LEVEL);
    let mut dist = vec![1.0; top + 1];
    for (k, d) in dist.iter_mut().enumerate().skip(2) {
        *d = cache.get(k)?.distortion();
    }
    let lambdas: Vec<f64> = (1..=max_length).map(|l| kl_eigenvalue(l, horizon)).collect();
    let mut tails = vec![0.5 * horizon * horizon; max_length + 1];
    for l in 0..max_length {
        tails[l + 1] = (tails[l] - lambdas[l]).max(0.0);
    }

    struct Search<'a> {
        dist: &'a [f64],
        lambdas: &'a [f64],
        tails: &'a [f64],
        memo: HashMap<(usize, usize), (f64, usize)>,
    }

    impl Search<'_> {
        // best cost from coefficient `l` onwards with remaining budget `b`
        fn best(&mut self, l: usize, b: usize) -> f64 {
            if let Some(&(cost, _)) = self.memo.get(&(l, b)) {
                return cost;
            }
            let mut best = (self.tails[l], 1);
            if l < self.lambdas.len() {
                for k in 2..=b.min(self.dist.len() - 1) {
                    let cost = self.lambdas[l] * self.dist[k] + self.best(l + 1, b / k);
                    if cost < best.0 {
                        best = (cost, k);
                    }
                }
            }
            self.memo.insert((l, b), best);
            best.0
        }
    }

    let mut search = Search { dist: &dist, lambdas: &lambdas, tails: &tails, memo: HashMap::new() };
    search.best(0, budget);
    let mut levels = Vec::new();
    let (mut l, mut b) = (0, budget);
    while let Some(&(_, k)) = search.memo.get(&(l, b)) {
        if k == 1 {
            break;
        }
        levels.push(k);
        b /= k;
        l += 1;
    }
    // Pairing larger levels with larger eigenvalues never increases the cost.
    levels.sort_unstable_by(|a, b| b.cmp(a));
    BitAllocation::explicit(&levels, Some(budget))
}

/// 0-based multi-index (i_1, …, i_d) into a product quantizer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<usize>);

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// One Brownian codeword χ with its derivative α′ and weight.
#[derive(Debug, Clone)]
pub struct Codeword {
    index: MultiIndex,
    flat: usize,
    weight: f64,
    // (√(2/T)·x_{i_ℓ}, 1/√λ_ℓ)
    terms: Vec<(f64, f64)>,
}

impl Codeword {
    pub fn index(&self) -> &MultiIndex {
        &self.index
    }

    pub fn flat_index(&self) -> usize {
        self.flat
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// χ(t) = Σ √λ_ℓ e_ℓ(t) x_{i_ℓ}.
    pub fn value(&self, t: f64) -> f64 {
        self.terms.iter().map(|(c, w)| c / w * (w * t).sin()).sum()
    }

    /// α′(t) = Σ √(2/T) cos(t/√λ_ℓ) x_{i_ℓ}.
    pub fn derivative(&self, t: f64) -> f64 {
        self.terms.iter().map(|(c, w)| c * (w * t).cos()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ProductQuantizer {
    basis: KlBasis,
    allocation: BitAllocation,
    grids: Vec<Arc<Quantizer1D>>,
    strides: Vec<usize>,
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl ProductQuantizer {
    pub fn new(horizon: f64, allocation: BitAllocation, cache: &GridCache) -> Result<Self> {
        let basis = KlBasis::new(horizon, allocation.levels().len())?;
        let grids = allocation.levels().iter().map(|&n| cache.get(n)).collect::<Result<Vec<_>>>()?;
        let d = grids.len();
        let mut strides = vec![1; d];
        for l in (0..d.saturating_sub(1)).rev() {
            strides[l] = strides[l + 1] * allocation.levels()[l + 1];
        }
        Ok(Self { basis, allocation, grids, strides })
    }

    /// Quantizer at the optimal allocation for `budget`.
    pub fn with_budget(horizon: f64, budget: usize, cache: &GridCache) -> Result<Self> {
        let allocation = allocate_levels(budget, horizon, DEFAULT_MAX_LENGTH, cache)?;
        Self::new(horizon, allocation, cache)
    }

    pub fn basis(&self) -> &KlBasis {
        &self.basis
    }

    pub fn allocation(&self) -> &BitAllocation {
        &self.allocation
    }

    pub fn horizon(&self) -> f64 {
        self.basis.horizon()
    }

    pub fn grids(&self) -> &[Arc<Quantizer1D>] {
        &self.grids
    }

    /// Number of codewords.
    pub fn len(&self) -> usize {
        self.allocation.size()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn multi_index(&self, flat: usize) -> Result<MultiIndex> {
        if flat >= self.len() {
            return Err(Error::Index(format!("codeword {flat} out of range 0..{}", self.len())));
        }
        Ok(MultiIndex(
            self.strides
                .iter()
                .zip(self.allocation.levels())
                .map(|(s, n)| (flat / s) % n)
                .collect(),
        ))
    }

    pub fn flat_index(&self, index: &MultiIndex) -> Result<usize> {
        self.check_index(index)?;
        Ok(index.0.iter().zip(&self.strides).map(|(i, s)| i * s).sum())
    }

    fn check_index(&self, index: &MultiIndex) -> Result<()> {
        let levels = self.allocation.levels();
        if index.0.len() != levels.len() || index.0.iter().zip(levels).any(|(i, n)| i >= n) {
            return Err(Error::Index(format!("{index} is not valid for levels {levels:?}")));
        }
        Ok(())
    }

    /// All multi-indices, lexicographic (last component fastest).
    pub fn indices(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        (0..self.len()).map(|f| self.multi_index(f).expect("in range"))
    }

    pub fn codeword_by_index(&self, index: &MultiIndex) -> Result<Codeword> {
        let flat = self.flat_index(index)?;
        let scale = (2.0 / self.horizon()).sqrt();
        let terms = index
            .0
            .iter()
            .zip(&self.grids)
            .enumerate()
            .map(|(l, (&i, g))| (scale * g.grid()[i], 1.0 / self.basis.eigenvalue(l + 1).sqrt()))
            .collect();
        Ok(Codeword { index: index.clone(), flat, weight: self.weight(index)?, terms })
    }

    pub fn codeword_at(&self, flat: usize) -> Result<Codeword> {
        self.codeword_by_index(&self.multi_index(flat)?)
    }

    pub fn codewords(&self) -> impl Iterator<Item = Codeword> + '_ {
        (0..self.len()).map(|f| self.codeword_at(f).expect("in range"))
    }

    pub fn codeword(&self, index: &MultiIndex, t: f64) -> Result<f64> {
        check_time(t, self.horizon())?;
        Ok(self.codeword_by_index(index)?.value(t))
    }

    pub fn codeword_derivative(&self, index: &MultiIndex, t: f64) -> Result<f64> {
        check_time(t, self.horizon())?;
        Ok(self.codeword_by_index(index)?.derivative(t))
    }

    pub fn weight(&self, index: &MultiIndex) -> Result<f64> {
        self.check_index(index)?;
        Ok(index.0.iter().zip(&self.grids).map(|(&i, g)| g.weights()[i]).product())
    }

    /// Monte Carlo estimate of E‖W - Ŵ‖²_{L²(0,T)}, with the untruncated
    /// KL tail added exactly.
    pub fn quantization_error(&self, sample_count: usize, seed: u64) -> Result<Estimate> {
        if sample_count == 0 {
            return Err(Error::InvalidArgument("sample_count must be at least 1".into()));
        }
        let lambdas: Vec<f64> = (1..=self.grids.len()).map(|l| self.basis.eigenvalue(l)).collect();
        let tail = kl_tail(self.grids.len(), self.horizon());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..sample_count {
            let mut err = tail;
            for (g, lambda) in self.grids.iter().zip(&lambdas) {
                let xi: f64 = StandardNormal.sample(&mut rng);
                let e = xi - g.project(xi);
                err += lambda * e * e;
            }
            sum += err;
            sum_sq += err * err;
        }
        let m = sample_count as f64;
        let mean = sum / m;
        let var = if sample_count > 1 { ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0) } else { 0.0 };
        Ok(Estimate { mean, std_error: (var / m).sqrt() })
    }
}
