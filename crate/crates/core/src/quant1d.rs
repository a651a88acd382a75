//! Quadratic optimal quantizers of the one-dimensional standard normal law.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::normal;

/// Default stationarity tolerance for grids built on demand.
pub const DEFAULT_TOLERANCE: f64 = 1e-12;
/// Default iteration cap for grids built on demand.
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;

/// N-point quantizer of N(0, 1): ascending codepoints, cell probabilities
/// and quadratic distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer1D {
    level: usize,
    grid: Vec<f64>,
    weights: Vec<f64>,
    distortion: f64,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    lower: f64,
    upper: f64,
    mass: f64,
    // integral of x phi(x) over the cell
    first: f64,
}

fn cells(grid: &[f64]) -> Vec<Cell> {
    let n = grid.len();
    (0..n)
        .map(|i| {
            let lower = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (grid[i - 1] + grid[i]) };
            let upper = if i + 1 == n { f64::INFINITY } else { 0.5 * (grid[i] + grid[i + 1]) };
            Cell {
                lower,
                upper,
                mass: normal::interval_mass(lower, upper),
                first: normal::pdf(lower) - normal::pdf(upper),
            }
        })
        .collect()
}

fn x_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        x * normal::pdf(x)
    }
}

fn cell_distortion(c: &Cell, x: f64) -> f64 {
    // E[(X - x)^2; a < X <= b] = p(1 + x^2) + phi(a)(a - 2x) - phi(b)(b - 2x)
    let d = c.mass * (1.0 + x * x) + x_pdf(c.lower) - x_pdf(c.upper)
        - 2.0 * x * (normal::pdf(c.lower) - normal::pdf(c.upper));
    d.max(0.0)
}

fn residual_of(grid: &[f64], cells: &[Cell]) -> f64 {
    grid.iter()
        .zip(cells)
        .map(|(x, c)| (x - c.first / c.mass).abs())
        .fold(0.0, f64::max)
}

fn strictly_ascending(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

fn symmetrize(grid: &mut [f64]) {
    let n = grid.len();
    for i in 0..n / 2 {
        let m = 0.5 * (grid[n - 1 - i] - grid[i]);
        grid[i] = -m;
        grid[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        grid[n / 2] = 0.0;
    }
}

/// Newton step on the distortion gradient (tridiagonal Hessian).
fn newton_step(grid: &[f64], cells: &[Cell]) -> Option<Vec<f64>> {
    let n = grid.len();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        rhs[i] = -(grid[i] * cells[i].mass - cells[i].first);
        diag[i] = cells[i].mass;
        if i + 1 < n {
            let h = normal::pdf(cells[i].upper) * (grid[i + 1] - grid[i]) / 4.0;
            diag[i] -= h;
            off[i] = -h;
        }
        if i > 0 {
            diag[i] -= normal::pdf(cells[i].lower) * (grid[i] - grid[i - 1]) / 4.0;
        }
    }
    // Thomas algorithm.
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let sub = if i > 0 { off[i - 1] } else { 0.0 };
        let denom = diag[i] - if i > 0 { sub * c[i - 1] } else { 0.0 };
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return None;
        }
        c[i] = if i + 1 < n { off[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - if i > 0 { sub * d[i - 1] } else { 0.0 }) / denom;
    }
    let mut delta = vec![0.0; n];
    for i in (0..n).rev() {
        delta[i] = d[i] - if i + 1 < n { c[i] * delta[i + 1] } else { 0.0 };
    }
    let next: Vec<f64> = grid.iter().zip(&delta).map(|(x, dx)| x + dx).collect();
    (next.iter().all(|v| v.is_finite()) && strictly_ascending(&next)).then_some(next)
}

impl Quantizer1D {
    /// Optimal quantizer at `level` points, started from the quantiles
    /// `(i - 1/2)/N` and kept symmetric.
    pub fn optimize(level: usize, tolerance: f64, max_iterations: usize) -> Result<Self> {
        if level == 0 {
            return Err(Error::InvalidArgument("quantizer level must be at least 1".into()));
        }
        if !(tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        let n = level as f64;
        let init: Vec<f64> = (1..=level).map(|i| normal::inv_cdf((i as f64 - 0.5) / n)).collect();
        Self::solve(init, tolerance, max_iterations, true)
    }

    /// Lloyd/Newton iteration from an arbitrary starting grid.
    pub fn refine(initial: Vec<f64>, tolerance: f64, max_iterations: usize) -> Result<Self> {
        let mut grid = initial;
        if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("starting grid must be non-empty and finite".into()));
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        Self::solve(grid, tolerance, max_iterations, false)
    }

    fn solve(mut grid: Vec<f64>, tolerance: f64, max_iterations: usize, symmetric: bool) -> Result<Self> {
        if symmetric {
            symmetrize(&mut grid);
        }
        let mut cs = cells(&grid);
        let mut residual = residual_of(&grid, &cs);
        for _ in 0..max_iterations {
            if residual < tolerance {
                return Ok(Self::from_cells(grid, &cs));
            }
            let mut accepted = false;
            if let Some(mut next) = newton_step(&grid, &cs) {
                if symmetric {
                    symmetrize(&mut next);
                }
                let next_cells = cells(&next);
                let next_residual = residual_of(&next, &next_cells);
                if next_residual < residual {
                    grid = next;
                    cs = next_cells;
                    residual = next_residual;
                    accepted = true;
                }
            }
            if !accepted {
                grid = cs.iter().map(|c| c.first / c.mass).collect();
                if symmetric {
                    symmetrize(&mut grid);
                }
                cs = cells(&grid);
                residual = residual_of(&grid, &cs);
            }
        }
        if residual < tolerance {
            return Ok(Self::from_cells(grid, &cs));
        }
        Err(Error::Convergence { iterations: max_iterations, residual })
    }

    fn from_cells(grid: Vec<f64>, cs: &[Cell]) -> Self {
        let distortion = grid.iter().zip(cs).map(|(x, c)| cell_distortion(c, *x)).sum();
        Self {
            level: grid.len(),
            weights: cs.iter().map(|c| c.mass).collect(),
            grid,
            distortion,
        }
    }

    /// Quantizer with the given codepoints (not necessarily stationary);
    /// weights and distortion are the exact Voronoi values.
    pub fn from_grid(grid: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) || !strictly_ascending(&grid) {
            return Err(Error::InvalidArgument("grid must be non-empty, finite and strictly ascending".into()));
        }
        let cs = cells(&grid);
        Ok(Self::from_cells(grid, &cs))
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    /// Largest distance between a codepoint and the conditional mean of its cell.
    pub fn stationarity_residual(&self) -> f64 {
        residual_of(&self.grid, &cells(&self.grid))
    }

    /// Index of the nearest codepoint; a point on a midpoint goes to the lower cell.
    pub fn nearest(&self, x: f64) -> usize {
        let upper = self.grid.partition_point(|g| *g < x);
        if upper == 0 {
            return 0;
        }
        if upper == self.level {
            return self.level - 1;
        }
        let mid = 0.5 * (self.grid[upper - 1] + self.grid[upper]);
        if x <= mid {
            upper - 1
        } else {
            upper
        }
    }

    /// Nearest codepoint to `x`.
    pub fn project(&self, x: f64) -> f64 {
        self.grid[self.nearest(x)]
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# quantizer1d level={} distortion={:.16e}\n", self.level, self.distortion);
        for (x, p) in self.grid.iter().zip(&self.weights) {
            s.push_str(&format!("{x:.16e} {p:.16e}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
        let bad_header = || Error::Parse {
            line: 1,
            message: "expected `# quantizer1d level=<N> distortion=<decimal>`".into(),
        };
        let rest = header.strip_prefix("# quantizer1d ").ok_or_else(bad_header)?;
        let mut fields = rest.split_whitespace();
        let level: usize = fields
            .next()
            .and_then(|f| f.strip_prefix("level="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(bad_header)?;
        let distortion: f64 = fields
            .next()
            .and_then(|f| f.strip_prefix("distortion="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(bad_header)?;
        if fields.next().is_some() || level == 0 || !(distortion >= 0.0) {
            return Err(bad_header());
        }

        let mut grid = Vec::with_capacity(level);
        let mut weights = Vec::with_capacity(level);
        let mut last_line = 1;
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            last_line = lineno;
            let parse_err = |message: &str| Error::Parse { line: lineno, message: message.into() };
            let mut parts = line.split_whitespace();
            let x: f64 = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err("expected `<x> <weight>`"))?;
            let p: f64 = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err("expected `<x> <weight>`"))?;
            if parts.next().is_some() {
                return Err(parse_err("trailing fields"));
            }
            if !x.is_finite() {
                return Err(parse_err("non-finite codepoint"));
            }
            if !(p > 0.0 && p <= 1.0) {
                return Err(parse_err("weight outside (0, 1]"));
            }
            if let Some(prev) = grid.last() {
                if x <= *prev {
                    return Err(parse_err("codepoints not strictly ascending"));
                }
            }
            if grid.len() == level {
                return Err(parse_err("more codepoints than the declared level"));
            }
            grid.push(x);
            weights.push(p);
        }
        if grid.len() != level {
            return Err(Error::Parse {
                line: last_line,
                message: format!("expected {level} codepoints, found {}", grid.len()),
            });
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parse { line: last_line, message: format!("weights sum to {total}, not 1") });
        }
        Ok(Self { level, grid, weights, distortion })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// File name used for a cached grid of the given level.
pub fn grid_file_name(level: usize) -> String {
    format!("quantizer1d_{level:04}.txt")
}

/// Memoizing store of optimal grids, optionally backed by a directory.
#[derive(Debug, Default)]
pub struct GridCache {
    dir: Option<PathBuf>,
    grids: Mutex<BTreeMap<usize, Arc<Quantizer1D>>>,
}

/// Where a grid returned by [`GridCache::fetch`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheSource {
    Memory,
    Disk,
    Computed,
}

impl GridCache {
    /// In-memory cache only.
    pub fn new() -> Self {
        Self::default()
    }

    /// Cache persisted under `dir`, created if missing.
    pub fn with_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir: Some(dir), grids: Mutex::default() })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, level: usize) -> Result<Arc<Quantizer1D>> {
        self.fetch(level).map(|(q, _)| q)
    }

    pub fn fetch(&self, level: usize) -> Result<(Arc<Quantizer1D>, CacheSource)> {
        if let Some(q) = self.grids.lock().unwrap().get(&level) {
            return Ok((q.clone(), CacheSource::Memory));
        }
        let mut source = CacheSource::Computed;
        let mut found = None;
        if let Some(dir) = &self.dir {
            let path = dir.join(grid_file_name(level));
            if path.exists() {
                let q = Quantizer1D::load(&path)?;
                if q.level() == level {
                    found = Some(q);
                    source = CacheSource::Disk;
                }
            }
        }
        let q = match found {
            Some(q) => q,
            None => {
                let q = Quantizer1D::optimize(level, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS)?;
                if let Some(dir) = &self.dir {
                    q.save(dir.join(grid_file_name(level)))?;
                }
                q
            }
        };
        let q = Arc::new(q);
        self.grids.lock().unwrap().insert(level, q.clone());
        Ok((q, source))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn opt(n: usize) -> Quantizer1D {
        Quantizer1D::optimize(n, 1e-12, 1000).unwrap()
    }

    #[test]
    fn level_one_is_the_mean() {
        let q = Quantizer1D::optimize(1, 1e-10, 100).unwrap();
        assert_eq!(q.grid(), &[0.0]);
        assert_eq!(q.weights(), &[1.0]);
        assert_relative_eq!(q.distortion(), 1.0, epsilon = 1e-15);
        assert_eq!(q.stationarity_residual(), 0.0);
    }

    #[test]
    fn level_two_is_half_normal_mean() {
        let q = Quantizer1D::optimize(2, 1e-10, 100).unwrap();
        let m = (2.0 / std::f64::consts::PI).sqrt();
        assert_relative_eq!(q.grid()[1], m, epsilon = 1e-12);
        assert_relative_eq!(q.grid()[0], -m, epsilon = 1e-12);
        assert_relative_eq!(q.weights()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(q.distortion(), 1.0 - 2.0 / std::f64::consts::PI, epsilon = 1e-14);
    }

    #[test]
    fn residual_of_unit_grid() {
        let q = Quantizer1D::from_grid(vec![-1.0, 1.0]).unwrap();
        let expected = 1.0 - (2.0 / std::f64::consts::PI).sqrt();
        assert_relative_eq!(q.stationarity_residual(), expected, epsilon = 1e-14);
        assert!((q.stationarity_residual() - 0.2021).abs() < 1e-4);
    }

    #[test]
    fn invariants_up_to_64() {
        let mut previous = f64::INFINITY;
        for n in 1..=64 {
            let q = opt(n);
            assert_eq!(q.level(), n);
            assert!(q.grid().windows(2).all(|w| w[0] < w[1]));
            for i in 0..n {
                assert!((q.grid()[i] + q.grid()[n - 1 - i]).abs() < 1e-10);
                assert!(q.weights()[i] > 0.0);
            }
            assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(q.stationarity_residual() < 1e-8);
            assert!(q.distortion() <= previous);
            let mean: f64 = q.grid().iter().zip(q.weights()).map(|(x, p)| x * p).sum();
            assert!(mean.abs() < 1e-12);
            previous = q.distortion();
        }
    }

    #[test]
    fn level_23_distortion() {
        let q = Quantizer1D::optimize(23, 1e-10, 500).unwrap();
        assert_relative_eq!(q.distortion(), 0.004_746_199_457_675, max_relative = 1e-9);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for n in [1, 2, 7, 23, 64] {
            let q = opt(n);
            let back = Quantizer1D::from_text(&q.to_text()).unwrap();
            assert_eq!(q, back);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        let q = opt(2);
        q.save(&path).unwrap();
        assert_eq!(Quantizer1D::load(&path).unwrap(), q);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let non_ascending = "# quantizer1d level=2 distortion=0.3\n1.0 0.5\n-1.0 0.5\n";
        match Quantizer1D::from_text(non_ascending) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let bad_mass = "# quantizer1d level=2 distortion=0.3\n-1.0 0.45\n1.0 0.45\n";
        assert!(matches!(Quantizer1D::from_text(bad_mass), Err(Error::Parse { .. })));
        let short = "# quantizer1d level=3 distortion=0.3\n-1.0 0.5\n1.0 0.5\n";
        assert!(matches!(Quantizer1D::from_text(short), Err(Error::Parse { .. })));
        assert!(matches!(Quantizer1D::from_text("level=2\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let q = Quantizer1D::from_grid(vec![-1.0, 1.0]).unwrap();
        assert_eq!(q.nearest(0.0), 0);
        assert_eq!(q.nearest(1e-300), 1);
        assert_eq!(q.nearest(-5.0), 0);
        assert_eq!(q.nearest(5.0), 1);
    }

    #[test]
    fn cache_persists() {
        let dir = tempfile::tempdir().unwrap();
        let cache = GridCache::with_dir(dir.path()).unwrap();
        let (q, src) = cache.fetch(5).unwrap();
        assert_eq!(src, CacheSource::Computed);
        assert_eq!(cache.fetch(5).unwrap().1, CacheSource::Memory);
        let fresh = GridCache::with_dir(dir.path()).unwrap();
        let (q2, src) = fresh.fetch(5).unwrap();
        assert_eq!(src, CacheSource::Disk);
        assert_eq!(*q, *q2);
    }

    #[test]
    fn bad_arguments() {
        assert!(Quantizer1D::optimize(0, 1e-10, 10).is_err());
        assert!(Quantizer1D::optimize(3, 0.0, 10).is_err());
        assert!(matches!(Quantizer1D::optimize(40, 1e-14, 0), Err(Error::Convergence { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn lloyd_from_random_start_is_unique(
            n in 2usize..24,
            seed in proptest::collection::vec(-3.0f64..3.0, 24),
        ) {
            let mut start: Vec<f64> = seed[..n].to_vec();
            start.sort_by(f64::total_cmp);
            start.dedup();
            prop_assume!(start.len() == n);
            let q = Quantizer1D::refine(start, 1e-11, 20_000).unwrap();
            let reference = opt(n);
            for (a, b) in q.grid().iter().zip(reference.grid()) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }

        #[test]
        fn perturbed_grids_are_worse(n in 2usize..32, bump in -0.05f64..0.05, at in 0usize..32) {
            let q = opt(n);
            let mut g = q.grid().to_vec();
            let i = at % n;
            g[i] += bump;
            prop_assume!(g.windows(2).all(|w| w[0] < w[1]));
            let other = Quantizer1D::from_grid(g).unwrap();
            prop_assert!(other.distortion() >= q.distortion() - 1e-15);
        }
    }
}
