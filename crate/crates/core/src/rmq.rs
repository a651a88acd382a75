//! Recursive marginal quantization of the Euler chain on the quintuple
//! (Y, Ỹ^{g1}, Ỹ^{g2}, Ỹ^{h1}, Ỹ^{h2}).
//!
//! Given a grid point x, the Euler image ℰ(x, Z) = m(x) + Z s(x) is a
//! Gaussian on a line. By default each line is integrated exactly against
//! the Voronoi partition (the line crosses cells in intervals); the
//! alternative replaces Z by K Gauss–Hermite atoms.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::engine::time_grid;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::normal::{gauss_hermite, interval_mass, inv_cdf, pdf};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quintuple {
    pub y: f64,
    pub y_g1: f64,
    pub y_g2: f64,
    pub y_h1: f64,
    pub y_h2: f64,
}

impl Quintuple {
    pub fn initial(model: &dyn Model) -> Self {
        Self { y: model.initial_value(), ..Self::default() }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.y, self.y_g1, self.y_g2, self.y_h1, self.y_h2]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self { y: v[0], y_g1: v[1], y_g2: v[2], y_h1: v[3], y_h2: v[4] }
    }
}

fn key(x: &[f64; 5]) -> [u64; 5] {
    x.map(|v| if v == 0.0 { 0 } else { v.to_bits() })
}

/// Mean m and spread s with ℰ(x, z) = m + z s.
fn euler_parts(model: &dyn Model, x: &Quintuple, t: f64, dt: f64) -> Result<([f64; 5], [f64; 5])> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let y = x.y;
    let b = model.drift(t, y, x.y_g1, x.y_g2)?;
    let a = model.diffusion(t, y, x.y_h1, x.y_h2)?;
    let sq = dt.sqrt();
    let mean = [y + b * dt, x.y_g1 + model.g1(t, y)? * dt, x.y_g2, x.y_h1 + model.h1(t, y)? * dt, x.y_h2];
    let spread = [a * sq, 0.0, model.g2(t, y)? * sq, 0.0, model.h2(t, y)? * sq];
    Ok((mean, spread))
}

/// x + (b, g1, 0, h1, 0) Δ + (a, 0, g2, 0, h2) √Δ z, coefficients at (t, x).
pub fn euler_operator(model: &dyn Model, x: &Quintuple, z: f64, t: f64, dt: f64) -> Result<Quintuple> {
    let (m, s) = euler_parts(model, x, t, dt)?;
    Ok(Quintuple::from_array(std::array::from_fn(|c| m[c] + z * s[c])))
}

/// How the Gaussian increment is integrated in each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZQuadrature {
    /// Closed-form Gaussian integrals over the Voronoi intervals of each line.
    #[default]
    Exact,
    /// K-node Gauss–Hermite atoms per grid point.
    GaussHermite,
}

impl FromStr for ZQuadrature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(Self::Exact),
            "gauss-hermite" | "hermite" | "gh" => Ok(Self::GaussHermite),
            other => Err(Error::InvalidArgument(format!("unknown quadrature '{other}' (exact|gauss-hermite)"))),
        }
    }
}

impl fmt::Display for ZQuadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::GaussHermite => "gauss-hermite",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmqConfig {
    /// Grid size N shared by all steps.
    pub level: usize,
    /// Gauss–Hermite nodes K (atoms, and the warm-start images).
    pub quad_nodes: usize,
    pub lloyd_iterations: usize,
    /// Lloyd stops once the relative distortion decrease falls below this.
    pub tolerance: f64,
    /// Per-component weights of the squared distance.
    pub scales: [f64; 5],
    pub quadrature: ZQuadrature,
}

impl Default for RmqConfig {
    fn default() -> Self {
        Self {
            level: 32,
            quad_nodes: 16,
            lloyd_iterations: 2000,
            tolerance: 1e-9,
            scales: [1.0; 5],
            quadrature: ZQuadrature::Exact,
        }
    }
}

impl RmqConfig {
    fn check(&self) -> Result<()> {
        if self.level == 0 || self.quad_nodes == 0 || self.lloyd_iterations == 0 {
            return Err(Error::InvalidArgument("level, quad_nodes and lloyd_iterations must be positive".into()));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || self.scales.iter().all(|s| *s == 0.0) {
            return Err(Error::InvalidArgument("distance scales must be finite, nonnegative and not all zero".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument("Lloyd tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmqGrid {
    pub step: usize,
    pub t: f64,
    pub points: Vec<Quintuple>,
    pub weights: Vec<f64>,
    /// Row j: conditional law on this grid given point j of the previous grid.
    pub transitions: Vec<Vec<f64>>,
    /// Quadratic distortion of the Euler image law against this grid.
    pub distortion: f64,
    /// Distortion after each Lloyd partition.
    pub distortion_history: Vec<f64>,
}

impl RmqGrid {
    fn origin(model: &dyn Model) -> Self {
        Self {
            step: 0,
            t: 0.0,
            points: vec![Quintuple::initial(model)],
            weights: vec![1.0],
            transitions: Vec::new(),
            distortion: 0.0,
            distortion_history: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Piece of the image law: `weight · cond` of mass spread as m + z s.
struct Line {
    mean: [f64; 5],
    spread: [f64; 5],
    weight: f64,
    cond: f64,
    source: usize,
}

fn dot(scales: &[f64; 5], a: &[f64; 5], b: &[f64; 5]) -> f64 {
    (0..5).map(|c| scales[c] * a[c] * b[c]).sum()
}

fn distance(scales: &[f64; 5], a: &[f64; 5], b: &[f64; 5]) -> f64 {
    (0..5).map(|c| scales[c] * (a[c] - b[c]).powi(2)).sum()
}

/// Nearest point; ties go to the lowest index.
fn nearest(scales: &[f64; 5], x: &[f64; 5], points: &[[f64; 5]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = distance(scales, x, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Consecutive (cell, lo, hi) intervals of z along the line.
fn line_cells(scales: &[f64; 5], line: &Line, points: &[[f64; 5]]) -> Vec<(usize, f64, f64)> {
    let s = &line.spread;
    if dot(scales, s, s) == 0.0 {
        return vec![(nearest(scales, &line.mean, points), f64::NEG_INFINITY, f64::INFINITY)];
    }
    // Far left the winner minimizes <s, p>, then the distance to the mean.
    let proj: Vec<f64> = points.iter().map(|p| dot(scales, s, p)).collect();
    let mut cell = 0;
    for i in 1..points.len() {
        let better = proj[i] < proj[cell]
            || (proj[i] == proj[cell] && distance(scales, &line.mean, &points[i]) < distance(scales, &line.mean, &points[cell]));
        if better {
            cell = i;
        }
    }
    let mut out = Vec::new();
    let mut lo = f64::NEG_INFINITY;
    loop {
        let p = &points[cell];
        // d_cell(z) - d_l(z) = a + b z; l takes over where it turns positive.
        let mut next: Option<(usize, f64, f64)> = None;
        for (l, q) in points.iter().enumerate() {
            if l == cell {
                continue;
            }
            let mut a = 0.0;
            let mut b = 0.0;
            for c in 0..5 {
                let diff = q[c] - p[c];
                a += scales[c] * diff * (2.0 * line.mean[c] - p[c] - q[c]);
                b += 2.0 * scales[c] * diff * s[c];
            }
            if b <= 0.0 {
                continue;
            }
            let z = (-a / b).max(lo);
            let replace = match next {
                None => true,
                Some((m, zm, bm)) => z < zm || (z == zm && (b > bm || (b == bm && l < m))),
            };
            if replace {
                next = Some((l, z, b));
            }
        }
        match next {
            Some((l, z, _)) => {
                out.push((cell, lo, z));
                cell = l;
                lo = z;
            }
            None => {
                out.push((cell, lo, f64::INFINITY));
                return out;
            }
        }
    }
}

fn tail_term(x: f64) -> f64 {
    if x.is_finite() {
        x * pdf(x)
    } else {
        0.0
    }
}

/// Partition statistics of the image law against a set of points.
struct Cells {
    mass: Vec<f64>,
    first: Vec<[f64; 5]>,
    /// Per-axis second moment about the point, unscaled.
    second: Vec<[f64; 5]>,
    transitions: Vec<Vec<f64>>,
    distortion: f64,
}

fn partition(lines: &[Line], points: &[[f64; 5]], scales: &[f64; 5], sources: usize) -> Cells {
    let pieces: Vec<Vec<(usize, f64, f64)>> = lines.par_iter().map(|l| line_cells(scales, l, points)).collect();
    let n = points.len();
    let mut cells = Cells {
        mass: vec![0.0; n],
        first: vec![[0.0; 5]; n],
        second: vec![[0.0; 5]; n],
        transitions: vec![vec![0.0; n]; sources],
        distortion: 0.0,
    };
    for (line, ps) in lines.iter().zip(&pieces) {
        for &(i, lo, hi) in ps {
            let m0 = interval_mass(lo, hi);
            if m0 == 0.0 {
                continue;
            }
            let m1 = pdf(lo) - pdf(hi);
            let m2 = m0 + tail_term(lo) - tail_term(hi);
            let w = line.weight * line.cond;
            cells.transitions[line.source][i] += line.cond * m0;
            cells.mass[i] += w * m0;
            let p = &points[i];
            for c in 0..5 {
                let (mu, s) = (line.mean[c], line.spread[c]);
                let d = mu - p[c];
                cells.first[i][c] += w * (mu * m0 + s * m1);
                let sec = w * (d * d * m0 + 2.0 * d * s * m1 + s * s * m2).max(0.0);
                cells.second[i][c] += sec;
                cells.distortion += scales[c] * sec;
            }
        }
    }
    cells
}

/// One recursion step: quantize the law of ℰ(x̂, Z) with x̂ on `prev`.
pub fn rmq_step(model: &dyn Model, prev: &RmqGrid, t: f64, dt: f64, cfg: &RmqConfig) -> Result<RmqGrid> {
    cfg.check()?;
    let step = prev.step + 1;
    let wrap = |e: Error| match e {
        Error::DegenerateGrid { .. } | Error::InvalidArgument(_) => e,
        other => Error::DegenerateGrid { step, detail: other.to_string() },
    };
    let (nodes, node_weights) = gauss_hermite(cfg.quad_nodes);
    let mut parts = Vec::with_capacity(prev.len());
    for p in &prev.points {
        parts.push(euler_parts(model, p, t, dt).map_err(wrap)?);
    }
    if parts.iter().any(|(m, s)| m.iter().chain(s).any(|v| !v.is_finite())) {
        return Err(Error::DegenerateGrid { step, detail: "non-finite Euler image".into() });
    }

    let mut lines = Vec::new();
    for (j, ((mean, spread), w)) in parts.iter().zip(&prev.weights).enumerate() {
        match cfg.quadrature {
            ZQuadrature::Exact => lines.push(Line { mean: *mean, spread: *spread, weight: *w, cond: 1.0, source: j }),
            ZQuadrature::GaussHermite => {
                for (z, omega) in nodes.iter().zip(&node_weights) {
                    let x = std::array::from_fn(|c| mean[c] + z * spread[c]);
                    lines.push(Line { mean: x, spread: [0.0; 5], weight: *w, cond: *omega, source: j });
                }
            }
        }
    }

    let scales = &cfg.scales;
    let point_masses = lines.iter().all(|l| l.spread.iter().all(|s| *s == 0.0));
    let mut seen = HashSet::new();
    let distinct: Vec<[f64; 5]> = lines.iter().map(|l| l.mean).filter(|m| seen.insert(key(m))).collect();

    let (points, cells, history) = if point_masses && distinct.len() <= cfg.level {
        let cells = partition(&lines, &distinct, scales, prev.len());
        let history = vec![cells.distortion];
        (distinct, cells, history)
    } else {
        let init = warm_start(&parts, &nodes, cfg.level);
        lloyd(&lines, init, prev.len(), cfg, step)?
    };

    // Drop points that attract no mass.
    let keep: Vec<usize> = (0..points.len()).filter(|&i| cells.mass[i] > 0.0).collect();
    let transitions: Vec<Vec<f64>> = cells.transitions.iter().map(|row| keep.iter().map(|&i| row[i]).collect()).collect();
    let mut weights = vec![0.0; keep.len()];
    for (row, w) in transitions.iter().zip(&prev.weights) {
        for (i, p) in row.iter().enumerate() {
            weights[i] += w * p;
        }
    }
    Ok(RmqGrid {
        step,
        t: t + dt,
        points: keep.iter().map(|&i| Quintuple::from_array(points[i])).collect(),
        weights,
        transitions,
        distortion: cells.distortion,
        distortion_history: history,
    })
}

/// Images under z = 0, then under the quadrature nodes by increasing |z|,
/// then under normal quantiles if the grid is still short.
fn warm_start(parts: &[([f64; 5], [f64; 5])], nodes: &[f64], level: usize) -> Vec<[f64; 5]> {
    let mut order: Vec<f64> = nodes.to_vec();
    order.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    let mut quantiles: Vec<f64> = (0..level).map(|i| inv_cdf((i as f64 + 0.5) / level as f64)).collect();
    quantiles.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    order.extend(quantiles);
    let mut seen = HashSet::new();
    let mut points = Vec::with_capacity(level);
    let zs = std::iter::once(0.0).chain(order);
    'fill: for z in zs {
        for (m, s) in parts {
            if points.len() == level {
                break 'fill;
            }
            let x: [f64; 5] = std::array::from_fn(|c| m[c] + z * s[c]);
            if seen.insert(key(&x)) {
                points.push(x);
            }
        }
    }
    points
}

fn lloyd(
    lines: &[Line],
    mut points: Vec<[f64; 5]>,
    sources: usize,
    cfg: &RmqConfig,
    step: usize,
) -> Result<(Vec<[f64; 5]>, Cells, Vec<f64>)> {
    let scales = &cfg.scales;
    let mut cells = partition(lines, &points, scales, sources);
    let mut history = vec![cells.distortion];
    for _ in 0..cfg.lloyd_iterations {
        let empty: Vec<usize> = (0..points.len()).filter(|&i| cells.mass[i] <= 0.0).collect();
        let mut next = points.clone();
        for (i, p) in next.iter_mut().enumerate() {
            if cells.mass[i] > 0.0 {
                *p = cells.first[i].map(|v| v / cells.mass[i]);
            }
        }
        split_heaviest(&cells, &points, &mut next, &empty, scales, step)?;
        let next_cells = partition(lines, &next, scales, sources);
        let before = cells.distortion;
        points = next;
        cells = next_cells;
        history.push(cells.distortion);
        if empty.is_empty() && before - cells.distortion <= cfg.tolerance * before {
            break;
        }
    }
    // Emit the centroids of the last partition: the grid then keeps the
    // mean of the image law whatever the stopping point.
    for (i, p) in points.iter_mut().enumerate() {
        if cells.mass[i] > 0.0 {
            let c = cells.first[i].map(|v| v / cells.mass[i]);
            let shift = distance(scales, &c, p);
            cells.distortion = (cells.distortion - cells.mass[i] * shift).max(0.0);
            *p = c;
        }
    }
    history.push(cells.distortion);
    Ok((points, cells, history))
}

/// Places each empty cell's point next to the heaviest splittable cell's
/// centroid, offset along that cell's direction of largest spread.
fn split_heaviest(
    cells: &Cells,
    old: &[[f64; 5]],
    next: &mut [[f64; 5]],
    empty: &[usize],
    scales: &[f64; 5],
    step: usize,
) -> Result<()> {
    if empty.is_empty() {
        return Ok(());
    }
    let n = old.len();
    // Scaled per-axis variance mass about the centroid.
    let var: Vec<[f64; 5]> = (0..n)
        .map(|i| {
            std::array::from_fn(|c| {
                let shift = next[i][c] - old[i][c];
                scales[c] * (cells.second[i][c] - cells.mass[i] * shift * shift).max(0.0)
            })
        })
        .collect();
    let mut used = vec![false; n];
    for &e in empty {
        let donor = (0..n)
            .filter(|&i| !used[i] && cells.mass[i] > 0.0 && var[i].iter().any(|v| *v > 0.0))
            .max_by(|&a, &b| cells.mass[a].total_cmp(&cells.mass[b]).then(b.cmp(&a)));
        let Some(donor) = donor else {
            return Err(Error::DegenerateGrid { step, detail: "no cell left to split".into() });
        };
        used[donor] = true;
        let axis = (0..5).max_by(|&a, &b| var[donor][a].total_cmp(&var[donor][b]).then(b.cmp(&a))).unwrap_or(0);
        let spread = (var[donor][axis] / cells.mass[donor] / scales[axis]).sqrt();
        let mut p = next[donor];
        p[axis] += 1e-6 * spread.max(f64::MIN_POSITIVE);
        next[e] = p;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RmqState {
    pub model_name: String,
    pub horizon: f64,
    pub steps: usize,
    pub level: usize,
    pub grids: Vec<RmqGrid>,
}

/// Grids for steps 0..=n of the Euler chain on [0, T].
pub fn run_rmq(model: &dyn Model, horizon: f64, steps: usize, cfg: &RmqConfig) -> Result<RmqState> {
    cfg.check()?;
    if steps == 0 || !(horizon > 0.0) {
        return Err(Error::InvalidArgument("need steps ≥ 1 and a positive horizon".into()));
    }
    let times = time_grid(horizon, steps);
    let mut grids = vec![RmqGrid::origin(model)];
    for k in 0..steps {
        let mut next = rmq_step(model, &grids[k], times[k], times[k + 1] - times[k], cfg)?;
        next.t = times[k + 1];
        grids.push(next);
    }
    Ok(RmqState { model_name: model.name().to_string(), horizon, steps, level: cfg.level, grids })
}

impl RmqState {
    pub fn grid(&self, k: usize) -> Result<&RmqGrid> {
        self.grids.get(k).ok_or_else(|| Error::Index(format!("step {k} beyond {}", self.steps)))
    }

    /// Σ_j w_j f(x_j) on grid k.
    pub fn marginal_expectation(&self, k: usize, payoff: impl Fn(&Quintuple) -> f64) -> Result<f64> {
        let g = self.grid(k)?;
        Ok(g.points.iter().zip(&g.weights).map(|(p, w)| w * payoff(p)).sum())
    }

    /// Weights of grid k obtained by chaining the transition matrices from the start.
    pub fn chained_weights(&self, k: usize) -> Result<Vec<f64>> {
        self.grid(k)?;
        let mut w = vec![1.0];
        for g in &self.grids[1..=k] {
            let mut next = vec![0.0; g.len()];
            for (row, wj) in g.transitions.iter().zip(&w) {
                for (i, p) in row.iter().enumerate() {
                    next[i] += wj * p;
                }
            }
            w = next;
        }
        Ok(w)
    }

    /// `k,j,weight,y,y_g1,y_g2,y_h1,y_h2` for every step.
    pub fn write_grids_csv(&self, out: &mut impl Write) -> Result<()> {
        let io = |e| Error::io("<grid csv>", e);
        writeln!(out, "k,j,weight,y,y_g1,y_g2,y_h1,y_h2").map_err(io)?;
        for g in &self.grids {
            for (j, (p, w)) in g.points.iter().zip(&g.weights).enumerate() {
                writeln!(out, "{},{j},{w},{},{},{},{},{}", g.step, p.y, p.y_g1, p.y_g2, p.y_h1, p.y_h2).map_err(io)?;
            }
        }
        Ok(())
    }

    /// `k,from,to,prob`, nonzero entries only.
    pub fn write_transitions_csv(&self, out: &mut impl Write) -> Result<()> {
        let io = |e| Error::io("<transitions csv>", e);
        writeln!(out, "k,from,to,prob").map_err(io)?;
        for g in &self.grids[1..] {
            for (from, row) in g.transitions.iter().enumerate() {
                for (to, p) in row.iter().enumerate() {
                    if *p > 0.0 {
                        writeln!(out, "{},{from},{to},{p}", g.step).map_err(io)?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BlancModel, BlancParams, FnModel};
    use crate::quant1d::Quantizer1D;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn desk() -> BlancParams {
        BlancParams { beta0: 0.04, beta1: 0.1, beta2: 0.5, alpha: 0.1, lambda1: 2.0, lambda2: 1.0, r10: 0.3, r20: 0.04 }
    }

    fn blanc() -> BlancModel {
        BlancModel::new(desk()).unwrap()
    }

    fn cfg(level: usize, k: usize) -> RmqConfig {
        RmqConfig { level, quad_nodes: k, ..RmqConfig::default() }
    }

    fn hermite(level: usize, k: usize) -> RmqConfig {
        RmqConfig { quadrature: ZQuadrature::GaussHermite, ..cfg(level, k) }
    }

    #[test]
    fn euler_operator_rows() {
        let flat = FnModel::new("zero", 0.3);
        let x = Quintuple { y: 0.3, y_g1: 1.0, y_g2: 2.0, y_h1: 3.0, y_h2: 4.0 };
        assert_eq!(euler_operator(&flat, &x, 0.0, 0.0, 0.1).unwrap(), x);
        let m = blanc();
        let next = euler_operator(&m, &x, 0.0, 0.2, 0.1).unwrap();
        assert_eq!(next.y_g2, x.y_g2);
        assert_eq!(next.y_h2, x.y_h2);

        // first step from the deterministic start
        let p = desk();
        let (z, dt) = (0.7, 0.02);
        let x0 = Quintuple::initial(&m);
        let x1 = euler_operator(&m, &x0, z, 0.0, dt).unwrap();
        let y0 = p.y0();
        let b0 = (p.beta1 * p.lambda1 * p.lambda1 + p.beta2 * p.lambda2) * y0
            - p.beta2 * p.lambda2 * p.r20
            - 2.0 * p.beta1 * p.lambda1 * p.r10 * (p.r10 - p.alpha);
        let a0 = 2.0 * p.beta1 * p.lambda1 * (p.r10 - p.alpha) * y0.sqrt();
        assert_relative_eq!(x1.y, y0 + b0 * dt + a0 * dt.sqrt() * z, epsilon = 1e-15);
        assert_relative_eq!(x1.y_g1, y0 * dt, epsilon = 1e-16);
        assert_relative_eq!(x1.y_g2, y0.sqrt() * dt.sqrt() * z, epsilon = 1e-16);
        assert_eq!(x1.y_h1, 0.0);
        assert_relative_eq!(x1.y_h2, y0.sqrt() * dt.sqrt() * z, epsilon = 1e-16);
        assert!(euler_operator(&m, &x0, z, 0.0, 0.0).is_err());
    }

    #[test]
    fn quadrature_names() {
        assert_eq!("exact".parse::<ZQuadrature>().unwrap(), ZQuadrature::Exact);
        assert_eq!("Gauss-Hermite".parse::<ZQuadrature>().unwrap(), ZQuadrature::GaussHermite);
        assert!("simpson".parse::<ZQuadrature>().is_err());
        assert_eq!(ZQuadrature::GaussHermite.to_string(), "gauss-hermite");
    }

    fn check_consistency(state: &RmqState) {
        for (k, g) in state.grids.iter().enumerate() {
            assert!(g.len() <= state.level.max(1));
            assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(g.weights.iter().all(|w| *w >= 0.0));
            for row in &g.transitions {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            let chained = state.chained_weights(k).unwrap();
            for (a, b) in chained.iter().zip(&g.weights) {
                assert!((a - b).abs() < 1e-10);
            }
            for w in g.distortion_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", g.distortion_history);
            }
        }
    }

    #[test]
    fn single_step_from_start() {
        let m = FnModel::brownian(0.0, 1.0);
        let state = run_rmq(&m, 1.0, 1, &RmqConfig { tolerance: 0.0, lloyd_iterations: 20_000, ..cfg(8, 16) }).unwrap();
        assert_eq!(state.grids.len(), 2);
        assert_eq!(state.grids[0].points, vec![Quintuple::default()]);
        let g = &state.grids[1];
        assert_eq!(g.len(), 8);
        // a single Gaussian line: the grid is the optimal scalar quantizer
        let q = Quantizer1D::optimize(8, 1e-12, 1000).unwrap();
        let mut ys: Vec<f64> = g.points.iter().map(|p| p.y).collect();
        ys.sort_by(f64::total_cmp);
        for (a, b) in ys.iter().zip(q.grid()) {
            assert!((a - b).abs() < 1e-6, "{ys:?}");
        }
        assert_relative_eq!(g.distortion, q.distortion(), max_relative = 1e-8);
        check_consistency(&state);
    }

    #[test]
    fn constant_model_matches_gaussian_quantizer() {
        let (s, y0, n) = (0.5, 1.0, 5);
        let m = FnModel::brownian(y0, s);
        for level in [8, 16, 32] {
            let state = run_rmq(&m, 1.0, n, &cfg(level, 16)).unwrap();
            check_consistency(&state);
            let optimal = Quantizer1D::optimize(level, 1e-12, 1000).unwrap().distortion();
            for g in &state.grids[1..] {
                let scale = s * g.t.sqrt();
                let mut ys: Vec<f64> = g.points.iter().map(|p| (p.y - y0) / scale).collect();
                ys.sort_by(f64::total_cmp);
                let achieved = Quantizer1D::from_grid(ys).unwrap().distortion();
                assert!(achieved <= 1.1 * optimal, "level {level} step {}: {achieved} vs {optimal}", g.step);
            }
            let mean = state.marginal_expectation(n, |p| p.y).unwrap();
            assert!((mean - y0).abs() < 1e-8, "{mean}");
        }
    }

    #[test]
    fn deterministic_model_collapses() {
        let m = FnModel::new("decay", 1.0).with_drift(|_, y, _, _| -y);
        for c in [cfg(4, 8), hermite(4, 8)] {
            let state = run_rmq(&m, 1.0, 10, &c).unwrap();
            let mut y = 1.0;
            for g in &state.grids[1..] {
                y -= 0.1 * y;
                assert_eq!(g.len(), 1);
                assert_relative_eq!(g.points[0].y, y, epsilon = 1e-14);
                assert!(g.transitions.iter().flatten().all(|p| *p == 0.0 || (p - 1.0).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn atom_weights_match_brute_force_mixture() {
        let m = blanc();
        let state = run_rmq(&m, 0.5, 4, &RmqConfig { tolerance: 0.0, ..hermite(6, 5) }).unwrap();
        check_consistency(&state);
        let (z, w) = gauss_hermite(5);
        for k in 1..=4 {
            let prev = &state.grids[k - 1];
            let g = &state.grids[k];
            let pts: Vec<[f64; 5]> = g.points.iter().map(|p| p.to_array()).collect();
            let mut brute = vec![0.0; pts.len()];
            for (p, wp) in prev.points.iter().zip(&prev.weights) {
                for (zq, wq) in z.iter().zip(&w) {
                    let x = euler_operator(&m, p, *zq, prev.t, g.t - prev.t).unwrap().to_array();
                    let mut best = (0, f64::INFINITY);
                    for (i, q) in pts.iter().enumerate() {
                        let d: f64 = (0..5).map(|c| (x[c] - q[c]).powi(2)).sum();
                        if d < best.1 {
                            best = (i, d);
                        }
                    }
                    brute[best.0] += wp * wq;
                }
            }
            for (a, b) in brute.iter().zip(&g.weights) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn line_weights_match_numerical_integration() {
        let m = blanc();
        let state = run_rmq(&m, 0.5, 3, &RmqConfig { tolerance: 0.0, lloyd_iterations: 5000, ..cfg(6, 8) }).unwrap();
        let k = 3;
        let prev = &state.grids[k - 1];
        let g = &state.grids[k];
        let pts: Vec<[f64; 5]> = g.points.iter().map(|p| p.to_array()).collect();
        let mut brute = vec![0.0; pts.len()];
        let (lo, hi, steps) = (-9.0, 9.0, 200_000);
        let h = (hi - lo) / steps as f64;
        for (p, wp) in prev.points.iter().zip(&prev.weights) {
            for s in 0..steps {
                let z = lo + (s as f64 + 0.5) * h;
                let x = euler_operator(&m, p, z, prev.t, g.t - prev.t).unwrap().to_array();
                brute[nearest(&[1.0; 5], &x, &pts)] += wp * pdf(z) * h;
            }
        }
        // midpoint rule with jumps at the cell boundaries: O(h) accurate
        for (a, b) in brute.iter().zip(&g.weights) {
            assert!((a - b).abs() < 5e-5, "{brute:?} {:?}", g.weights);
        }
    }

    #[test]
    fn line_cells_partition_the_line() {
        let pts = [[0.0, 0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0, 0.0], [2.0, -1.0, 0.0, 0.0, 0.0], [-1.0, 0.5, 0.0, 0.0, 0.0]];
        let line = Line { mean: [0.3, 0.1, 0.0, 0.0, 0.0], spread: [1.0, 0.2, 0.0, 0.0, 0.0], weight: 1.0, cond: 1.0, source: 0 };
        let cells = line_cells(&[1.0; 5], &line, &pts);
        assert_eq!(cells.first().unwrap().1, f64::NEG_INFINITY);
        assert_eq!(cells.last().unwrap().2, f64::INFINITY);
        for w in cells.windows(2) {
            assert_eq!(w[0].2, w[1].1);
        }
        for &(i, lo, hi) in &cells {
            let z = if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                lo + 1.0
            } else {
                hi - 1.0
            };
            let x: [f64; 5] = std::array::from_fn(|c| line.mean[c] + z * line.spread[c]);
            assert_eq!(nearest(&[1.0; 5], &x, &pts), i);
        }
    }

    #[test]
    fn blanc_without_trend_follows_scalar_ode() {
        let p = BlancParams { beta1: 0.0, ..desk() };
        let m = BlancModel::new(p).unwrap();
        let r_star = p.beta0 / (1.0 - p.beta2);
        let max_error = |n: usize| {
            let state = run_rmq(&m, 1.0, n, &cfg(16, 8)).unwrap();
            check_consistency(&state);
            let mut worst: f64 = 0.0;
            for g in &state.grids {
                let r2 = r_star + (p.r20 - r_star) * (p.lambda2 * (p.beta2 - 1.0) * g.t).exp();
                let y = p.beta0 + p.beta2 * r2;
                for q in &g.points {
                    worst = worst.max((q.y - y).abs());
                }
            }
            worst
        };
        let (e1, e2) = (max_error(25), max_error(50));
        assert!(e1 < p.y0() / 25.0, "{e1}");
        assert!((e2 / e1 - 0.5).abs() < 0.1, "{e1} {e2}");
    }

    #[test]
    fn distortion_falls_with_level() {
        let m = blanc();
        for c in [cfg(1, 16), hermite(1, 16)] {
            let d: Vec<f64> = [16, 32, 64]
                .iter()
                .map(|&n| run_rmq(&m, 1.0, 5, &RmqConfig { level: n, ..c.clone() }).unwrap().grids[5].distortion)
                .collect();
            assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
        }
    }

    #[test]
    fn quadrature_refinement_is_stable() {
        let m = blanc();
        let smooth = |p: &Quintuple| p.y;
        let e = |c: RmqConfig| run_rmq(&m, 1.0, 10, &c).unwrap().marginal_expectation(10, smooth).unwrap();
        let (a, b) = (e(cfg(32, 16)), e(cfg(32, 32)));
        assert!((a - b).abs() < 1e-4, "{a} {b}");
    }

    #[test]
    fn expectations() {
        let m = blanc();
        let state = run_rmq(&m, 1.0, 5, &cfg(16, 8)).unwrap();
        assert_relative_eq!(state.marginal_expectation(3, |_| 1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(state.marginal_expectation(0, |p| p.y).unwrap(), m.params().y0());
        assert!(state.marginal_expectation(6, |p| p.y).is_err());
    }

    #[test]
    fn csv_output() {
        let m = blanc();
        let state = run_rmq(&m, 1.0, 2, &cfg(4, 4)).unwrap();
        let mut buf = Vec::new();
        state.write_grids_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,j,weight,y,y_g1,y_g2,y_h1,y_h2\n0,0,1,"));
        assert_eq!(text.lines().count(), 1 + 1 + state.grids[1].len() + state.grids[2].len());
        let mut buf = Vec::new();
        state.write_transitions_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,from,to,prob\n1,0,"));
    }

    #[test]
    fn bad_config() {
        let m = blanc();
        assert!(run_rmq(&m, 1.0, 0, &cfg(4, 4)).is_err());
        assert!(run_rmq(&m, 1.0, 2, &cfg(0, 4)).is_err());
        assert!(run_rmq(&m, 1.0, 2, &RmqConfig { scales: [0.0; 5], ..cfg(4, 4) }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn chained_weights_and_monotone_lloyd(
            beta1 in 0.0f64..0.3,
            lambda1 in 0.5f64..5.0,
            r10 in -0.5f64..0.5,
            level in 2usize..12,
            gh in any::<bool>(),
        ) {
            let m = BlancModel::new(BlancParams { beta1, lambda1, r10, ..desk() }).unwrap();
            let c = if gh { hermite(level, 6) } else { cfg(level, 6) };
            let state = run_rmq(&m, 0.5, 4, &c).unwrap();
            check_consistency(&state);
        }
    }
}
