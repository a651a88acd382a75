use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use pathquant::engine::LOST_WEIGHT_TOLERANCE;
use pathquant::models::Violation;
use pathquant::pricing::{platen_bundle, price_from_bundle, terminal_distribution_from_bundle};
use pathquant::quant1d::CacheSource;
use pathquant::{
    integrate_bundle, price_zcb_mc, run_rmq, BitAllocation, BlancModel, ExponentForm, GridCache, GuyonModel,
    MarketParams, Model, PlatenModel, PlatenParams, PriceResult, ProductQuantizer, Quintuple, RmqConfig,
};

use crate::config::{Allocation, ModelSpec, RunConfig, Scheme};
use crate::exit::Failure;
use crate::output::OutputDir;

pub const CACHE_ENV: &str = "PATHQUANT_CACHE";

/// `PATHQUANT_CACHE`, else the configured directory, else memory only.
fn grid_cache(cfg: &RunConfig) -> anyhow::Result<GridCache> {
    let dir = std::env::var_os(CACHE_ENV).map(PathBuf::from).or_else(|| cfg.quantizer.cache.clone());
    Ok(match dir {
        Some(dir) => GridCache::with_dir(dir)?,
        None => GridCache::new(),
    })
}

fn warn(violations: &[Violation]) {
    for v in violations.iter().filter(|v| !v.is_error()) {
        eprintln!("{v}");
    }
}

/// `a..b` or `a..=b` (both inclusive), a single level, or a comma list.
pub fn parse_levels(s: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::validation(format!("bad level range `{s}`"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let levels: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let range: RangeInclusive<usize> = num(a)?..=num(b.trim_start_matches('='))?;
        range.collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if levels.is_empty() || levels.contains(&0) {
        return Err(bad());
    }
    Ok(levels)
}

pub fn grids(levels: &[usize], dir: &Path) -> anyhow::Result<()> {
    let io = |e: pathquant::Error| Failure::io(e.to_string());
    let cache = GridCache::with_dir(dir).map_err(io)?;
    let (mut computed, mut cached) = (0, 0);
    for &level in levels {
        match cache.fetch(level).map_err(io)?.1 {
            CacheSource::Computed => computed += 1,
            CacheSource::Disk | CacheSource::Memory => cached += 1,
        }
    }
    eprintln!("{} grids in {}: {computed} computed, {cached} cached", levels.len(), dir.display());
    Ok(())
}

fn product_quantizer(cfg: &RunConfig, horizon: f64, cache: &GridCache) -> pathquant::Result<ProductQuantizer> {
    match &cfg.quantizer.allocation {
        Allocation::Budget(n) => ProductQuantizer::with_budget(horizon, *n, cache),
        Allocation::Levels(l) => ProductQuantizer::new(horizon, BitAllocation::explicit(l, None)?, cache),
    }
}

fn single_platen(params: &PlatenParams, lambdas: &[f64]) -> anyhow::Result<PlatenModel> {
    if lambdas.len() != 1 {
        return Err(Failure::validation("`model.lambda` must be a single value for this command").into());
    }
    warn(&params.validate());
    Ok(PlatenModel::new(*params)?)
}

/// Model for the codeword and RMQ commands.
fn build_model(spec: &ModelSpec) -> anyhow::Result<Box<dyn Model>> {
    Ok(match spec {
        ModelSpec::Platen { params, lambdas } => Box::new(single_platen(params, lambdas)?),
        ModelSpec::Guyon(p) => {
            warn(&p.validate());
            Box::new(GuyonModel::new(*p)?)
        }
        ModelSpec::Blanc(p) => {
            warn(&p.validate());
            Box::new(BlancModel::new(*p)?)
        }
    })
}

pub fn quantize(cfg: &RunConfig) -> anyhow::Result<()> {
    let horizon = cfg.horizon()?;
    let model = build_model(&cfg.model)?;
    let cache = grid_cache(cfg)?;
    let pq = product_quantizer(cfg, horizon, &cache)?;
    let out = OutputDir::acquire(&cfg.output.dir, &cfg.hash())?;
    let mut bundle = integrate_bundle(model.as_ref(), &pq, cfg.scheme.steps, cfg.scheme.integrator)?;
    for f in &bundle.failures {
        eprintln!("warning: codeword {} (weight {:e}) dropped: {}", f.flat_index, f.weight, f.error);
    }
    bundle.apply_loss_policy(LOST_WEIGHT_TOLERANCE)?;
    let path = out.write_csv("bundle.csv", |w| Ok(bundle.write_csv(w)?))?;
    eprintln!("{} codewords written to {}", bundle.paths.len(), path.display());
    Ok(())
}

pub fn price(cfg: &RunConfig) -> anyhow::Result<()> {
    let ModelSpec::Platen { params, lambdas } = &cfg.model else {
        return Err(Failure::validation(format!("pricing needs the platen model, got {}", cfg.model.name())).into());
    };
    let s0 = cfg.market.s0.ok_or_else(|| Failure::validation("missing parameter `market.s0`"))?;
    let rate = cfg.market.rate.ok_or_else(|| Failure::validation("missing parameter `market.rate`"))?;
    let methods: Vec<_> = cfg.scheme.methods.iter().filter_map(Scheme::pricing).collect();
    if methods.is_empty() || methods.len() != cfg.scheme.methods.len() {
        return Err(Failure::validation("`scheme.method` must list fq and/or mc for pricing").into());
    }
    let models = lambdas
        .iter()
        .map(|&lambda| {
            let p = PlatenParams { lambda, ..*params };
            warn(&p.validate());
            PlatenModel::new(p).map(|m| (lambda, m))
        })
        .collect::<pathquant::Result<Vec<_>>>()?;
    let markets = cfg
        .market
        .horizons
        .iter()
        .map(|&t| MarketParams::new(s0, rate, t, cfg.scheme.steps))
        .collect::<pathquant::Result<Vec<_>>>()?;
    let cache = grid_cache(cfg)?;
    let out = OutputDir::acquire(&cfg.output.dir, &cfg.hash())?;

    let mut rows = Vec::new();
    for (lambda, model) in &models {
        for mkt in &markets {
            for method in &methods {
                let result = match method {
                    pathquant::PricingMethod::Fq => {
                        let start = Instant::now();
                        let pq = product_quantizer(cfg, mkt.horizon, &cache)?;
                        let bundle = platen_bundle(model, &pq, mkt, cfg.scheme.integrator)?;
                        let mut r = price_from_bundle(model, &bundle, mkt, ExponentForm::Codeword)?;
                        r.runtime = start.elapsed();
                        let law = terminal_distribution_from_bundle(model, &bundle, mkt)?;
                        out.write_csv(&format!("terminal_lambda{lambda}_T{}.csv", mkt.horizon), |w| {
                            writeln!(w, "value,weight")?;
                            for (v, p) in &law {
                                writeln!(w, "{v},{p}")?;
                            }
                            Ok(())
                        })?;
                        r
                    }
                    pathquant::PricingMethod::Mc => price_zcb_mc(model, mkt, cfg.scheme.paths, cfg.scheme.seed)?,
                };
                report_clamps(&result, *lambda, mkt);
                rows.push(result.csv_row(*lambda, mkt, cfg.output.timing));
            }
        }
    }
    let path = out.write_csv("prices.csv", |w| {
        writeln!(w, "{}", PriceResult::CSV_HEADER)?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    eprintln!("{} prices written to {}", rows.len(), path.display());
    Ok(())
}

fn report_clamps(r: &PriceResult, lambda: f64, mkt: &MarketParams) {
    if r.clamps.clamps > 0 {
        eprintln!(
            "warning: {} λ={lambda} T={}: {} of {} square roots clamped",
            r.method, mkt.horizon, r.clamps.clamps, r.clamps.evaluations
        );
    }
}

/// Payoff for `--expect`: one coordinate of the grid point.
pub fn component(name: &str) -> Result<fn(&Quintuple) -> f64, Failure> {
    Ok(match name {
        "y" => |p| p.y,
        "y_g1" => |p| p.y_g1,
        "y_g2" => |p| p.y_g2,
        "y_h1" => |p| p.y_h1,
        "y_h2" => |p| p.y_h2,
        other => return Err(Failure::validation(format!("unknown component `{other}` (expected y, y_g1, y_g2, y_h1, y_h2)"))),
    })
}

pub fn rmq(cfg: &RunConfig, expect: Option<(&str, usize)>) -> anyhow::Result<()> {
    let horizon = cfg.horizon()?;
    let Allocation::Budget(level) = cfg.quantizer.allocation else {
        return Err(Failure::validation("rmq needs `quantizer.budget` as the grid size").into());
    };
    let payoff = expect.map(|(name, k)| component(name).map(|f| (f, k))).transpose()?;
    if let Some((_, k)) = payoff {
        if k > cfg.scheme.steps {
            return Err(Failure::validation(format!("--at {k} is beyond the last step {}", cfg.scheme.steps)).into());
        }
    }
    let model = build_model(&cfg.model)?;
    let rmq_cfg = RmqConfig {
        level,
        quad_nodes: cfg.scheme.quad_nodes,
        quadrature: cfg.scheme.quadrature,
        ..RmqConfig::default()
    };
    let out = OutputDir::acquire(&cfg.output.dir, &cfg.hash())?;
    let state = run_rmq(model.as_ref(), horizon, cfg.scheme.steps, &rmq_cfg).context("recursive quantization")?;
    for g in &state.grids {
        out.write_csv(&format!("rmq_grid_{:03}.csv", g.step), |w| {
            writeln!(w, "k,j,weight,y,y_g1,y_g2,y_h1,y_h2")?;
            for (j, (p, wt)) in g.points.iter().zip(&g.weights).enumerate() {
                writeln!(w, "{},{j},{wt},{},{},{},{},{}", g.step, p.y, p.y_g1, p.y_g2, p.y_h1, p.y_h2)?;
            }
            Ok(())
        })?;
    }
    out.write_csv("rmq_transitions.csv", |w| Ok(state.write_transitions_csv(w)?))?;
    eprintln!("{} grids written to {}", state.grids.len(), cfg.output.dir.display());
    if let Some((f, k)) = payoff {
        println!("{}", state.marginal_expectation(k, f)?);
    }
    Ok(())
}
