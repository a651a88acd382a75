//! Run configuration: a flat INI file with sections `model`, `quantizer`,
//! `scheme`, `market` and `output`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ini::Ini;
use pathquant::{BlancParams, GuyonParams, Integrator, PlatenParams, PricingMethod, ZQuadrature};
use sha2::{Digest, Sha256};

use crate::exit::Failure;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// `lambda` may list several speeds; the rest of `params` is shared.
    Platen { params: PlatenParams, lambdas: Vec<f64> },
    Guyon(GuyonParams),
    Blanc(BlancParams),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Platen { .. } => "platen",
            Self::Guyon(_) => "guyon",
            Self::Blanc(_) => "blanc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Allocation {
    Budget(usize),
    Levels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSection {
    pub allocation: Allocation,
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    Fq,
    Mc,
    Rmq,
}

impl Scheme {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fq" => Some(Self::Fq),
            "mc" => Some(Self::Mc),
            "rmq" => Some(Self::Rmq),
            _ => None,
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Self::Fq => "fq",
            Self::Mc => "mc",
            Self::Rmq => "rmq",
        }
    }

    pub fn pricing(&self) -> Option<PricingMethod> {
        match self {
            Self::Fq => Some(PricingMethod::Fq),
            Self::Mc => Some(PricingMethod::Mc),
            Self::Rmq => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSection {
    pub methods: Vec<Scheme>,
    pub steps: usize,
    pub integrator: Integrator,
    pub quad_nodes: usize,
    pub quadrature: ZQuadrature,
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketSection {
    pub s0: Option<f64>,
    pub rate: Option<f64>,
    pub horizons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub quantizer: QuantizerSection,
    pub scheme: SchemeSection,
    pub market: MarketSection,
    pub output: OutputSection,
}

const SECTIONS: [&str; 5] = ["model", "quantizer", "scheme", "market", "output"];

/// Key/value pairs of one section; every lookup consumes its key so leftovers
/// can be reported as unknown.
struct Section {
    name: &'static str,
    values: BTreeMap<String, String>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn missing(&self, key: &str) -> Failure {
        Failure::validation(format!("missing parameter `{}.{key}`", self.name))
    }

    fn invalid(&self, key: &str, value: &str, what: &str) -> Failure {
        Failure::validation(format!("`{}.{key}` = `{value}` is not {what}", self.name))
    }

    fn f64(&mut self, key: &str) -> Result<f64, Failure> {
        let v = self.take(key).ok_or_else(|| self.missing(key))?;
        v.trim().parse().map_err(|_| self.invalid(key, &v, "a number"))
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, Failure> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.trim().parse().map(Some).map_err(|_| self.invalid(key, &v, "a number")),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Result<Vec<T>, Failure> {
        let v = self.take(key).ok_or_else(|| self.missing(key))?;
        let items: Result<Vec<T>, _> = v.split(',').map(|s| s.trim().parse()).collect();
        match items {
            Ok(items) if !items.is_empty() => Ok(items),
            _ => Err(self.invalid(key, &v, what)),
        }
    }

    fn parsed_or<T: std::str::FromStr>(&mut self, key: &str, default: T, what: &str) -> Result<T, Failure> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|_| self.invalid(key, &v, what)),
        }
    }

    fn finish(self) -> Result<(), Failure> {
        match self.values.keys().next() {
            None => Ok(()),
            Some(k) => Err(Failure::validation(format!("unknown parameter `{}.{k}`", self.name))),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let ini = Ini::load_from_str(text).map_err(|e| Failure::validation(format!("malformed config: {e}")))?;
        let mut sections: BTreeMap<&'static str, Section> = SECTIONS
            .iter()
            .map(|&name| (name, Section { name, values: BTreeMap::new() }))
            .collect();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if props.is_empty() {
                    continue;
                }
                return Err(Failure::validation("keys outside of a section"));
            };
            let section = sections
                .get_mut(name.trim())
                .ok_or_else(|| Failure::validation(format!("unknown section `[{name}]`")))?;
            for (k, v) in props.iter() {
                section.values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let mut take = |name| sections.remove(name).expect("known section");
        let model = parse_model(take("model"))?;
        let quantizer = parse_quantizer(take("quantizer"))?;
        let scheme = parse_scheme(take("scheme"))?;
        let market = parse_market(take("market"))?;
        let output = parse_output(take("output"))?;
        Ok(Self { model, quantizer, scheme, market, output })
    }

    /// Canonical text form; `parse(to_ini())` reproduces the config.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        s.push_str("[model]\n");
        s.push_str(&format!("name = {}\n", self.model.name()));
        match &self.model {
            ModelSpec::Platen { params: p, lambdas } => {
                let _ = write!(
                    s,
                    "alpha = {}\nbeta = {}\nsigma = {}\nxi = {}\nlambda = {}\neta = {}\ny0 = {}\n",
                    p.alpha,
                    p.beta,
                    p.sigma,
                    p.xi,
                    join(lambdas),
                    p.eta,
                    p.y0
                );
            }
            ModelSpec::Guyon(p) => {
                let _ = write!(
                    s,
                    "beta0 = {}\nbeta1 = {}\nbeta2 = {}\nlambda1 = {}\nlambda2 = {}\nr10 = {}\nr20 = {}\n",
                    p.beta0, p.beta1, p.beta2, p.lambda1, p.lambda2, p.r10, p.r20
                );
            }
            ModelSpec::Blanc(p) => {
                let _ = write!(
                    s,
                    "beta0 = {}\nbeta1 = {}\nbeta2 = {}\nalpha = {}\nlambda1 = {}\nlambda2 = {}\nr10 = {}\nr20 = {}\n",
                    p.beta0, p.beta1, p.beta2, p.alpha, p.lambda1, p.lambda2, p.r10, p.r20
                );
            }
        }
        s.push_str("\n[quantizer]\n");
        match &self.quantizer.allocation {
            Allocation::Budget(n) => {
                let _ = writeln!(s, "budget = {n}");
            }
            Allocation::Levels(l) => {
                let _ = writeln!(s, "levels = {}", l.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "));
            }
        }
        if let Some(dir) = &self.quantizer.cache {
            let _ = writeln!(s, "cache = {}", dir.display());
        }
        let sc = &self.scheme;
        let methods: Vec<&str> = sc.methods.iter().map(Scheme::as_str).collect();
        let _ = write!(
            s,
            "\n[scheme]\nmethod = {}\nsteps = {}\nintegrator = {}\nquad_nodes = {}\nquadrature = {}\npaths = {}\nseed = {}\n",
            methods.join(", "),
            sc.steps,
            sc.integrator,
            sc.quad_nodes,
            sc.quadrature,
            sc.paths,
            sc.seed
        );
        s.push_str("\n[market]\n");
        if let Some(v) = self.market.s0 {
            let _ = writeln!(s, "s0 = {v}");
        }
        if let Some(v) = self.market.rate {
            let _ = writeln!(s, "rate = {v}");
        }
        let _ = writeln!(s, "horizon = {}", join(&self.market.horizons));
        let _ = write!(s, "\n[output]\ndir = {}\ntiming = {}\n", self.output.dir.display(), self.output.timing);
        s
    }

    /// SHA-256 of the canonical form, hex encoded. The output directory is
    /// left out so identical runs into different places agree.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        Sha256::digest(c.to_ini().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The single horizon of a non-sweeping command.
    pub fn horizon(&self) -> Result<f64, Failure> {
        match self.market.horizons[..] {
            [t] => Ok(t),
            _ => Err(Failure::validation("`market.horizon` must be a single value for this command")),
        }
    }
}

fn parse_model(mut m: Section) -> Result<ModelSpec, Failure> {
    let name = m.take("name").ok_or_else(|| m.missing("name"))?;
    let spec = match name.to_ascii_lowercase().as_str() {
        "platen" => {
            let lambdas = m.list("lambda", "a list of numbers")?;
            let params = PlatenParams {
                alpha: m.f64("alpha")?,
                beta: m.f64("beta")?,
                sigma: m.f64("sigma")?,
                xi: m.f64("xi")?,
                lambda: lambdas[0],
                eta: m.f64("eta")?,
                y0: m.f64("y0")?,
            };
            ModelSpec::Platen { params, lambdas }
        }
        "guyon" => ModelSpec::Guyon(GuyonParams {
            beta0: m.f64("beta0")?,
            beta1: m.f64("beta1")?,
            beta2: m.f64("beta2")?,
            lambda1: m.f64("lambda1")?,
            lambda2: m.f64("lambda2")?,
            r10: m.f64("r10")?,
            r20: m.f64("r20")?,
        }),
        "blanc" => ModelSpec::Blanc(BlancParams {
            beta0: m.f64("beta0")?,
            beta1: m.f64("beta1")?,
            beta2: m.f64("beta2")?,
            alpha: m.f64("alpha")?,
            lambda1: m.f64("lambda1")?,
            lambda2: m.f64("lambda2")?,
            r10: m.f64("r10")?,
            r20: m.f64("r20")?,
        }),
        other => return Err(m.invalid("name", other, "one of platen, guyon, blanc")),
    };
    m.finish()?;
    Ok(spec)
}

fn parse_quantizer(mut q: Section) -> Result<QuantizerSection, Failure> {
    let allocation = match (q.take("budget"), q.values.contains_key("levels")) {
        (Some(_), true) => return Err(Failure::validation("give either `quantizer.budget` or `quantizer.levels`, not both")),
        (Some(b), false) => Allocation::Budget(b.trim().parse().map_err(|_| q.invalid("budget", &b, "a positive integer"))?),
        (None, true) => Allocation::Levels(q.list("levels", "a list of positive integers")?),
        (None, false) => return Err(q.missing("budget")),
    };
    let cache = q.take("cache").map(PathBuf::from);
    q.finish()?;
    Ok(QuantizerSection { allocation, cache })
}

fn parse_scheme(mut s: Section) -> Result<SchemeSection, Failure> {
    let raw = s.take("method").ok_or_else(|| s.missing("method"))?;
    let methods = raw
        .split(',')
        .map(|m| Scheme::parse(m).ok_or_else(|| s.invalid("method", &raw, "a list of fq, mc, rmq")))
        .collect::<Result<Vec<_>, _>>()?;
    let steps = s.take("steps").ok_or_else(|| s.missing("steps"))?;
    let steps = steps.trim().parse().map_err(|_| s.invalid("steps", &steps, "a positive integer"))?;
    let section = SchemeSection {
        methods,
        steps,
        integrator: s.parsed_or("integrator", Integrator::Rk4, "rk4 or euler")?,
        quad_nodes: s.parsed_or("quad_nodes", 16, "a positive integer")?,
        quadrature: s.parsed_or("quadrature", ZQuadrature::Exact, "exact or gauss-hermite")?,
        paths: s.parsed_or("paths", 10_000, "a positive integer")?,
        seed: s.parsed_or("seed", 0, "a nonnegative integer")?,
    };
    s.finish()?;
    Ok(section)
}

fn parse_market(mut m: Section) -> Result<MarketSection, Failure> {
    let section = MarketSection {
        s0: m.opt_f64("s0")?,
        rate: m.opt_f64("rate")?,
        horizons: m.list("horizon", "a list of numbers")?,
    };
    m.finish()?;
    Ok(section)
}

fn parse_output(mut o: Section) -> Result<OutputSection, Failure> {
    let section = OutputSection {
        dir: o.take("dir").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")),
        timing: o.parsed_or("timing", false, "true or false")?,
    };
    o.finish()?;
    Ok(section)
}
