//! Functional and recursive marginal quantization for path-dependent
//! volatility models.

pub mod brownian;
pub mod engine;
pub mod error;
pub mod models;
pub mod normal;
pub mod pricing;
pub mod quant1d;
pub mod rmq;

pub use brownian::{allocate_levels, BitAllocation, Codeword, KlBasis, MultiIndex, ProductQuantizer};
pub use error::{Error, Result};
pub use quant1d::{GridCache, Quantizer1D};
pub use models::{BlancModel, BlancParams, FnModel, GuyonModel, GuyonParams, Model, PlatenModel, PlatenParams};
pub use engine::{integrate_bundle, integrate_codeword, Bundle, CodewordPath, CodewordState, Integrator};
pub use rmq::{euler_operator, rmq_step, run_rmq, Quintuple, RmqConfig, RmqGrid, RmqState, ZQuadrature};
pub use pricing::{price_zcb_fq, price_zcb_mc, terminal_distribution, ExponentForm, MarketParams, PriceResult, PricingMethod};
