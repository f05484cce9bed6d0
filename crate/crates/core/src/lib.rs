//! Second-order asymptotic approximation of the implied Sharpe ratio of a
//! European call held alongside a dynamic portfolio under exponential
//! utility, for local stochastic volatility models, with independent PDE,
//! Monte Carlo and quadrature references.
//!
//! The main entry point is [`sharpe::implied_sharpe`]:
//!
//! ```
//! use isr_core::model::{HestonParams, ModelSpec};
//! use isr_core::sharpe::{implied_sharpe, Scenario};
//! use isr_core::expansion::ExpansionConfig;
//!
//! let model = ModelSpec::heston(HestonParams::standard()).unwrap();
//! let x = 100f64.ln();
//! let sc = Scenario::at_state(0.0, 6.0 / 52.0, x, 0.04, x, 0.0, 1.0);
//! let s = implied_sharpe(&sc, &model, 2, None, &ExpansionConfig::fast()).unwrap();
//! assert!(s.lambda0 > 0.0 && s.total > 0.0);
//! ```

// Negated comparisons are how NaN inputs get rejected; grid loops index
// several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bskernel;
pub mod error;
pub mod expansion;
pub mod model;
pub mod opalg;
pub mod oracle;
pub mod quad;
pub mod sharpe;

pub use error::{IsrError, Result};
pub use expansion::{ExpTermSource, ExpansionAt, ExpansionConfig};
pub use model::{CoefficientTable, DerivativeMode, ExpansionPoint, Family, ModelSpec};
pub use sharpe::{implied_sharpe, Method, Scenario, SharpeApproximation};
