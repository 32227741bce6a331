//! Continuous-time multi-asset mean-variance portfolio selection.
//!
//! The crate covers the classical pre-commitment solution, its
//! entropy-regularized (exploratory) counterpart with Gaussian policies, the
//! policy evaluation / improvement iteration, the soft actor-critic learners
//! built on top of it, and a backtesting harness.
//!
//! Modules, bottom-up:
//!
//! - [`market`]: market model, price panels, path simulation
//! - [`mv`]: profitability `A(t)`, `K(t, T)`, `τ` and the classical allocation
//! - [`estimation`]: MLE moments and the condition-capped inverse covariance
//! - [`exploratory`]: Gaussian policies, closed-form evaluation and improvement
//! - [`learner`]: per-asset and joint TD learners, the online loop and the
//!   convergence study
//! - [`backtest`]: strategy runners and performance criteria

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod curve;
pub mod error;
pub mod estimation;
pub mod exploratory;
pub mod learner;
pub mod linalg;
pub mod market;
pub mod mv;

pub use curve::StepCurve;
pub use error::{Error, Result};
pub use exploratory::{ExploratoryConfig, GaussianPolicy, ValueQuadratic};
pub use market::{MarketModel, PricePanel};
pub use mv::{MvProblem, Profitability};

pub use nalgebra::{DMatrix, DVector};
