//! Classical mean-variance quantities: profitability, `τ`, and the
//! pre-commitment allocation.

use nalgebra::{DMatrix, DVector};

use crate::curve::StepCurve;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::market::MarketModel;

/// Risk aversion, initial discounted wealth and horizon over a market.
#[derive(Debug, Clone)]
pub struct MvProblem {
    pub gamma: f64,
    pub w0: f64,
    pub horizon: f64,
    pub model: MarketModel,
}

impl MvProblem {
    pub fn new(gamma: f64, w0: f64, horizon: f64, model: MarketModel) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("risk aversion must be positive"));
        }
        if !(w0 > 0.0 && w0.is_finite()) {
            return Err(invalid("initial wealth must be positive"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon must be positive"));
        }
        Ok(Self {
            gamma,
            w0,
            horizon,
            model,
        })
    }

    pub fn profitability(&self) -> Profitability {
        Profitability::new(
            self.model.profitability_curve(),
            self.gamma,
            self.w0,
            self.horizon,
        )
        .expect("problem validated at construction")
    }
}

/// `A(t)`, its averages `K(t, T)` and the scalar `τ = e^{K(0,T) T} + 2γ w⁰`.
#[derive(Debug, Clone)]
pub struct Profitability {
    a: StepCurve<f64>,
    horizon: f64,
    tau: f64,
}

impl Profitability {
    pub fn new(a: StepCurve<f64>, gamma: f64, w0: f64, horizon: f64) -> Result<Self> {
        if a.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("profitability must be finite and nonnegative"));
        }
        if !(horizon > 0.0) {
            return Err(invalid("horizon must be positive"));
        }
        let tau = tau_from_k(a.integral(0.0, horizon) / horizon, horizon, gamma, w0);
        Ok(Self { a, horizon, tau })
    }

    pub fn a(&self) -> &StepCurve<f64> {
        &self.a
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `∫_t^T A(s) ds = K(t, T)·(T − t)`; zero at the horizon.
    pub fn remaining_integral(&self, t: f64) -> f64 {
        self.a.integral(t, self.horizon)
    }

    /// `K(t, T)`; at `t = T` the limit `A(T⁻)` is returned.
    pub fn k(&self, t: f64) -> f64 {
        if t < self.horizon {
            self.remaining_integral(t) / (self.horizon - t)
        } else {
            *self
                .a
                .value_at(self.horizon - f64::EPSILON * self.horizon.max(1.0))
        }
    }

    pub fn k0(&self) -> f64 {
        self.k(0.0)
    }
}

/// `τ = e^{K T} + 2γ w⁰`.
pub fn tau_from_k(k0: f64, horizon: f64, gamma: f64, w0: f64) -> f64 {
    (k0 * horizon).exp() + 2.0 * gamma * w0
}

/// `(μ − r)ᵀ Σ⁻¹ (μ − r)`.
pub fn profitability_a(mu_minus_r: &DVector<f64>, sigma_inv: &DMatrix<f64>) -> Result<f64> {
    linalg::ensure_square(sigma_inv, "inverse covariance")?;
    linalg::ensure_len(mu_minus_r, sigma_inv.nrows(), "excess return vector")?;
    linalg::ensure_symmetric(sigma_inv)?;
    Ok(linalg::quad_form(mu_minus_r, sigma_inv).max(0.0))
}

/// Exact average of a piecewise-constant `A` over `[t, T]`.
pub fn average_k(a: &StepCurve<f64>, t: f64, horizon: f64) -> Result<f64> {
    if !(t < horizon) {
        return Err(Error::InvalidInterval { t, horizon });
    }
    Ok(a.integral(t, horizon) / (horizon - t))
}

/// Joint profitability from per-asset profitabilities: `√K L⁻¹ √K`.
///
/// Only meaningful for stationary markets, where it equals `A`.
pub fn combine_k(per_asset_k: &DVector<f64>, rho: &DMatrix<f64>) -> Result<f64> {
    linalg::ensure_square(rho, "correlation matrix")?;
    linalg::ensure_len(per_asset_k, rho.nrows(), "per-asset profitability")?;
    if per_asset_k.iter().any(|k| !(*k >= 0.0)) {
        return Err(invalid("per-asset profitabilities must be nonnegative"));
    }
    let root = per_asset_k.map(f64::sqrt);
    let chol = linalg::cholesky(rho, "correlation matrix")?;
    Ok(chol.solve(&root).dot(&root))
}

/// Pre-commitment allocation `(τ/(2γ) − w) Σ⁻¹ (μ − r)` in discounted amounts.
pub fn classical_allocation(
    w: f64,
    problem: &MvProblem,
    prof: &Profitability,
    mu_minus_r: &DVector<f64>,
    sigma_inv: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    linalg::ensure_square(sigma_inv, "inverse covariance")?;
    linalg::ensure_len(mu_minus_r, sigma_inv.nrows(), "excess return vector")?;
    Ok(allocation_from_target(
        prof.tau() / (2.0 * problem.gamma),
        w,
        &(sigma_inv * mu_minus_r),
    ))
}

pub(crate) fn allocation_from_target(
    target: f64,
    w: f64,
    direction: &DVector<f64>,
) -> DVector<f64> {
    direction * (target - w)
}
