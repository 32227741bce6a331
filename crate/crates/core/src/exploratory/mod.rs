//! Entropy-regularized (exploratory) mean-variance control with Gaussian
//! policies.
//!
//! A policy is `N((a0 − w)·a1, e^{a2}·A3)`; its value is a quadratic
//! `−I(t)w² + H(t)w + G(t)`. Evaluation and improvement are closed-form on a
//! grid where the market and the policy's matrix parameters are constant,
//! and iterating them converges to the optimal policy.

mod evaluation;
mod expsum;
mod policy;

pub use evaluation::{
    contraction_factor, evaluate_policy, evaluate_policy_with_terminal, improve_policy,
    policy_iterate, PolicyIteration, ValueQuadratic,
};
pub use policy::GaussianPolicy;

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};

use crate::curve::merged_grid;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::market::MarketModel;
use crate::mv::{MvProblem, Profitability};

/// Exploration weight `λ` together with the mean-variance problem data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExploratoryConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub w0: f64,
    pub horizon: f64,
}

impl ExploratoryConfig {
    pub fn new(lambda: f64, gamma: f64, w0: f64, horizon: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("exploration weight must be positive"));
        }
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
            lambda,
            gamma,
            w0,
            horizon,
        })
    }

    pub fn from_problem(problem: &MvProblem, lambda: f64) -> Result<Self> {
        Self::new(lambda, problem.gamma, problem.w0, problem.horizon)
    }
}

/// Differential entropy `n/2·ln(2πe) + ½·ln|cov|` of a Gaussian.
pub fn gaussian_entropy(cov: &DMatrix<f64>) -> Result<f64> {
    linalg::ensure_square(cov, "covariance")?;
    linalg::ensure_symmetric(cov)?;
    let n = cov.nrows() as f64;
    Ok(0.5 * n * (2.0 * PI * E).ln() + 0.5 * linalg::log_det_spd(cov, "covariance")?)
}

/// Optimal exploratory policy at `(t, w)`: mean `(τ/(2γ) − w)Σ⁻¹(μ − r)` and
/// covariance `(λ/2)·e^{∫_t^T A}/γ·Σ⁻¹`.
pub fn optimal_policy(
    t: f64,
    w: f64,
    cfg: &ExploratoryConfig,
    prof: &Profitability,
    mu_minus_r: &DVector<f64>,
    sigma_inv: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_time(t, cfg.horizon)?;
    linalg::ensure_square(sigma_inv, "inverse covariance")?;
    linalg::ensure_len(mu_minus_r, sigma_inv.nrows(), "excess return")?;
    let mean = sigma_inv * mu_minus_r * (prof.tau() / (2.0 * cfg.gamma) - w);
    let scale = 0.5 * cfg.lambda * prof.remaining_integral(t).exp() / cfg.gamma;
    Ok((mean, sigma_inv * scale))
}

/// Optimal exploratory value
/// `−γe^{−R(t)}(w − τ/(2γ))² + τ²/(4γ) + (λn/2)∫_t^T [ln(πλ/γ) − ln|Σ(s)|/n + R(s)] ds`
/// with `R(s) = ∫_s^T A`.
pub fn optimal_value(
    t: f64,
    w: f64,
    cfg: &ExploratoryConfig,
    prof: &Profitability,
    model: &MarketModel,
) -> Result<f64> {
    check_time(t, cfg.horizon)?;
    let (gamma, lambda, tau) = (cfg.gamma, cfg.lambda, prof.tau());
    let n = model.n() as f64;
    let r_t = prof.remaining_integral(t);
    let gap = w - tau / (2.0 * gamma);
    let mut entropy_part = 0.0;
    let grid = merged_grid(t, cfg.horizon, &[&model.knots(), prof.a().starts()]);
    for pair in grid.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let mid = 0.5 * (a + b);
        let log_det = linalg::log_det_spd(&model.covariance(mid), "covariance matrix")?;
        // R is linear on the segment, so the trapezoid rule is exact.
        let r_avg = 0.5 * (prof.remaining_integral(a) + prof.remaining_integral(b));
        entropy_part += (b - a) * ((PI * lambda / gamma).ln() - log_det / n + r_avg);
    }
    Ok(-gamma * (-r_t).exp() * gap * gap
        + tau * tau / (4.0 * gamma)
        + 0.5 * lambda * n * entropy_part)
}

/// One Euler step of the exploratory wealth equation: drift
/// `meanᵀ(μ − r)` and volatility `√(meanᵀΣ mean + tr(Σ cov))`.
pub fn exploratory_wealth_step(
    w: f64,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    mu_minus_r: &DVector<f64>,
    sigma: &DMatrix<f64>,
    dt: f64,
    noise: f64,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(invalid("time step must be positive"));
    }
    let n = sigma.nrows();
    linalg::ensure_len(mean, n, "policy mean")?;
    linalg::ensure_len(mu_minus_r, n, "excess return")?;
    if cov.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            what: "policy covariance",
            expected: n,
            found: cov.nrows(),
        });
    }
    let variance = linalg::quad_form(mean, sigma) + (sigma * cov).trace();
    if variance < 0.0 {
        if variance > -1e-14 {
            return Ok(w + mean.dot(mu_minus_r) * dt);
        }
        return Err(Error::Degenerate(format!(
            "negative wealth variance {variance}"
        )));
    }
    Ok(w + mean.dot(mu_minus_r) * dt + variance.sqrt() * dt.sqrt() * noise)
}

fn check_time(t: f64, horizon: f64) -> Result<()> {
    if t.is_finite() && (0.0..=horizon * (1.0 + 1e-12)).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidInterval { t, horizon })
    }
}
