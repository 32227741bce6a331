//! Classical estimators: MLE moments of returns and a condition-capped
//! inverse covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Floor for the largest eigenvalue when a covariance is numerically zero.
const EIGEN_FLOOR: f64 = 1e-12;

/// `M × n` per-step simple returns sampled every `dt` years.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationWindow {
    returns: DMatrix<f64>,
    dt: f64,
}

impl EstimationWindow {
    pub fn new(returns: DMatrix<f64>, dt: f64) -> Result<Self> {
        if returns.nrows() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                found: returns.nrows(),
            });
        }
        if returns.ncols() == 0 {
            return Err(invalid("estimation window has no assets"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("time step must be positive"));
        }
        if let Some((k, _)) = returns.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite return in row {}",
                k % returns.nrows()
            )));
        }
        Ok(Self { returns, dt })
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// Annualized MLE moments of a return window.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// Mean return per year; returns of discounted prices are already excess.
    pub mu_hat_minus_r: DVector<f64>,
    /// Per-asset volatility, `√diag(sample_cov)`.
    pub sigma_hat: DVector<f64>,
    /// MLE (`1/M`) covariance per year.
    pub sample_cov: DMatrix<f64>,
}

/// Sample mean and `1/M` covariance of the window, both divided by `dt`.
pub fn mle_moments(window: &EstimationWindow) -> Moments {
    let r = &window.returns;
    let m = r.nrows() as f64;
    let mean = r.row_mean().transpose();
    let centered = DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| r[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (m * window.dt);
    let cov = (&cov + cov.transpose()) * 0.5;
    Moments {
        mu_hat_minus_r: mean / window.dt,
        sigma_hat: cov.diagonal().map(|v| v.max(0.0).sqrt()),
        sample_cov: cov,
    }
}

/// MLE volatility per year of log-returns `ln(1 + R)`.
pub fn log_return_volatility(returns: &[f64], dt: f64) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: returns.len(),
        });
    }
    if returns.iter().any(|r| !(r.is_finite() && *r > -1.0)) {
        return Err(invalid("returns must be finite and above -100%"));
    }
    let logs: Vec<f64> = returns.iter().map(|r| r.ln_1p()).collect();
    let m = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / m;
    let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
    Ok((var / dt).sqrt())
}

/// Inverse of `sample_cov` after clipping its eigenvalues into
/// `[λ_max/κ, λ_max]`, so the result is symmetric positive definite with
/// condition number at most `κ = kappa_max`.
pub fn shrink_inverse_covariance(
    sample_cov: &DMatrix<f64>,
    kappa_max: f64,
) -> Result<DMatrix<f64>> {
    linalg::ensure_square(sample_cov, "sample covariance")?;
    linalg::ensure_symmetric(sample_cov)?;
    if !(kappa_max > 1.0) {
        return Err(invalid("condition cap must exceed 1"));
    }
    if sample_cov.iter().any(|v| !v.is_finite()) {
        return Err(invalid("sample covariance must be finite"));
    }
    let eig = SymmetricEigen::new(sample_cov.clone());
    let top = eig.eigenvalues.max().max(EIGEN_FLOOR);
    let bottom = top / kappa_max;
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l.clamp(bottom, top));
    let v = &eig.eigenvectors;
    let inv = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_returns_have_no_dispersion() {
        let w = EstimationWindow::new(DMatrix::from_element(5, 2, 0.001), 0.01).unwrap();
        let m = mle_moments(&w);
        assert!((m.mu_hat_minus_r[0] - 0.1).abs() < 1e-14);
        assert!(m.sigma_hat.amax() < 1e-9);
    }

    #[test]
    fn two_point_returns() {
        let a = 0.02;
        let r = DMatrix::from_fn(6, 1, |i, _| if i % 2 == 0 { a } else { -a });
        let m = mle_moments(&EstimationWindow::new(r, 0.5).unwrap());
        assert!(m.mu_hat_minus_r[0].abs() < 1e-15);
        assert!((m.sample_cov[(0, 0)] - a * a / 0.5).abs() < 1e-15);
    }

    #[test]
    fn window_needs_two_rows() {
        assert!(matches!(
            EstimationWindow::new(DMatrix::zeros(1, 2), 0.1),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn clip_diagonal() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let inv = shrink_inverse_covariance(&c, 2.0).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.5]));
        assert!((inv - expected).amax() < 1e-14);
        let ident = DMatrix::<f64>::identity(3, 3);
        assert!((shrink_inverse_covariance(&ident, 100.0).unwrap() - &ident).amax() < 1e-14);
    }

    #[test]
    fn zero_covariance_is_floored() {
        let inv = shrink_inverse_covariance(&DMatrix::zeros(2, 2), 10.0).unwrap();
        assert!(inv.iter().all(|v| v.is_finite()));
        assert!(linalg::min_eigenvalue(&inv) > 0.0);
    }

    #[test]
    fn rejects_asymmetric() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(shrink_inverse_covariance(&c, 10.0).is_err());
    }

    #[test]
    fn log_volatility_of_alternating_returns() {
        let r = [0.01, -0.01, 0.01, -0.01];
        let v = log_return_volatility(&r, 1.0).unwrap();
        let half = 0.5 * (1.01f64.ln() - 0.99f64.ln());
        assert!((v - half).abs() < 1e-14);
    }
}
