//! Joint learner of the average profitability `K(0, T)`.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::td::{self, StepSizes, TdLoss, Transition, UpdateReport};
use crate::error::{invalid, Error, Result};
use crate::exploratory::ExploratoryConfig;
use crate::linalg;

/// Multi-asset policy and value parameters.
///
/// The policy is `N((φ1/(2γ) − w) Σ̂⁻¹(μ̂ − r), (λ/2) e^{φ2 (T − t)}/γ · Σ̂⁻¹)`
/// with the estimates `μ̂ − r`, `Σ̂⁻¹` as inputs; at the optimum
/// `φ1 = e^{K(0,T) T} + 2γw⁰` and `φ2 = K(t, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLearnerState {
    pub phi: [f64; 2],
    pub psi: [f64; 4],
    /// `ψ` learned at the previous time point.
    pub psi_bar: [f64; 4],
    pub steps: StepSizes,
    mu_hat_minus_r: DVector<f64>,
    sigma_inv_hat: DMatrix<f64>,
    factor: DMatrix<f64>,
    log_det: f64,
    direction: DVector<f64>,
}

impl JointLearnerState {
    /// Parameters implied by the estimates, with `K = μ̂ᵀ Σ̂⁻¹ μ̂`.
    pub fn warm_start(
        cfg: &ExploratoryConfig,
        mu_hat_minus_r: DVector<f64>,
        sigma_inv_hat: DMatrix<f64>,
        steps: StepSizes,
    ) -> Result<Self> {
        steps.validate()?;
        let mut state = Self {
            phi: [0.0; 2],
            psi: [0.0; 4],
            psi_bar: [0.0; 4],
            steps,
            mu_hat_minus_r: DVector::zeros(0),
            sigma_inv_hat: DMatrix::zeros(0, 0),
            factor: DMatrix::zeros(0, 0),
            log_det: 0.0,
            direction: DVector::zeros(0),
        };
        state.set_estimates(mu_hat_minus_r, sigma_inv_hat)?;
        let k = state.direction.dot(&state.mu_hat_minus_r).max(0.0);
        let phi1 = crate::mv::tau_from_k(k, cfg.horizon, cfg.gamma, cfg.w0);
        let n = state.n() as f64;
        let t = cfg.horizon;
        let entropy_integral =
            n * t * (PI * cfg.lambda / cfg.gamma).ln() + t * state.log_det + 0.5 * n * k * t * t;
        state.phi = [phi1, k];
        state.psi = [phi1, k, phi1 * phi1 / (4.0 * cfg.gamma), entropy_integral];
        state.psi_bar = state.psi;
        Ok(state)
    }

    /// Replaces `μ̂ − r` and `Σ̂⁻¹`; the latter must be symmetric positive
    /// definite.
    pub fn set_estimates(
        &mut self,
        mu_hat_minus_r: DVector<f64>,
        sigma_inv_hat: DMatrix<f64>,
    ) -> Result<()> {
        linalg::ensure_square(&sigma_inv_hat, "estimated inverse covariance")?;
        linalg::ensure_len(
            &mu_hat_minus_r,
            sigma_inv_hat.nrows(),
            "estimated excess return",
        )?;
        linalg::ensure_symmetric(&sigma_inv_hat)?;
        if !mu_hat_minus_r.iter().all(|v| v.is_finite()) {
            return Err(invalid("estimated excess return must be finite"));
        }
        let chol = linalg::cholesky(&sigma_inv_hat, "estimated inverse covariance")?;
        self.log_det = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        self.factor = chol.l();
        self.direction = &sigma_inv_hat * &mu_hat_minus_r;
        self.mu_hat_minus_r = mu_hat_minus_r;
        self.sigma_inv_hat = sigma_inv_hat;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.mu_hat_minus_r.len()
    }

    pub fn mu_hat_minus_r(&self) -> &DVector<f64> {
        &self.mu_hat_minus_r
    }

    pub fn sigma_inv_hat(&self) -> &DMatrix<f64> {
        &self.sigma_inv_hat
    }

    /// `K(0, T) = ln(φ1 − 2γw⁰)/T`, when readable.
    pub fn k_estimate(&self, cfg: &ExploratoryConfig) -> Option<f64> {
        super::k_from_phi1(self.phi[0], cfg)
    }

    /// Policy mean `(φ1/(2γ) − w) Σ̂⁻¹(μ̂ − r)`, the allocation implemented online.
    pub fn mean(&self, cfg: &ExploratoryConfig, w: f64) -> DVector<f64> {
        &self.direction * (self.phi[0] / (2.0 * cfg.gamma) - w)
    }

    fn variance_scale(&self, cfg: &ExploratoryConfig, t: f64) -> f64 {
        0.5 * cfg.lambda * (self.phi[1] * (cfg.horizon - t)).exp() / cfg.gamma
    }

    pub fn covariance(&self, cfg: &ExploratoryConfig, t: f64) -> DMatrix<f64> {
        &self.sigma_inv_hat * self.variance_scale(cfg, t)
    }

    pub fn entropy(&self, cfg: &ExploratoryConfig, t: f64) -> f64 {
        let n = self.n() as f64;
        0.5 * n * (2.0 * PI * E * self.variance_scale(cfg, t)).ln() + 0.5 * self.log_det
    }

    fn validate(&self, cfg: &ExploratoryConfig) -> Result<()> {
        let finite = self.phi.iter().chain(&self.psi).all(|p| p.is_finite())
            && (self.phi[1] * cfg.horizon).exp().is_finite();
        if !finite {
            return Err(invalid("joint learner parameters must be finite"));
        }
        Ok(())
    }

    fn transition<'a>(
        &self,
        cfg: &'a ExploratoryConfig,
        t: f64,
        w: f64,
        samples: &DMatrix<f64>,
        dt: f64,
        noise: &DMatrix<f64>,
    ) -> Transition<'a> {
        let mean = self.mean(cfg, w);
        let sd = self.variance_scale(cfg, t).sqrt();
        let next = (0..samples.nrows())
            .map(|k| {
                let z = noise.row(k).transpose();
                let theta = &mean + &self.factor * z * sd;
                w + samples.row(k).transpose().dot(&theta)
            })
            .collect();
        Transition {
            cfg,
            t,
            dt,
            w,
            next,
            entropy: self.entropy(cfg, t),
        }
    }

    fn check_samples(&self, samples: &DMatrix<f64>) -> Result<()> {
        if samples.ncols() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "return samples",
                expected: self.n(),
                found: samples.ncols(),
            });
        }
        Ok(())
    }
}

/// TD loss of the joint state at `(t, w)`; row `k` of `samples` is the
/// return vector `R^k` and row `k` of `noise` the standard-normal draw
/// behind `Θ^k`.
pub fn td_loss_joint(
    state: &JointLearnerState,
    cfg: &ExploratoryConfig,
    t: f64,
    w: f64,
    samples: &DMatrix<f64>,
    dt: f64,
    noise: &DMatrix<f64>,
) -> Result<TdLoss> {
    td::check_step(dt, samples.nrows(), noise.nrows())?;
    state.check_samples(samples)?;
    state.check_samples(noise)?;
    state.validate(cfg)?;
    let tr = state.transition(cfg, t, w, samples, dt, noise);
    let residual = tr.residual(&state.psi, &state.psi_bar);
    Ok(TdLoss {
        loss: 0.5 * dt * residual * residual,
        residual,
        next_wealth: tr.next,
    })
}

/// One update: draw allocations, descend `ψ` on the TD loss, then copy
/// `φ1 ← ψ1`, `φ2 ← ψ2`.
pub fn update_joint_learner<R: Rng + ?Sized>(
    state: &JointLearnerState,
    cfg: &ExploratoryConfig,
    t: f64,
    w: f64,
    samples: &DMatrix<f64>,
    dt: f64,
    rng: &mut R,
) -> Result<(JointLearnerState, UpdateReport)> {
    td::check_step(dt, samples.nrows(), samples.nrows())?;
    state.check_samples(samples)?;
    state.validate(cfg)?;
    let noise = DMatrix::from_fn(samples.nrows(), samples.ncols(), |_, _| {
        rng.sample(StandardNormal)
    });
    let tr = state.transition(cfg, t, w, samples, dt, &noise);
    let (psi, mut report) = td::descend(state.psi, &state.psi_bar, &tr, &state.steps);
    let mut next = state.clone();
    next.psi = psi;
    next.psi_bar = psi;
    next.phi = [psi[0], psi[1]];
    if next.validate(cfg).is_err() {
        log::warn!("joint learner update produced invalid parameters; state kept");
        report.rejected = true;
        let mut kept = state.clone();
        kept.psi_bar = kept.psi;
        return Ok((kept, report));
    }
    if next.k_estimate(cfg).is_none() {
        log::debug!(
            "phi1 = {} does not exceed 2*gamma*w0; K is unreadable at t = {t}",
            next.phi[0]
        );
    }
    Ok((next, report))
}
