//! Per-asset learner of the excess return `μ^(i) − r`.

use std::f64::consts::{E, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use super::td::{self, StepSizes, TdLoss, Transition, UpdateReport};
use crate::error::{invalid, Result};
use crate::exploratory::ExploratoryConfig;

/// One-dimensional policy and value parameters.
///
/// The policy is `N((φ1/(2γ) − w) φ4 φ3, (λ/2) e^{φ2 (T − t)}/γ · φ4)`; at the
/// optimum `φ1 = e^{K T} + 2γw⁰`, `φ2 = K`, `φ3 = μ − r`, `φ4 = 1/σ²` with
/// `K = (μ − r)²/σ²`. The value parameters `ψ` are those of
/// [`parameterized_value`](super::parameterized_value).
#[derive(Debug, Clone, PartialEq)]
pub struct AssetLearnerState {
    pub phi: [f64; 4],
    pub psi: [f64; 4],
    /// `ψ` learned at the previous time point.
    pub psi_bar: [f64; 4],
    pub steps: StepSizes,
}

impl AssetLearnerState {
    /// Parameters implied by an estimated excess return and volatility.
    pub fn warm_start(
        cfg: &ExploratoryConfig,
        mu_minus_r: f64,
        sigma: f64,
        steps: StepSizes,
    ) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) || !mu_minus_r.is_finite() {
            return Err(invalid(
                "warm start needs a finite excess return and positive volatility",
            ));
        }
        steps.validate()?;
        let phi4 = 1.0 / (sigma * sigma);
        let k = mu_minus_r * mu_minus_r * phi4;
        let phi1 = crate::mv::tau_from_k(k, cfg.horizon, cfg.gamma, cfg.w0);
        let t = cfg.horizon;
        let psi = [
            phi1,
            k,
            phi1 * phi1 / (4.0 * cfg.gamma),
            t * (PI * cfg.lambda * phi4 / cfg.gamma).ln() + 0.5 * k * t * t,
        ];
        Ok(Self {
            phi: [phi1, k, mu_minus_r, phi4],
            psi,
            psi_bar: psi,
            steps,
        })
    }

    /// Learned excess return `φ3`.
    pub fn mu_minus_r(&self) -> f64 {
        self.phi[2]
    }

    /// `K^(i)(0, T) = ln(φ1 − 2γw⁰)/T`, when readable.
    pub fn k_estimate(&self, cfg: &ExploratoryConfig) -> Option<f64> {
        super::k_from_phi1(self.phi[0], cfg)
    }

    fn wealth_scale(&self, cfg: &ExploratoryConfig, w: f64) -> f64 {
        (self.phi[0] / (2.0 * cfg.gamma) - w) * self.phi[3]
    }

    pub fn mean(&self, cfg: &ExploratoryConfig, w: f64) -> f64 {
        self.wealth_scale(cfg, w) * self.phi[2]
    }

    pub fn variance(&self, cfg: &ExploratoryConfig, t: f64) -> f64 {
        0.5 * cfg.lambda * (self.phi[1] * (cfg.horizon - t)).exp() / cfg.gamma * self.phi[3]
    }

    pub fn entropy(&self, cfg: &ExploratoryConfig, t: f64) -> f64 {
        0.5 * (2.0 * PI * E * self.variance(cfg, t)).ln()
    }

    fn validate(&self, cfg: &ExploratoryConfig) -> Result<()> {
        let finite = self.phi.iter().chain(&self.psi).all(|p| p.is_finite())
            && (self.phi[1] * cfg.horizon).exp().is_finite();
        if !(self.phi[3] > 0.0) || !finite {
            return Err(invalid(
                "asset learner parameters must be finite with phi4 > 0",
            ));
        }
        Ok(())
    }

    fn transition<'a>(
        &self,
        cfg: &'a ExploratoryConfig,
        t: f64,
        w: f64,
        samples: &[f64],
        dt: f64,
        noise: &[f64],
    ) -> Transition<'a> {
        let mean = self.mean(cfg, w);
        let sd = self.variance(cfg, t).sqrt();
        let next = samples
            .iter()
            .zip(noise)
            .map(|(r, z)| w + r * (mean + sd * z))
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
}

/// TD loss `(Δt/2) δ²` of the state at `(t, w)` with allocations
/// `θ^k = mean + sd·noise[k]` applied to the return samples.
pub fn td_loss_1d(
    state: &AssetLearnerState,
    cfg: &ExploratoryConfig,
    t: f64,
    w: f64,
    samples: &[f64],
    dt: f64,
    noise: &[f64],
) -> Result<TdLoss> {
    td::check_step(dt, samples.len(), noise.len())?;
    state.validate(cfg)?;
    let tr = state.transition(cfg, t, w, samples, dt, noise);
    let residual = tr.residual(&state.psi, &state.psi_bar);
    Ok(TdLoss {
        loss: 0.5 * dt * residual * residual,
        residual,
        next_wealth: tr.next,
    })
}

/// One update: draw allocations, descend `ψ` on the TD loss, copy
/// `φ1 ← ψ1`, `φ2 ← ψ2`, set `φ4 ← 1/σ̂²`, and take one gradient-ascent step
/// on `φ3`.
#[allow(clippy::too_many_arguments)]
pub fn update_asset_learner<R: Rng + ?Sized>(
    state: &AssetLearnerState,
    cfg: &ExploratoryConfig,
    t: f64,
    w: f64,
    samples: &[f64],
    dt: f64,
    sigma_hat: f64,
    rng: &mut R,
) -> Result<(AssetLearnerState, UpdateReport)> {
    td::check_step(dt, samples.len(), samples.len())?;
    state.validate(cfg)?;
    if !(sigma_hat > 0.0 && sigma_hat.is_finite()) {
        return Err(invalid("estimated volatility must be positive"));
    }
    let noise: Vec<f64> = (0..samples.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let tr = state.transition(cfg, t, w, samples, dt, &noise);
    let (psi, mut report) = td::descend(state.psi, &state.psi_bar, &tr, &state.steps);

    let mut next = state.clone();
    next.psi = psi;
    next.phi[0] = psi[0];
    next.phi[1] = psi[1];
    next.phi[3] = 1.0 / (sigma_hat * sigma_hat);

    // Ascent on φ3 with the allocation noise held fixed:
    // ∂δ/∂φ3 = mean_k v_w(t + Δt, W^k) R^k (φ1/(2γ) − w) φ4 / Δt.
    let moved = next.transition(cfg, t, w, samples, dt, &noise);
    let residual = moved.residual(&next.psi, &state.psi_bar);
    let scale = next.wealth_scale(cfg, w);
    let slope: f64 = moved
        .next
        .iter()
        .zip(samples)
        .map(|(&wk, r)| td::value_slope(&next.psi, cfg, t + dt, wk) * r * scale)
        .sum::<f64>()
        / (samples.len() as f64 * dt);
    let step = state.steps.phi * dt * residual * slope;
    if step.is_finite() {
        next.phi[2] += step;
    } else {
        log::warn!("non-finite excess-return gradient at t = {t}; step rejected");
        report.rejected = true;
    }
    next.psi_bar = next.psi;
    if next.validate(cfg).is_err() {
        log::warn!("asset learner update produced invalid parameters; state kept");
        report.rejected = true;
        let mut kept = state.clone();
        kept.psi_bar = kept.psi;
        return Ok((kept, report));
    }
    Ok((next, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ExploratoryConfig {
        ExploratoryConfig::new(1.0, 1.5, 1.0, 1.0 / 12.0).unwrap()
    }

    #[test]
    fn warm_start_matches_parameter_identities() {
        let cfg = cfg();
        let s = AssetLearnerState::warm_start(&cfg, 0.06, 0.1, StepSizes::default()).unwrap();
        assert!((s.phi[1] - 0.36).abs() < 1e-12);
        assert!((s.phi[0] - ((0.36f64 / 12.0).exp() + 3.0)).abs() < 1e-12);
        assert!((s.phi[3] - 100.0).abs() < 1e-9);
        assert!((s.k_estimate(&cfg).unwrap() - 0.36).abs() < 1e-12);
        // The policy mean is the one-asset classical allocation.
        let tau = s.phi[0];
        assert!((s.mean(&cfg, 1.0) - (tau / 3.0 - 1.0) * 6.0).abs() < 1e-12);
    }

    #[test]
    fn loss_is_nonnegative_and_deterministic_without_noise() {
        let cfg = cfg();
        let s = AssetLearnerState::warm_start(&cfg, 0.06, 0.1, StepSizes::default()).unwrap();
        let zeros = [0.0; 5];
        let a = td_loss_1d(&s, &cfg, 0.01, 1.0, &zeros, 1.0 / 252.0, &zeros).unwrap();
        assert!(a.loss >= 0.0);
        assert!(a.next_wealth.iter().all(|&w| w == 1.0));
        // With no P&L the residual is the value drift plus the entropy bonus.
        let v = |t| super::super::parameterized_value(&s.psi, &cfg, t, 1.0);
        let expected = (v(0.01 + 1.0 / 252.0) - v(0.01)) * 252.0 + s.entropy(&cfg, 0.01);
        assert!((a.residual - expected).abs() < 1e-9);
    }

    #[test]
    fn zero_step_sizes_leave_state_unchanged() {
        let cfg = cfg();
        let steps = StepSizes {
            psi: [0.0; 4],
            phi: 0.0,
            ..StepSizes::default()
        };
        let s = AssetLearnerState::warm_start(&cfg, 0.06, 0.1, steps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = [0.001, -0.002, 0.0005];
        let (next, _) =
            update_asset_learner(&s, &cfg, 0.0, 1.0, &samples, 1.0 / 252.0, 0.1, &mut rng).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn update_is_a_descent_step() {
        let cfg = cfg();
        let s = AssetLearnerState::warm_start(&cfg, 0.06, 0.1, StepSizes::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples = [0.004, -0.006, 0.001, 0.002];
        let (next, report) =
            update_asset_learner(&s, &cfg, 0.0, 1.0, &samples, 1.0 / 252.0, 0.1, &mut rng).unwrap();
        assert!(report.loss_after <= report.loss_before);
        assert!(next.phi[3] > 0.0);
        assert!(!report.rejected);
    }
}
