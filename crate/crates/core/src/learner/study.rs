//! Episode-based convergence study of the per-asset and joint learners on a
//! simulated training panel with known ground truth.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::asset::{update_asset_learner, AssetLearnerState};
use super::joint::{update_joint_learner, JointLearnerState};
use super::td::StepSizes;
use crate::error::{invalid, Error, Result};
use crate::estimation::{self, EstimationWindow};
use crate::exploratory::ExploratoryConfig;
use crate::linalg;
use crate::market::{MarketModel, PricePanel};

/// Settings of the convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub episodes: usize,
    /// Steps per episode (one horizon).
    pub episode_steps: usize,
    /// Condition cap of the inverse-covariance estimate.
    pub kappa_max: f64,
    pub seed: u64,
    pub steps: StepSizes,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            episode_steps: 21,
            kappa_max: 100.0,
            seed: 2024,
            steps: StepSizes::default(),
        }
    }
}

/// Relative errors after one episode (episode 0 is the warm start).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeErrors {
    pub episode: usize,
    /// `|φ3^(i) − (μ^(i) − r)| / |μ^(i) − r|` per asset.
    pub mu: Vec<f64>,
    /// Relative error of `K(0, T)` from the joint learner (`NaN` if unreadable).
    pub k_joint: f64,
    /// Relative error of `K(0, T)` assembled from the per-asset learners.
    pub k_combined: f64,
    /// Spectral-norm relative error of the episode's `Σ̂⁻¹`.
    pub sigma_inv: f64,
    pub k_joint_estimate: f64,
    pub k_combined_estimate: f64,
}

/// Trace of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub rows: Vec<EpisodeErrors>,
    pub true_mu_minus_r: DVector<f64>,
    pub true_k: f64,
}

impl StudyResult {
    /// Per-episode series of one error column.
    pub fn series(&self, pick: impl Fn(&EpisodeErrors) -> f64) -> Vec<f64> {
        self.rows.iter().map(pick).collect()
    }
}

/// Mean of the finite entries of the first or last tenth of a series.
pub fn decile_mean(series: &[f64], last: bool) -> f64 {
    let len = series.len();
    let k = (len / 10).max(1).min(len);
    let part = if last {
        &series[len - k..]
    } else {
        &series[..k]
    };
    let finite: Vec<f64> = part.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Sample standard deviation of the finite entries.
pub fn finite_std(series: &[f64]) -> f64 {
    let finite: Vec<f64> = series.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return f64::NAN;
    }
    let m = finite.iter().sum::<f64>() / finite.len() as f64;
    (finite.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (finite.len() - 1) as f64).sqrt()
}

fn relative(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs() / truth.abs()
}

/// Runs the study: MLE warm start over the whole panel, then per episode a
/// uniformly drawn window of `episode_steps` consecutive returns on which
/// the per-asset learners and the joint learner are updated at every step.
///
/// The window's returns are the `M` samples of each update; the joint
/// learner's `Σ̂⁻¹` is re-estimated from the window, and its `μ̂ − r` is the
/// per-asset learners' current estimate.
pub fn run_convergence_study(
    panel: &PricePanel,
    truth: &MarketModel,
    explore: &ExploratoryConfig,
    cfg: &StudyConfig,
) -> Result<StudyResult> {
    let n = panel.n_assets();
    if truth.n() != n {
        return Err(Error::DimensionMismatch {
            what: "ground-truth market",
            expected: n,
            found: truth.n(),
        });
    }
    let m = cfg.episode_steps;
    if m < 2 || panel.steps() < m {
        return Err(Error::InsufficientData {
            needed: m.max(2),
            found: panel.steps(),
        });
    }
    if !(cfg.kappa_max > 1.0) {
        return Err(invalid("condition cap must exceed 1"));
    }
    cfg.steps.validate()?;
    let dt = panel.mean_dt();
    let returns = panel.returns();

    let true_mu = truth.excess_return(0.0);
    let true_k = truth.profitability_curve().integral(0.0, explore.horizon) / explore.horizon;
    let true_sigma_inv = truth.inverse_covariance(0.0);
    let true_norm = linalg::spectral_norm_sym(&true_sigma_inv);

    let full = estimation::mle_moments(&EstimationWindow::new(returns.clone(), dt)?);
    let log_vol: Vec<f64> = (0..n)
        .map(|i| {
            let col: Vec<f64> = returns.column(i).iter().copied().collect();
            estimation::log_return_volatility(&col, dt)
        })
        .collect::<Result<_>>()?;
    let full_sigma_inv = estimation::shrink_inverse_covariance(&full.sample_cov, cfg.kappa_max)?;
    let corr_hat = correlation_of(&full.sample_cov)?;

    let mut assets = (0..n)
        .map(|i| {
            AssetLearnerState::warm_start(explore, full.mu_hat_minus_r[i], log_vol[i], cfg.steps)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut joint = JointLearnerState::warm_start(
        explore,
        full.mu_hat_minus_r.clone(),
        full_sigma_inv.clone(),
        cfg.steps,
    )?;

    let record = |episode: usize,
                  assets: &[AssetLearnerState],
                  joint: &JointLearnerState,
                  sigma_inv: &DMatrix<f64>|
     -> EpisodeErrors {
        let mu = (0..n)
            .map(|i| relative(assets[i].mu_minus_r(), true_mu[i]))
            .collect();
        let k_joint_estimate = joint.k_estimate(explore).unwrap_or(f64::NAN);
        let per_asset = DVector::from_iterator(
            n,
            assets
                .iter()
                .map(|a| a.k_estimate(explore).unwrap_or(0.0).max(0.0)),
        );
        let k_combined_estimate = crate::mv::combine_k(&per_asset, &corr_hat).unwrap_or(f64::NAN);
        EpisodeErrors {
            episode,
            mu,
            k_joint: relative(k_joint_estimate, true_k),
            k_combined: relative(k_combined_estimate, true_k),
            sigma_inv: linalg::spectral_norm_sym(&(sigma_inv - &true_sigma_inv)) / true_norm,
            k_joint_estimate,
            k_combined_estimate,
        }
    };

    let mut rows = vec![record(0, &assets, &joint, &full_sigma_inv)];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for episode in 1..=cfg.episodes {
        let start = rng.random_range(0..=panel.steps() - m);
        let window = returns.rows(start, m).into_owned();
        let moments = estimation::mle_moments(&EstimationWindow::new(window.clone(), dt)?);
        let sigma_inv = estimation::shrink_inverse_covariance(&moments.sample_cov, cfg.kappa_max)?;
        train_on_window(
            &mut assets,
            &mut joint,
            explore,
            &window,
            dt,
            &log_vol,
            &sigma_inv,
            &mut rng,
        )?;
        rows.push(record(episode, &assets, &joint, &sigma_inv));
    }
    Ok(StudyResult {
        rows,
        true_mu_minus_r: true_mu,
        true_k,
    })
}

/// One learning pass over a window of consecutive returns treated as an
/// episode starting at `t = 0` with wealth `w⁰`: at every step each per-asset
/// learner is updated with the asset's window returns as samples, then the
/// joint learner is updated with `μ̂ − r` taken from the per-asset learners and
/// the given `Σ̂⁻¹`. The episode wealths advance with draws from the learners'
/// policies and the realized step return.
#[allow(clippy::too_many_arguments)]
pub(crate) fn train_on_window<R: Rng + ?Sized>(
    assets: &mut [AssetLearnerState],
    joint: &mut JointLearnerState,
    explore: &ExploratoryConfig,
    window: &DMatrix<f64>,
    dt: f64,
    sigma_hat: &[f64],
    sigma_inv: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let n = assets.len();
    let columns: Vec<Vec<f64>> = (0..n)
        .map(|i| window.column(i).iter().copied().collect())
        .collect();
    let mut asset_wealth = vec![explore.w0; n];
    let mut joint_wealth = explore.w0;
    for j in 0..window.nrows() {
        let t = j as f64 * dt;
        for i in 0..n {
            let (next, _) = update_asset_learner(
                &assets[i],
                explore,
                t,
                asset_wealth[i],
                &columns[i],
                dt,
                sigma_hat[i],
                rng,
            )?;
            let theta = assets[i].mean(explore, asset_wealth[i])
                + assets[i].variance(explore, t).sqrt()
                    * rng.sample::<f64, _>(rand_distr::StandardNormal);
            asset_wealth[i] += columns[i][j] * theta;
            assets[i] = next;
        }
        let mu_hat = DVector::from_iterator(n, assets.iter().map(|a| a.mu_minus_r()));
        joint.set_estimates(mu_hat, sigma_inv.clone())?;
        let (next, _) = update_joint_learner(joint, explore, t, joint_wealth, window, dt, rng)?;
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let theta = joint.mean(explore, joint_wealth)
            + linalg::cholesky(&joint.covariance(explore, t), "policy covariance")?.l() * z;
        joint_wealth += window.row(j).transpose().dot(&theta);
        *joint = next;
    }
    Ok(())
}

pub(crate) fn correlation_of(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.diagonal().map(|v| 1.0 / v.sqrt());
    if !d.iter().all(|v| v.is_finite()) {
        return Err(Error::Degenerate("zero sample variance".into()));
    }
    let dm = DMatrix::from_diagonal(&d);
    let c = &dm * cov * &dm;
    Ok((&c + c.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deciles_and_std() {
        let s: Vec<f64> = (0..20).map(|k| k as f64).collect();
        assert_eq!(decile_mean(&s, false), 0.5);
        assert_eq!(decile_mean(&s, true), 18.5);
        assert!((finite_std(&[1.0, f64::NAN, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
