//! Online soft actor-critic rebalancing loop.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::asset::AssetLearnerState;
use super::joint::JointLearnerState;
use super::study::train_on_window;
use super::td::StepSizes;
use crate::backtest::{self, BacktestConfig, StrategyRun};
use crate::error::{invalid, Error, Result};
use crate::estimation::{self, EstimationWindow};
use crate::exploratory::ExploratoryConfig;
use crate::market::PricePanel;

/// Settings of the online loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    /// Rebalancing steps per horizon (`N`); the horizon restarts after them.
    pub rebalance_steps: usize,
    /// Learning cycle `m` in steps.
    pub learn_every: usize,
    /// Return samples per update (`M`): the trailing window a learning pass runs on.
    pub samples: usize,
    pub leverage_cap: f64,
    /// Proportional cost per unit of traded notional.
    pub tc: f64,
    /// Leading steps of the panel used only for the warm start.
    pub train_steps: usize,
    /// Trailing window for `σ̂` and `Σ̂⁻¹`, in steps.
    pub estimation_window: usize,
    pub kappa_max: f64,
    pub seed: u64,
    pub steps: StepSizes,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            rebalance_steps: 21,
            learn_every: 5,
            samples: 21,
            leverage_cap: 2.0,
            tc: 0.003,
            train_steps: 144 * 21,
            estimation_window: 144 * 21,
            kappa_max: 100.0,
            seed: 2024,
            steps: StepSizes::default(),
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learn_every == 0 || self.learn_every > self.rebalance_steps {
            return Err(invalid("learning cycle must lie in 1..=N"));
        }
        if self.samples < 2 {
            return Err(invalid("a learning pass needs at least two return samples"));
        }
        if self.estimation_window < 2 {
            return Err(invalid("estimation window needs at least two returns"));
        }
        if self.train_steps < self.samples.max(self.estimation_window) {
            return Err(Error::InsufficientData {
                needed: self.samples.max(self.estimation_window),
                found: self.train_steps,
            });
        }
        if !(self.leverage_cap > 0.0 && self.leverage_cap.is_finite()) {
            return Err(invalid("leverage cap must be positive"));
        }
        if !(self.tc >= 0.0 && self.tc.is_finite()) {
            return Err(invalid("transaction cost must be nonnegative"));
        }
        if !(self.kappa_max > 1.0) {
            return Err(invalid("condition cap must exceed 1"));
        }
        self.steps.validate()
    }

    fn execution(&self, explore: &ExploratoryConfig) -> BacktestConfig {
        BacktestConfig {
            gamma: explore.gamma,
            horizon: explore.horizon,
            month_steps: self.rebalance_steps,
            tc: self.tc,
            leverage_cap: self.leverage_cap,
            train_steps: self.train_steps,
            plugin_window: self.estimation_window,
            plugin_refit: self.rebalance_steps,
            kappa_max: self.kappa_max,
        }
    }
}

/// Learned parameters in force at one rebalance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub time: f64,
    pub wealth: f64,
    pub allocation: Vec<f64>,
    pub phi1: f64,
    /// `K(0, T)` read from `φ1` (`NaN` when unreadable).
    pub k_estimate: f64,
    pub mu_hat_minus_r: Vec<f64>,
}

/// Output of [`run_online_sac`].
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineRun {
    pub run: StrategyRun,
    pub trace: Vec<TraceRow>,
}

impl OnlineRun {
    /// Trace as CSV: `time,wealth,phi1,k_estimate,theta_*,mu_hat_*`.
    pub fn write_trace<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.trace.first().map_or(0, |r| r.allocation.len());
        let mut header: Vec<String> = ["time", "wealth", "phi1", "k_estimate"]
            .map(String::from)
            .to_vec();
        header.extend((1..=n).map(|i| format!("theta_{i}")));
        header.extend((1..=n).map(|i| format!("mu_hat_{i}")));
        w.write_record(&header)?;
        for r in &self.trace {
            let mut rec = vec![
                format!("{}", r.time),
                format!("{}", r.wealth),
                format!("{}", r.phi1),
                format!("{}", r.k_estimate),
            ];
            rec.extend(r.allocation.iter().map(|v| format!("{v}")));
            rec.extend(r.mu_hat_minus_r.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Estimates {
    sigma_hat: Vec<f64>,
    sigma_inv: DMatrix<f64>,
}

fn trailing_estimates(
    returns: &DMatrix<f64>,
    end: usize,
    len: usize,
    dt: f64,
    kappa_max: f64,
) -> Result<Estimates> {
    let window = returns.rows(end - len, len).into_owned();
    let sigma_hat = (0..window.ncols())
        .map(|i| {
            let col: Vec<f64> = window.column(i).iter().copied().collect();
            estimation::log_return_volatility(&col, dt)
        })
        .collect::<Result<_>>()?;
    let moments = estimation::mle_moments(&EstimationWindow::new(window, dt)?);
    Ok(Estimates {
        sigma_hat,
        sigma_inv: estimation::shrink_inverse_covariance(&moments.sample_cov, kappa_max)?,
    })
}

/// Runs the online loop over the steps after `train_steps`.
///
/// The learners are warm-started from MLE over the training steps. Every
/// `learn_every` steps within a horizon, `σ̂` and `Σ̂⁻¹` are re-estimated on
/// the trailing estimation window and one learning pass runs on the trailing
/// `samples` returns. At every step the mean of the learned policy,
/// `(φ1/(2γ) − w̃) Σ̂⁻¹(μ̂ − r)` with `w̃` the wealth relative to the start of
/// the horizon, is scaled by that starting wealth and executed with the
/// leverage cap and transaction costs.
pub fn run_online_sac(
    panel: &PricePanel,
    cfg: &OnlineConfig,
    explore: &ExploratoryConfig,
) -> Result<OnlineRun> {
    cfg.validate()?;
    if panel.steps() <= cfg.train_steps {
        return Err(Error::InsufficientData {
            needed: cfg.train_steps + 1,
            found: panel.steps(),
        });
    }
    let n = panel.n_assets();
    let dt = panel.mean_dt();
    let returns = panel.returns();

    let train = returns.rows(0, cfg.train_steps).into_owned();
    let full = estimation::mle_moments(&EstimationWindow::new(train, dt)?);
    let mut est = trailing_estimates(
        returns,
        cfg.train_steps,
        cfg.estimation_window,
        dt,
        cfg.kappa_max,
    )?;
    let mut assets = (0..n)
        .map(|i| {
            AssetLearnerState::warm_start(
                explore,
                full.mu_hat_minus_r[i],
                est.sigma_hat[i],
                cfg.steps,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut joint = JointLearnerState::warm_start(
        explore,
        full.mu_hat_minus_r.clone(),
        est.sigma_inv.clone(),
        cfg.steps,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let exec = cfg.execution(explore);
    let mut trace = Vec::new();
    let run = backtest::execute("SAC", panel, cfg.train_steps, explore.w0, &exec, |d| {
        if d.month_step % cfg.learn_every == 0 {
            est = trailing_estimates(returns, d.step, cfg.estimation_window, dt, cfg.kappa_max)?;
            let window = returns.rows(d.step - cfg.samples, cfg.samples).into_owned();
            train_on_window(
                &mut assets,
                &mut joint,
                explore,
                &window,
                dt,
                &est.sigma_hat,
                &est.sigma_inv,
                &mut rng,
            )?;
            let mu_hat = DVector::from_iterator(n, assets.iter().map(|a| a.mu_minus_r()));
            joint.set_estimates(mu_hat, est.sigma_inv.clone())?;
        }
        let unit = d.month_start_wealth / explore.w0;
        let theta = joint.mean(explore, d.wealth / unit) * unit;
        trace.push(TraceRow {
            time: panel.times()[d.step],
            wealth: d.wealth,
            allocation: theta.iter().copied().collect(),
            phi1: joint.phi[0],
            k_estimate: joint.k_estimate(explore).unwrap_or(f64::NAN),
            mu_hat_minus_r: joint.mu_hat_minus_r().iter().copied().collect(),
        });
        Ok(theta)
    })?;
    // The trace records the pre-clip allocation; align it with what was executed.
    for (row, theta) in trace.iter_mut().zip(&run.allocations) {
        row.allocation = theta.iter().copied().collect();
    }
    Ok(OnlineRun { run, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_returns_keep_wealth_constant() {
        let steps = 60;
        let times = (0..=steps).map(|j| j as f64 / 252.0).collect();
        // Alternating prices give zero-mean returns in training; the test
        // period is flat, so there is no P&L and, without costs, no loss.
        let prices = DMatrix::from_fn(steps + 1, 2, |j, i| {
            if j <= 30 {
                1.0 + 0.01 * ((j + i) % 2) as f64
            } else {
                1.0 + 0.01 * ((30 + i) % 2) as f64
            }
        });
        let panel = PricePanel::from_prices(times, prices).unwrap();
        let explore = ExploratoryConfig::new(1.0, 1.5, 1.0, 21.0 / 252.0).unwrap();
        let cfg = OnlineConfig {
            train_steps: 30,
            estimation_window: 30,
            tc: 0.0,
            ..OnlineConfig::default()
        };
        let out = run_online_sac(&panel, &cfg, &explore).unwrap();
        assert!(out.run.wealth.iter().all(|w| (w - 1.0).abs() < 1e-12));
        assert_eq!(out.trace.len(), steps - 30);
    }

    #[test]
    fn rejects_learning_cycle_beyond_horizon() {
        let cfg = OnlineConfig {
            learn_every: 22,
            ..OnlineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
