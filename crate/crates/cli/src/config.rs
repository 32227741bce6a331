//! Run configuration: one TOML file with market, learner and experiment
//! sections. Every field has a default, so an empty file is a valid config
//! describing the two-asset stationary market and the monthly backtest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mvrl_core::backtest::{BacktestConfig, CeqConvention};
use mvrl_core::exploratory::ExploratoryConfig;
use mvrl_core::learner::{OnlineConfig, StepSizes, StudyConfig};
use mvrl_core::{DMatrix, MarketModel};
use serde::Deserialize;

/// A configuration that parsed but describes an invalid run.
#[derive(Debug, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct InvalidConfig(String);

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub market: MarketSection,
    pub learner: LearnerSection,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            market: MarketSection::default(),
            learner: LearnerSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

/// Either one common pairwise correlation or a full matrix.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Correlation {
    Common(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketSection {
    /// Risk-free rate per year.
    pub rate: f64,
    /// `μ − r` per asset, per year.
    pub excess_return: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Correlation,
    /// Months of simulated data for `simulate` and `learn`.
    pub months: usize,
    pub steps_per_month: usize,
    /// Price CSV for `backtest`; simulated when absent.
    pub data: Option<PathBuf>,
    /// Single-column index CSV for `backtest`; an equal-weight index of the
    /// panel is used when absent.
    pub index: Option<PathBuf>,
}

impl Default for MarketSection {
    fn default() -> Self {
        Self {
            rate: 0.02,
            excess_return: vec![0.06, 0.08],
            sigma: vec![0.1, 0.15],
            rho: Correlation::Common(0.1),
            months: 2500,
            steps_per_month: 21,
            data: None,
            index: None,
        }
    }
}

impl MarketSection {
    pub fn correlation(&self, rho: &Correlation) -> Result<DMatrix<f64>> {
        let n = self.excess_return.len();
        Ok(match rho {
            Correlation::Common(c) => DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { *c }),
            Correlation::Matrix(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    bail!("market.rho must be a {n}x{n} matrix");
                }
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            }
        })
    }

    pub fn model_with(&self, rho: &Correlation) -> Result<MarketModel> {
        if self.excess_return.len() != self.sigma.len() {
            bail!(
                "market.excess_return has {} entries but market.sigma has {}",
                self.excess_return.len(),
                self.sigma.len()
            );
        }
        Ok(MarketModel::stationary(
            self.rate,
            &self.excess_return,
            &self.sigma,
            self.correlation(rho)?,
        )?)
    }

    pub fn model(&self) -> Result<MarketModel> {
        self.model_with(&self.rho)
    }

    pub fn resolve(&mut self, base: &Path) {
        for p in [&mut self.data, &mut self.index].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSection {
    pub lambda: f64,
    pub gamma: f64,
    pub w0: f64,
    /// Investment horizon in years.
    pub horizon: f64,
    /// Return samples per update (`M`).
    pub samples: usize,
    /// Learning cycle in steps (`m`).
    pub learn_every: usize,
    pub kappa_max: f64,
    pub tc: f64,
    pub leverage_cap: f64,
    pub steps: StepSizes,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 1.5,
            w0: 1.0,
            horizon: 21.0 / 252.0,
            samples: 21,
            learn_every: 5,
            kappa_max: 100.0,
            tc: 0.003,
            leverage_cap: 2.0,
            steps: StepSizes::default(),
        }
    }
}

impl LearnerSection {
    pub fn exploratory(&self) -> Result<ExploratoryConfig> {
        Ok(ExploratoryConfig::new(
            self.lambda,
            self.gamma,
            self.w0,
            self.horizon,
        )?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub episodes: usize,
    /// Additional correlations for `learn`; each gets its own curve.
    pub rho_sweep: Vec<f64>,
    pub train_months: usize,
    pub test_months: usize,
    /// Trailing estimation window in months (Plug-in, `σ̂`, `Σ̂⁻¹`).
    pub window_months: usize,
    pub ceq: CeqConvention,
    /// Number of panels written by `simulate`.
    pub paths: usize,
    pub out: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            episodes: 3000,
            rho_sweep: Vec::new(),
            train_months: 144,
            test_months: 156,
            window_months: 144,
            ceq: CeqConvention::Gamma,
            paths: 1,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.market.resolve(base);
        if cfg.experiment.out.is_relative() {
            cfg.experiment.out = base.join(&cfg.experiment.out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section; failures are tagged as [`InvalidConfig`].
    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|e| anyhow::Error::new(InvalidConfig(format!("{e:#}"))))
    }

    fn check(&self) -> Result<()> {
        if self.market.steps_per_month == 0 {
            bail!("market.steps_per_month must be positive");
        }
        if self.market.months == 0 {
            bail!("market.months must be positive");
        }
        if self.experiment.paths == 0 {
            bail!("experiment.paths must be positive");
        }
        if self.experiment.test_months < 2 {
            bail!("experiment.test_months must be at least 2");
        }
        for p in [&self.market.data, &self.market.index]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                bail!("input file {} does not exist", p.display());
            }
        }
        self.learner.exploratory()?;
        self.learner.steps.validate()?;
        self.backtest().validate()?;
        self.online().validate()?;
        Ok(())
    }

    pub fn study(&self) -> StudyConfig {
        StudyConfig {
            episodes: self.experiment.episodes,
            episode_steps: self.market.steps_per_month,
            kappa_max: self.learner.kappa_max,
            // The panel is simulated from `seed`; the episode sampler and the
            // policy draws use the next seed so the two streams differ.
            seed: self.seed.wrapping_add(1),
            steps: self.learner.steps,
        }
    }

    pub fn backtest(&self) -> BacktestConfig {
        let month = self.market.steps_per_month;
        BacktestConfig {
            gamma: self.learner.gamma,
            horizon: self.learner.horizon,
            month_steps: month,
            tc: self.learner.tc,
            leverage_cap: self.learner.leverage_cap,
            train_steps: self.experiment.train_months * month,
            plugin_window: self.experiment.window_months * month,
            plugin_refit: month,
            kappa_max: self.learner.kappa_max,
        }
    }

    pub fn online(&self) -> OnlineConfig {
        let month = self.market.steps_per_month;
        OnlineConfig {
            rebalance_steps: month,
            learn_every: self.learner.learn_every,
            samples: self.learner.samples,
            leverage_cap: self.learner.leverage_cap,
            tc: self.learner.tc,
            train_steps: self.experiment.train_months * month,
            estimation_window: self.experiment.window_months * month,
            kappa_max: self.learner.kappa_max,
            seed: self.seed,
            steps: self.learner.steps,
        }
    }
}
