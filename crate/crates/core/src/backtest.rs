//! Strategy runners and performance criteria.
//!
//! All strategies share one execution engine: at every step the strategy
//! names a target allocation (discounted amounts per asset), gross exposure
//! is capped by proportional scaling, the traded notional against the
//! drifted holdings is charged a proportional cost, and wealth advances with
//! the step's discounted returns. Mean-variance strategies restart their
//! horizon every month and scale the unit-wealth solution by the wealth at
//! the start of the month.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimation::{self, EstimationWindow};
use crate::market::{PricePanel, RawPriceTable};
use crate::mv;

/// Reads a `date,asset_1,...` price table and discounts every price by
/// `e^{−r (t − t₀)}` from the first date.
pub fn ingest_prices<R: Read>(input: R, rate: f64) -> Result<PricePanel> {
    if !rate.is_finite() {
        return Err(invalid("interest rate must be finite"));
    }
    let raw = RawPriceTable::read(input)?;
    let t0 = raw.times.first().copied().unwrap_or(0.0);
    let times: Vec<f64> = raw.times.iter().map(|t| t - t0).collect();
    let prices = DMatrix::from_fn(raw.prices.nrows(), raw.prices.ncols(), |j, i| {
        raw.prices[(j, i)] * (-rate * times[j]).exp()
    });
    PricePanel::with_names(raw.names, times, prices)
}

pub fn ingest_prices_file(path: &Path, rate: f64) -> Result<PricePanel> {
    ingest_prices(std::fs::File::open(path)?, rate)
}

/// Trading frictions and the mean-variance objective shared by the runners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    pub gamma: f64,
    /// Investment horizon in years; the mean-variance strategies restart it
    /// every `month_steps` steps.
    pub horizon: f64,
    pub month_steps: usize,
    /// Proportional cost per unit of traded notional.
    pub tc: f64,
    /// Cap on `Σ|θ^(i)| / W`.
    pub leverage_cap: f64,
    /// Steps before the test period (history available to estimators).
    pub train_steps: usize,
    /// Trailing window of the Plug-in estimator, in steps.
    pub plugin_window: usize,
    /// Steps between Plug-in re-estimations.
    pub plugin_refit: usize,
    /// Condition cap of the inverse-covariance estimate.
    pub kappa_max: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            gamma: 1.5,
            horizon: 21.0 / 252.0,
            month_steps: 21,
            tc: 0.003,
            leverage_cap: 2.0,
            train_steps: 144 * 21,
            plugin_window: 144 * 21,
            plugin_refit: 21,
            kappa_max: 100.0,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("risk aversion must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon must be positive"));
        }
        if self.month_steps == 0 || self.plugin_refit == 0 {
            return Err(invalid("month length and refit interval must be positive"));
        }
        if self.plugin_window < 2 {
            return Err(invalid("estimation window needs at least two returns"));
        }
        if !(self.tc >= 0.0 && self.tc.is_finite()) {
            return Err(invalid("transaction cost must be nonnegative"));
        }
        if !(self.leverage_cap > 0.0 && self.leverage_cap.is_finite()) {
            return Err(invalid("leverage cap must be positive"));
        }
        if !(self.kappa_max > 1.0) {
            return Err(invalid("condition cap must exceed 1"));
        }
        Ok(())
    }
}

/// Per-step record of one strategy over the test period.
///
/// `wealth` is the discounted wealth after costs; `gross_wealth` compounds the
/// same allocations' returns without costs. `allocations[k]`, `turnover[k]`
/// and `costs[k]` belong to the rebalance at the start of step `k`, and
/// `wealth[k + 1]` is the wealth after it. A ruined run stops at the first
/// non-positive wealth.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub name: String,
    pub times: Vec<f64>,
    pub wealth: Vec<f64>,
    pub gross_wealth: Vec<f64>,
    pub allocations: Vec<DVector<f64>>,
    pub turnover: Vec<f64>,
    pub costs: Vec<f64>,
    pub ruined: bool,
}

impl StrategyRun {
    pub fn steps(&self) -> usize {
        self.allocations.len()
    }

    pub fn terminal_wealth(&self) -> f64 {
        *self.wealth.last().expect("a run holds its initial wealth")
    }

    /// Wealth path as CSV: `time,wealth,gross_wealth,turnover,theta_1,...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.allocations.first().map_or(0, |a| a.len());
        let mut header = vec!["time", "wealth", "gross_wealth", "turnover"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend((1..=n).map(|i| format!("theta_{i}")));
        w.write_record(&header)?;
        for k in 0..self.wealth.len() {
            let mut rec = vec![
                format!("{}", self.times[k]),
                format!("{}", self.wealth[k]),
                format!("{}", self.gross_wealth[k]),
            ];
            match self.allocations.get(k) {
                Some(theta) => {
                    rec.push(format!("{}", self.turnover[k]));
                    rec.extend(theta.iter().map(|v| format!("{v}")));
                }
                None => rec.extend(std::iter::repeat_n(String::new(), n + 1)),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// State handed to a strategy when it chooses the allocation of one step.
#[derive(Debug, Clone, Copy)]
pub struct Decision {
    /// Panel step index `j` (the step covers returns row `j`).
    pub step: usize,
    /// Steps since the start of the test period.
    pub offset: usize,
    /// Steps since the start of the current month.
    pub month_step: usize,
    pub wealth: f64,
    pub month_start_wealth: f64,
}

/// Scales `theta` down proportionally so that `Σ|θ| ≤ cap · wealth`.
pub fn clip_leverage(theta: &DVector<f64>, wealth: f64, cap: f64) -> DVector<f64> {
    let gross = theta.iter().map(|v| v.abs()).sum::<f64>();
    let limit = cap * wealth;
    if gross > limit && gross > 0.0 {
        theta * (limit / gross)
    } else {
        theta.clone()
    }
}

/// Runs a strategy over panel steps `start..panel.steps()` from wealth `w0`.
pub fn execute<F>(
    name: &str,
    panel: &PricePanel,
    start: usize,
    w0: f64,
    cfg: &BacktestConfig,
    mut target: F,
) -> Result<StrategyRun>
where
    F: FnMut(&Decision) -> Result<DVector<f64>>,
{
    cfg.validate()?;
    if start >= panel.steps() {
        return Err(Error::InsufficientData {
            needed: start + 1,
            found: panel.steps(),
        });
    }
    if !(w0 > 0.0 && w0.is_finite()) {
        return Err(invalid("initial wealth must be positive"));
    }
    let n = panel.n_assets();
    let len = panel.steps() - start;
    let mut run = StrategyRun {
        name: name.to_string(),
        times: vec![panel.times()[start]],
        wealth: vec![w0],
        gross_wealth: vec![w0],
        allocations: Vec::with_capacity(len),
        turnover: Vec::with_capacity(len),
        costs: Vec::with_capacity(len),
        ruined: false,
    };
    let mut held = DVector::zeros(n);
    let mut wealth = w0;
    let mut gross = w0;
    let mut month_start_wealth = w0;
    for offset in 0..len {
        let step = start + offset;
        let month_step = offset % cfg.month_steps;
        if month_step == 0 {
            month_start_wealth = wealth;
        }
        let decision = Decision {
            step,
            offset,
            month_step,
            wealth,
            month_start_wealth,
        };
        let raw = target(&decision)?;
        if raw.len() != n {
            return Err(Error::DimensionMismatch {
                what: "strategy allocation",
                expected: n,
                found: raw.len(),
            });
        }
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "{name} produced a non-finite allocation at step {step}"
            )));
        }
        let theta = clip_leverage(&raw, wealth, cfg.leverage_cap);
        let traded = (&theta - &held).iter().map(|v| v.abs()).sum::<f64>();
        let cost = cfg.tc * traded;
        let ret = panel.step_return(step);
        let pnl = theta.dot(&ret);
        gross *= 1.0 + pnl / wealth;
        wealth += pnl - cost;
        held = theta.component_mul(&ret.map(|r| 1.0 + r));
        run.allocations.push(theta);
        run.turnover.push(traded);
        run.costs.push(cost);
        run.times.push(panel.times()[step + 1]);
        run.wealth.push(wealth);
        run.gross_wealth.push(gross);
        if !(wealth > 0.0) {
            log::warn!("{name}: wealth {wealth} is not positive at step {step}; run stopped");
            run.ruined = true;
            break;
        }
    }
    Ok(run)
}

/// Unit-wealth mean-variance allocation `(target − w̃) d`, scaled by the
/// wealth at the start of the month, where `w̃` is wealth relative to it.
pub fn monthly_mv_allocation(
    decision: &Decision,
    target: f64,
    direction: &DVector<f64>,
) -> DVector<f64> {
    let scale = decision.month_start_wealth;
    mv::allocation_from_target(target, decision.wealth / scale, direction) * scale
}

/// Plug-in: trailing-window MLE of `μ − r` and the condition-capped `Σ̂⁻¹`,
/// substituted into the classical allocation with `τ̂ = e^{K̂ T} + 2γ`
/// (unit wealth at the start of every month).
pub fn run_plugin(panel: &PricePanel, cfg: &BacktestConfig) -> Result<StrategyRun> {
    cfg.validate()?;
    if cfg.train_steps < cfg.plugin_window {
        return Err(Error::InsufficientData {
            needed: cfg.plugin_window,
            found: cfg.train_steps,
        });
    }
    let dt = panel.mean_dt();
    let returns = panel.returns();
    let mut fitted: Option<(f64, DVector<f64>)> = None;
    let start = cfg.train_steps;
    execute("Plug-in", panel, start, 1.0, cfg, |d| {
        if d.offset % cfg.plugin_refit == 0 || fitted.is_none() {
            let window = returns
                .rows(d.step - cfg.plugin_window, cfg.plugin_window)
                .into_owned();
            let moments = estimation::mle_moments(&EstimationWindow::new(window, dt)?);
            let sigma_inv =
                estimation::shrink_inverse_covariance(&moments.sample_cov, cfg.kappa_max)?;
            let direction = &sigma_inv * &moments.mu_hat_minus_r;
            let k = moments.mu_hat_minus_r.dot(&direction).max(0.0);
            let tau = mv::tau_from_k(k, cfg.horizon, cfg.gamma, 1.0);
            fitted = Some((tau / (2.0 * cfg.gamma), direction));
        }
        let (target, direction) = fitted.as_ref().expect("fitted above");
        Ok(monthly_mv_allocation(d, *target, direction))
    })
}

/// Equal weights `W/n` in every asset, restored at every rebalance.
pub fn run_buy_hold(panel: &PricePanel, cfg: &BacktestConfig) -> Result<StrategyRun> {
    let n = panel.n_assets();
    execute("B-H", panel, cfg.train_steps, 1.0, cfg, |d| {
        Ok(DVector::from_element(n, d.wealth / n as f64))
    })
}

/// All wealth in a single index column, held without rebalancing.
pub fn run_index(index: &PricePanel, cfg: &BacktestConfig) -> Result<StrategyRun> {
    if index.n_assets() != 1 {
        return Err(Error::DimensionMismatch {
            what: "index panel columns",
            expected: 1,
            found: index.n_assets(),
        });
    }
    let mut held: Option<f64> = None;
    let mut last_step = 0;
    let no_cap = BacktestConfig {
        leverage_cap: f64::MAX,
        ..*cfg
    };
    execute("Index", index, cfg.train_steps, 1.0, &no_cap, |d| {
        let theta = match held {
            None => d.wealth,
            Some(prev) => prev * (1.0 + index.returns()[(last_step, 0)]),
        };
        held = Some(theta);
        last_step = d.step;
        Ok(DVector::from_element(1, theta))
    })
}

/// Equal-weight buy-and-hold price index of the panel, used when no index
/// series is supplied: `I_t = (1/n) Σ_i S_t^(i)/S_0^(i)`.
pub fn equal_weight_index(panel: &PricePanel) -> Result<PricePanel> {
    let p = panel.prices();
    let n = p.ncols() as f64;
    let index = DMatrix::from_fn(p.nrows(), 1, |j, _| {
        (0..p.ncols()).map(|i| p[(j, i)] / p[(0, i)]).sum::<f64>() / n
    });
    PricePanel::with_names(vec!["index".into()], panel.times().to_vec(), index)
}

/// Constant in the certainty-equivalent return `12 (MEAN − c · STD²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CeqConvention {
    /// `c = γ`, matching the `E − γ Var` objective.
    #[default]
    Gamma,
    /// `c = γ/2`.
    HalfGamma,
}

/// Relative monthly standard deviation below which the Sharpe ratio is undefined.
const ZERO_DISPERSION: f64 = 1e-12;

/// Settings of [`compute_metrics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    pub gamma: f64,
    /// Interest rate used to turn discounted wealth into nominal wealth.
    pub rate: f64,
    pub month_steps: usize,
    pub ceq: CeqConvention,
}

/// The seven criteria of one strategy. `None` marks an undefined Sharpe ratio
/// (zero monthly standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestReport {
    pub strategy: String,
    /// Monthly mean of the cost-free return rate.
    pub mean: f64,
    /// Monthly standard deviation of the cost-free return rate.
    pub std: f64,
    /// Annualized certainty-equivalent return.
    pub ceq: f64,
    /// Annualized Sharpe ratio.
    pub sr: Option<f64>,
    /// Average daily turnover `Σ|Δθ|/W`, the entry trade excluded.
    pub tr: f64,
    pub ceq_tr: f64,
    pub sr_tr: Option<f64>,
}

/// Monthly nominal simple returns of a discounted wealth path sampled every
/// `month_steps` steps; a trailing partial month is dropped.
pub fn monthly_returns(times: &[f64], wealth: &[f64], month_steps: usize, rate: f64) -> Vec<f64> {
    let points: Vec<usize> = (0..wealth.len()).step_by(month_steps.max(1)).collect();
    points
        .windows(2)
        .map(|w| {
            let growth = (rate * (times[w[1]] - times[w[0]])).exp();
            wealth[w[1]] / wealth[w[0]] * growth - 1.0
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}

fn ceq_and_sr(returns: &[f64], cfg: &MetricsConfig) -> (f64, f64, f64, Option<f64>) {
    let (mean, std) = mean_std(returns);
    let c = match cfg.ceq {
        CeqConvention::Gamma => cfg.gamma,
        CeqConvention::HalfGamma => 0.5 * cfg.gamma,
    };
    let ceq = 12.0 * (mean - c * std * std);
    // Dispersion at rounding level counts as zero.
    let sr = (std > ZERO_DISPERSION * mean.abs().max(1.0))
        .then(|| 12f64.sqrt() * (mean - cfg.rate / 12.0) / std);
    (mean, std, ceq, sr)
}

/// MEAN, STD, CEQ, SR on the cost-free wealth, TR on the executed trades,
/// and CEQ_TR, SR_TR on the wealth after costs.
pub fn compute_metrics(run: &StrategyRun, cfg: &MetricsConfig) -> Result<BacktestReport> {
    if !(cfg.gamma > 0.0) || !cfg.rate.is_finite() || cfg.month_steps == 0 {
        return Err(invalid(
            "metrics need positive γ, finite rate and month length",
        ));
    }
    let gross = monthly_returns(&run.times, &run.gross_wealth, cfg.month_steps, cfg.rate);
    let net = monthly_returns(&run.times, &run.wealth, cfg.month_steps, cfg.rate);
    if gross.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2 * cfg.month_steps + 1,
            found: run.wealth.len(),
        });
    }
    let (mean, std, ceq, sr) = ceq_and_sr(&gross, cfg);
    let (_, _, ceq_tr, sr_tr) = ceq_and_sr(&net, cfg);
    let daily: Vec<f64> = (1..run.steps())
        .map(|k| run.turnover[k] / run.wealth[k])
        .collect();
    let tr = if daily.is_empty() {
        0.0
    } else {
        daily.iter().sum::<f64>() / daily.len() as f64
    };
    Ok(BacktestReport {
        strategy: run.name.clone(),
        mean,
        std,
        ceq,
        sr,
        tr,
        ceq_tr,
        sr_tr,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x}"))
}

/// Report table: one row per strategy, one column per criterion.
pub fn write_report<W: Write>(reports: &[BacktestReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy", "MEAN", "STD", "CEQ", "SR", "TR", "CEQ_TR", "SR_TR",
    ])?;
    for r in reports {
        w.write_record([
            r.strategy.clone(),
            format!("{}", r.mean),
            format!("{}", r.std),
            format!("{}", r.ceq),
            fmt_opt(r.sr),
            format!("{}", r.tr),
            format!("{}", r.ceq_tr),
            fmt_opt(r.sr_tr),
        ])?;
    }
    w.flush()?;
    Ok(())
}
