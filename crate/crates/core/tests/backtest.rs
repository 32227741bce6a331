//! Backtest engine and criteria: ingestion, strategy identities, invariances
//! and a golden report computed by an independent script
//! (`scripts/oracle_metrics.py`).

use std::path::PathBuf;

use mvrl_core::backtest::{
    self, compute_metrics, ingest_prices, ingest_prices_file, BacktestConfig, CeqConvention,
    MetricsConfig, StrategyRun,
};
use mvrl_core::mv::{self, MvProblem};
use mvrl_core::{DMatrix, DVector, Error, MarketModel, PricePanel};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn metrics() -> MetricsConfig {
    MetricsConfig {
        gamma: 1.5,
        rate: 0.02,
        month_steps: 21,
        ceq: CeqConvention::Gamma,
    }
}

/// Panel whose step returns are exactly `returns` (prices compounded from 1).
fn panel_from_returns(returns: &DMatrix<f64>) -> PricePanel {
    let (steps, n) = returns.shape();
    let mut prices = DMatrix::from_element(steps + 1, n, 1.0);
    for j in 0..steps {
        for i in 0..n {
            prices[(j + 1, i)] = prices[(j, i)] * (1.0 + returns[(j, i)]);
        }
    }
    let times = (0..=steps).map(|j| j as f64 / 252.0).collect();
    PricePanel::from_prices(times, prices).unwrap()
}

/// Deterministic pseudo-random returns in ±2%.
fn wiggly_returns(steps: usize, n: usize, salt: u64) -> DMatrix<f64> {
    DMatrix::from_fn(steps, n, |j, i| {
        let x = ((j as u64 * 2654435761 + i as u64 * 40503 + salt * 977) % 10007) as f64 / 10007.0;
        0.04 * (x - 0.5) + 0.0003
    })
}

fn small_cfg(tc: f64) -> BacktestConfig {
    BacktestConfig {
        tc,
        train_steps: 42,
        plugin_window: 42,
        ..BacktestConfig::default()
    }
}

#[test]
fn ingestion_discounts_and_reports_rows() {
    let p = ingest_prices("date,a\n0,100\n0.004,101\n".as_bytes(), 0.0).unwrap();
    assert!((p.step_return(0)[0] - 0.01).abs() < 1e-15);

    let p = ingest_prices("date,a\n2020.0,50\n2021.0,50\n".as_bytes(), 0.02).unwrap();
    assert_eq!(p.times(), &[0.0, 1.0]);
    assert!((p.step_return(0)[0] - ((-0.02f64).exp() - 1.0)).abs() < 1e-15);

    match ingest_prices("date,a\n0,1\n0.5,1\n0.5,2\n".as_bytes(), 0.0) {
        Err(Error::Row { row, .. }) => assert_eq!(row, 3),
        other => panic!("expected a row error, got {other:?}"),
    }
    match ingest_prices("date,a\n0,1\n0.5,-2\n".as_bytes(), 0.0) {
        Err(Error::Row { row, .. }) => assert_eq!(row, 2),
        other => panic!("expected a row error, got {other:?}"),
    }
}

#[test]
fn golden_report_matches_the_independent_oracle() {
    let panel = ingest_prices_file(&fixture("fixture_prices.csv"), 0.02).unwrap();
    let index = ingest_prices_file(&fixture("fixture_index.csv"), 0.02).unwrap();
    let cfg = BacktestConfig {
        train_steps: 21,
        plugin_window: 21,
        ..BacktestConfig::default()
    };
    let reports = [
        compute_metrics(&backtest::run_buy_hold(&panel, &cfg).unwrap(), &metrics()).unwrap(),
        compute_metrics(&backtest::run_index(&index, &cfg).unwrap(), &metrics()).unwrap(),
    ];
    let mut golden = csv::Reader::from_path(fixture("golden_report.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = golden.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), reports.len());
    for (row, report) in rows.iter().zip(&reports) {
        assert_eq!(&row[0], report.strategy);
        let ours = [
            report.mean,
            report.std,
            report.ceq,
            report.sr.unwrap(),
            report.tr,
            report.ceq_tr,
            report.sr_tr.unwrap(),
        ];
        for (k, v) in ours.iter().enumerate() {
            let expected: f64 = row[k + 1].parse().unwrap();
            assert!(
                (v - expected).abs() <= 1e-10 * (1.0 + expected.abs()),
                "{} column {}: {v} vs {expected}",
                report.strategy,
                k + 1
            );
        }
    }
}

#[test]
fn plugin_on_an_exact_design_is_the_classical_allocation() {
    // Window rows ±√2 e_i reproduce μ Δt and L Lᵀ Δt exactly.
    let dt: f64 = 1.0 / 252.0;
    let mu = DVector::from_vec(vec![0.05, 0.03]);
    let l = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.03, 0.1]);
    let s = 2f64.sqrt();
    let design = [[s, 0.0], [-s, 0.0], [0.0, s], [0.0, -s]];
    let mut returns = DMatrix::zeros(4 + 42, 2);
    for (k, z) in design.iter().enumerate() {
        let shock = &l * DVector::from_vec(z.to_vec());
        for i in 0..2 {
            returns[(k, i)] = mu[i] * dt + shock[i] * dt.sqrt();
        }
    }
    let panel = panel_from_returns(&returns);
    let cfg = BacktestConfig {
        tc: 0.0,
        train_steps: 4,
        plugin_window: 4,
        ..BacktestConfig::default()
    };
    let run = backtest::run_plugin(&panel, &cfg).unwrap();

    let cov = &l * l.transpose();
    let sigma = cov.diagonal().map(f64::sqrt);
    let corr = DMatrix::from_fn(2, 2, |i, j| cov[(i, j)] / (sigma[i] * sigma[j]));
    let model = MarketModel::stationary(0.0, mu.as_slice(), sigma.as_slice(), corr).unwrap();
    let problem = MvProblem::new(cfg.gamma, 1.0, cfg.horizon, model.clone()).unwrap();
    let expected = mv::classical_allocation(
        1.0,
        &problem,
        &problem.profitability(),
        &model.excess_return(0.0),
        &model.inverse_covariance(0.0),
    )
    .unwrap();
    assert!(
        (&run.allocations[0] - &expected).amax() < 1e-9,
        "{} vs {expected}",
        run.allocations[0]
    );
    // Zero returns afterwards: wealth stays at one, the allocation holds for
    // the month, and the next refit sees no excess return at all.
    assert!(run.wealth.iter().all(|w| (w - 1.0).abs() < 1e-12));
    assert!(run.allocations[..21]
        .iter()
        .all(|a| (a - &expected).amax() < 1e-9));
    assert!(run.allocations[21..].iter().all(|a| a.amax() < 1e-12));
}

#[test]
fn index_reproduces_the_index_without_costs() {
    let returns = wiggly_returns(126, 1, 3);
    let index = panel_from_returns(&returns);
    let run = backtest::run_index(&index, &small_cfg(0.0)).unwrap();
    let p = index.prices();
    for (k, w) in run.wealth.iter().enumerate() {
        let expected = p[(42 + k, 0)] / p[(42, 0)];
        assert!((w - expected).abs() < 1e-12);
    }
    let report = compute_metrics(&run, &metrics()).unwrap();
    assert_eq!(report.tr, 0.0);
}

#[test]
fn costs_only_lower_wealth_and_vanish_without_trading_costs() {
    let panel = panel_from_returns(&wiggly_returns(168, 3, 5));
    for run in [
        backtest::run_buy_hold(&panel, &small_cfg(0.0)).unwrap(),
        backtest::run_plugin(&panel, &small_cfg(0.0)).unwrap(),
    ] {
        for (w, g) in run.wealth.iter().zip(&run.gross_wealth) {
            assert!((w - g).abs() < 1e-12);
        }
        let r = compute_metrics(&run, &metrics()).unwrap();
        assert!((r.ceq - r.ceq_tr).abs() < 1e-10);
        assert!((r.sr.unwrap() - r.sr_tr.unwrap()).abs() < 1e-9);
    }
    for run in [
        backtest::run_buy_hold(&panel, &small_cfg(0.003)).unwrap(),
        backtest::run_plugin(&panel, &small_cfg(0.003)).unwrap(),
    ] {
        assert!(run.costs.iter().all(|c| *c >= 0.0));
        assert!(run.terminal_wealth() < *run.gross_wealth.last().unwrap());
    }
}

#[test]
fn asset_order_does_not_matter() {
    let returns = wiggly_returns(168, 3, 9);
    let permuted = DMatrix::from_fn(168, 3, |j, i| returns[(j, [2, 0, 1][i])]);
    let a = panel_from_returns(&returns);
    let b = panel_from_returns(&permuted);
    let cfg = small_cfg(0.003);
    for (x, y) in [
        (
            backtest::run_buy_hold(&a, &cfg).unwrap(),
            backtest::run_buy_hold(&b, &cfg).unwrap(),
        ),
        (
            backtest::run_plugin(&a, &cfg).unwrap(),
            backtest::run_plugin(&b, &cfg).unwrap(),
        ),
    ] {
        for (u, v) in x.wealth.iter().zip(&y.wealth) {
            assert!((u - v).abs() < 1e-10 * u.abs().max(1.0));
        }
    }
}

#[test]
fn sharpe_is_zero_when_returns_average_the_rate() {
    // Nominal monthly returns alternate r/12 ± 1% on a discounted path.
    let rate = 0.02;
    let months = 12;
    let mut times = vec![0.0];
    let mut wealth = vec![1.0];
    for m in 0..months {
        let nominal = rate / 12.0 + if m % 2 == 0 { 0.01 } else { -0.01 };
        let t0 = *times.last().unwrap();
        let w0 = *wealth.last().unwrap();
        for s in 1..=21 {
            // Any intra-month path: only the month ends enter the criteria.
            let t = t0 + s as f64 / 252.0;
            times.push(t);
            wealth.push(w0 * (1.0 + nominal * s as f64 / 21.0) * (-rate * (t - t0)).exp());
        }
    }
    let steps = wealth.len() - 1;
    let run = StrategyRun {
        name: "synthetic".into(),
        times,
        gross_wealth: wealth.clone(),
        wealth,
        allocations: vec![DVector::zeros(1); steps],
        turnover: vec![0.0; steps],
        costs: vec![0.0; steps],
        ruined: false,
    };
    let r = compute_metrics(&run, &MetricsConfig { rate, ..metrics() }).unwrap();
    assert!((r.mean - rate / 12.0).abs() < 1e-12);
    assert!(r.sr.unwrap().abs() < 1e-9);
    let half = compute_metrics(
        &run,
        &MetricsConfig {
            rate,
            ceq: CeqConvention::HalfGamma,
            ..metrics()
        },
    )
    .unwrap();
    assert!((half.ceq - r.ceq - 6.0 * 1.5 * r.std * r.std).abs() < 1e-12);
}

#[test]
fn too_short_runs_are_rejected() {
    let panel = panel_from_returns(&wiggly_returns(42 + 30, 2, 1));
    let run = backtest::run_buy_hold(&panel, &small_cfg(0.0)).unwrap();
    assert!(matches!(
        compute_metrics(&run, &metrics()),
        Err(Error::InsufficientData { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn higher_costs_never_raise_terminal_wealth(salt in 0u64..1000, lo in 0.0f64..0.01, extra in 0.0f64..0.01) {
        let panel = panel_from_returns(&wiggly_returns(126, 2, salt));
        let cheap = backtest::run_buy_hold(&panel, &small_cfg(lo)).unwrap();
        let dear = backtest::run_buy_hold(&panel, &small_cfg(lo + extra)).unwrap();
        prop_assert!(dear.terminal_wealth() <= cheap.terminal_wealth() + 1e-12);
        let cheap = backtest::run_plugin(&panel, &small_cfg(lo)).unwrap();
        let dear = backtest::run_plugin(&panel, &small_cfg(lo + extra)).unwrap();
        prop_assert!(dear.terminal_wealth() <= cheap.terminal_wealth() + 1e-12);
    }
}
