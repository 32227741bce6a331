use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mvrl_core::backtest::{self, BacktestConfig};
use mvrl_core::exploratory::{evaluate_policy, policy_iterate, ExploratoryConfig, GaussianPolicy};
use mvrl_core::learner::{update_joint_learner, JointLearnerState, StepSizes};
use mvrl_core::market::simulate_path;
use mvrl_core::{DMatrix, DVector, MarketModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup() -> (ExploratoryConfig, MarketModel) {
    (
        ExploratoryConfig::new(1.0, 1.5, 1.0, 1.0 / 12.0).unwrap(),
        MarketModel::typical_pair(0.1).unwrap(),
    )
}

fn start_policy(horizon: f64) -> GaussianPolicy {
    GaussianPolicy::constant(
        horizon,
        2.0,
        DVector::from_vec(vec![3.0, 1.5]),
        -1.0,
        DMatrix::identity(2, 2),
    )
    .unwrap()
}

fn bench_exploratory(c: &mut Criterion) {
    let (cfg, model) = setup();
    let policy = start_policy(cfg.horizon);
    c.bench_function("evaluate_policy", |b| {
        b.iter(|| evaluate_policy(&policy, &cfg, &model).unwrap())
    });
    c.bench_function("policy_iterate", |b| {
        b.iter(|| policy_iterate(&policy, &cfg, &model, 1e-13, 20).unwrap())
    });
}

fn bench_learner(c: &mut Criterion) {
    let (cfg, model) = setup();
    let panel = simulate_path(&model, 1.0 / 12.0, 21, 1, 0).unwrap();
    let window = panel.returns().clone();
    let state = JointLearnerState::warm_start(
        &cfg,
        model.excess_return(0.0),
        model.inverse_covariance(0.0),
        StepSizes::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("update_joint_learner", |b| {
        b.iter(|| {
            update_joint_learner(&state, &cfg, 0.0, 1.0, &window, 1.0 / 252.0, &mut rng).unwrap()
        })
    });
}

fn bench_market(c: &mut Criterion) {
    let (_, model) = setup();
    c.bench_function("simulate_path_10y_daily", |b| {
        b.iter(|| simulate_path(&model, 10.0, 2520, 3, 0).unwrap())
    });
    let panel = simulate_path(&model, 25.0, 300 * 21, 4, 0).unwrap();
    c.bench_function("run_plugin_156_months", |b| {
        b.iter_batched(
            BacktestConfig::default,
            |cfg| backtest::run_plugin(&panel, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_exploratory, bench_learner, bench_market);
criterion_main!(benches);
