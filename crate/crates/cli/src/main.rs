//! `mvrl`: simulate markets, run the learning study, and backtest strategies.

mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mvrl_core::backtest::{self, MetricsConfig};
use mvrl_core::learner::{self, StudyResult};
use mvrl_core::market::{simulate_path, simulate_paths};
use mvrl_core::PricePanel;

use config::{Correlation, InvalidConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "mvrl",
    version,
    about = "Mean-variance portfolio learning and backtesting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seeded simulated price panels.
    Simulate(Common),
    /// Run the episode-based learning study and write error curves.
    Learn(Common),
    /// Run SAC, Plug-in, B-H and Index over the test period and write the report.
    Backtest(Common),
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let cfg = RunConfig::default();
                cfg.validate()?;
                cfg
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.experiment.out = out.clone();
        }
        Ok(cfg)
    }
}

/// Output directory guard: files are only replaced with `--force`.
struct Output {
    dir: PathBuf,
    force: bool,
}

impl Output {
    fn new(dir: &Path, force: bool) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            force,
        })
    }

    /// Checks every name up front so a refused run writes nothing.
    fn claim(&self, names: &[String]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        for name in names {
            let path = self.dir.join(name);
            if path.exists() {
                return Err(anyhow::Error::new(OutputExists(path)));
            }
        }
        Ok(())
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.dir.join(name);
        let file =
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(file))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{} exists; pass --force to overwrite", .0.display())]
struct OutputExists(PathBuf);

fn simulated_panel(cfg: &RunConfig, months: usize) -> Result<PricePanel> {
    let model = cfg.market.model()?;
    let steps = months * cfg.market.steps_per_month;
    Ok(simulate_path(
        &model,
        months as f64 / 12.0,
        steps,
        cfg.seed,
        0,
    )?)
}

fn cmd_simulate(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = Output::new(&cfg.experiment.out, common.force)?;
    let paths = cfg.experiment.paths;
    let names: Vec<String> = if paths == 1 {
        vec!["panel.csv".into()]
    } else {
        (0..paths).map(|k| format!("panel_{k}.csv")).collect()
    };
    out.claim(&names)?;
    let model = cfg.market.model()?;
    let months = cfg.market.months;
    let panels = simulate_paths(
        &model,
        months as f64 / 12.0,
        months * cfg.market.steps_per_month,
        paths,
        cfg.seed,
    )?;
    for (panel, name) in panels.iter().zip(&names) {
        panel.write_csv(out.create(name)?)?;
        log::info!("wrote {}", out.dir.join(name).display());
    }
    Ok(())
}

fn curve_name(rho: f64) -> String {
    format!("learning_curve_rho{rho}.csv")
}

fn write_curve(result: &StudyResult, w: impl std::io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let n = result.true_mu_minus_r.len();
    let mut header = vec!["episode".to_string()];
    header.extend((1..=n).map(|i| format!("mu_error_{i}")));
    header.extend(
        [
            "k_joint_error",
            "k_combined_error",
            "sigma_inv_error",
            "k_joint",
            "k_combined",
        ]
        .map(String::from),
    );
    csv.write_record(&header)?;
    for row in &result.rows {
        let mut rec = vec![row.episode.to_string()];
        rec.extend(row.mu.iter().map(|v| format!("{v}")));
        rec.extend(
            [
                row.k_joint,
                row.k_combined,
                row.sigma_inv,
                row.k_joint_estimate,
                row.k_combined_estimate,
            ]
            .map(|v| format!("{v}")),
        );
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

fn cmd_learn(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = Output::new(&cfg.experiment.out, common.force)?;
    let mut sweep: Vec<Correlation> = vec![cfg.market.rho.clone()];
    sweep.extend(
        cfg.experiment
            .rho_sweep
            .iter()
            .map(|&r| Correlation::Common(r)),
    );
    let labels: Vec<String> = sweep
        .iter()
        .enumerate()
        .map(|(k, rho)| match rho {
            Correlation::Common(r) => curve_name(*r),
            Correlation::Matrix(_) => format!("learning_curve_{k}.csv"),
        })
        .collect();
    let mut names = labels.clone();
    names.push("learning_summary.csv".into());
    out.claim(&names)?;

    let explore = cfg.learner.exploratory()?;
    let study = cfg.study();
    let mut summary = csv::Writer::from_writer(out.create("learning_summary.csv")?);
    summary.write_record([
        "curve",
        "series",
        "warm_start",
        "first_decile",
        "last_decile",
        "final",
        "std",
    ])?;
    for (rho, label) in sweep.iter().zip(&labels) {
        let model = cfg.market.model_with(rho)?;
        let months = cfg.market.months;
        let panel = simulate_path(
            &model,
            months as f64 / 12.0,
            months * cfg.market.steps_per_month,
            cfg.seed,
            0,
        )?;
        let result = learner::run_convergence_study(&panel, &model, &explore, &study)?;
        write_curve(&result, out.create(label)?)?;
        let n = result.true_mu_minus_r.len();
        let mut series: Vec<(String, Vec<f64>)> = (0..n)
            .map(|i| (format!("mu_error_{}", i + 1), result.series(|e| e.mu[i])))
            .collect();
        series.push(("k_joint_error".into(), result.series(|e| e.k_joint)));
        series.push(("k_combined_error".into(), result.series(|e| e.k_combined)));
        for (name, s) in &series {
            let learned = &s[1..];
            let (first, last, std) = if learned.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (
                    learner::decile_mean(learned, false),
                    learner::decile_mean(learned, true),
                    learner::finite_std(learned),
                )
            };
            summary.write_record([
                label.clone(),
                name.clone(),
                format!("{}", s[0]),
                format!("{first}"),
                format!("{last}"),
                format!("{}", s[s.len() - 1]),
                format!("{std}"),
            ])?;
        }
        log::info!("wrote {}", out.dir.join(label).display());
    }
    summary.flush()?;
    Ok(())
}

fn cmd_backtest(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let out = Output::new(&cfg.experiment.out, common.force)?;
    let strategies = ["SAC", "Plug-in", "B-H", "Index"];
    let mut names: Vec<String> = vec!["report.csv".into(), "sac_trace.csv".into()];
    names.extend(strategies.iter().map(|s| wealth_name(s)));
    out.claim(&names)?;

    let panel = match &cfg.market.data {
        Some(path) => backtest::ingest_prices_file(path, cfg.market.rate)
            .with_context(|| format!("ingesting {}", path.display()))?,
        None => simulated_panel(
            &cfg,
            cfg.experiment.train_months + cfg.experiment.test_months,
        )?,
    };
    let index = match &cfg.market.index {
        Some(path) => {
            let index = backtest::ingest_prices_file(path, cfg.market.rate)
                .with_context(|| format!("ingesting {}", path.display()))?;
            if index.times() != panel.times() {
                bail!("index dates do not match the price panel");
            }
            index
        }
        None => backtest::equal_weight_index(&panel)?,
    };
    let bt = cfg.backtest();
    let explore = cfg.learner.exploratory()?;
    let sac = learner::run_online_sac(&panel, &cfg.online(), &explore)?;
    let runs = [
        sac.run.clone(),
        backtest::run_plugin(&panel, &bt)?,
        backtest::run_buy_hold(&panel, &bt)?,
        backtest::run_index(&index, &bt)?,
    ];
    let metrics = MetricsConfig {
        gamma: cfg.learner.gamma,
        rate: cfg.market.rate,
        month_steps: cfg.market.steps_per_month,
        ceq: cfg.experiment.ceq,
    };
    let reports = runs
        .iter()
        .map(|r| backtest::compute_metrics(r, &metrics))
        .collect::<mvrl_core::Result<Vec<_>>>()?;
    backtest::write_report(&reports, out.create("report.csv")?)?;
    sac.write_trace(out.create("sac_trace.csv")?)?;
    for run in &runs {
        if run.ruined {
            log::warn!("{} was ruined after {} steps", run.name, run.steps());
        }
        run.write_csv(out.create(&wealth_name(&run.name))?)?;
    }
    log::info!("wrote report to {}", out.dir.join("report.csv").display());
    Ok(())
}

fn wealth_name(strategy: &str) -> String {
    format!("wealth_{}.csv", strategy.to_lowercase().replace('-', ""))
}

/// One-word error category for the failure line.
fn category(err: &anyhow::Error) -> &'static str {
    if err.chain().any(|c| c.is::<InvalidConfig>()) {
        return "config";
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<mvrl_core::Error>() {
            return e.category();
        }
        if cause.is::<OutputExists>() {
            return "exists";
        }
        if cause.is::<toml::de::Error>() {
            return "config";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "config"
}

fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "io" => 3,
        "exists" => 4,
        "parse" | "data" => 5,
        _ => 6,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Learn(c) => cmd_learn(c),
        Command::Backtest(c) => cmd_backtest(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let cat = category(&err);
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("error[{cat}]: {msg}");
            ExitCode::from(exit_code(cat))
        }
    }
}
