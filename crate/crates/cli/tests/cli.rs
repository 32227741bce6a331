//! Command-line behaviour: output guarding, error lines and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn mvrl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvrl"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        format!(
            "seed = 5\n[market]\nmonths = 30\n[experiment]\nepisodes = 3\ntrain_months = 12\n\
             test_months = 6\nwindow_months = 12\n{extra}"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn missing_output_directories_are_created() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out = mvrl(
        &["simulate", "--config", &config, "--out", "a/b/c"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("a/b/c/panel.csv").exists());
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let args = ["learn", "--config", &config, "--out", "o"];
    assert!(mvrl(&args, dir.path()).status.success());
    let curve = dir.path().join("o/learning_curve_rho0.1.csv");
    let before = std::fs::read(&curve).unwrap();

    let refused = mvrl(&args, dir.path());
    assert_eq!(refused.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&refused.stderr);
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error[exists]:"), "{stderr}");

    let forced = mvrl(
        &[
            "learn", "--config", &config, "--out", "o", "--force", "--seed", "6",
        ],
        dir.path(),
    );
    assert!(forced.status.success());
    assert_ne!(std::fs::read(&curve).unwrap(), before);
}

#[test]
fn zero_episodes_write_only_the_warm_start() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    std::fs::write(
        &config,
        std::fs::read_to_string(&config)
            .unwrap()
            .replace("episodes = 3", "episodes = 0"),
    )
    .unwrap();
    let out = mvrl(&["learn", "--config", &config, "--out", "o"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let curve = std::fs::read_to_string(dir.path().join("o/learning_curve_rho0.1.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2);
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "bogus = 1\n");
    let out = mvrl(&["simulate", "--config", &config], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]:"));

    let config = small_config(dir.path(), "");
    std::fs::write(
        &config,
        std::fs::read_to_string(&config)
            .unwrap()
            .replace("seed = 5", "seed = 5\n[learner]\ngamma = -1.0"),
    )
    .unwrap();
    let out = mvrl(&["simulate", "--config", &config], dir.path());
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn malformed_price_files_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("prices.csv"),
        "date,a,b\n0,1,1\n0.1,1,oops\n",
    )
    .unwrap();
    let config = small_config(dir.path(), "");
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("[market]\n", "[market]\ndata = \"prices.csv\"\n");
    std::fs::write(&config, text).unwrap();
    let out = mvrl(&["backtest", "--config", &config, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(5));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 2"), "{stderr}");
}

#[test]
fn backtest_writes_report_and_wealth_paths() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let out = mvrl(&["backtest", "--config", &config, "--out", "o"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = std::fs::read_to_string(dir.path().join("o/report.csv")).unwrap();
    let names: Vec<&str> = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(names, ["SAC", "Plug-in", "B-H", "Index"]);
    for f in [
        "wealth_sac.csv",
        "wealth_plugin.csv",
        "wealth_bh.csv",
        "wealth_index.csv",
        "sac_trace.csv",
    ] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
}
