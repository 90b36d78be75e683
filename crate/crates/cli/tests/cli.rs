use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn optbt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optbt"))
        .args(args)
        .env("OPTBT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, rho: &str) {
    let out = optbt(&[
        "synth", "--stocks", "4", "--months", "26", "--rho", rho, "--seed", "7", "--out", p(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn synth_backtest_sweep_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("runs/a");
    synth(&data, "-0.2");
    assert!(data.join("options.csv").is_file());
    assert!(data.join("stocks.csv").is_file());

    let out = optbt(&["backtest", "--strategy", "tsmr", "--data-dir", p(&data), "--out", p(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "returns.csv", "cumulative.csv", "positions.csv", "sweep.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert!(report["version"].as_str().unwrap().starts_with("optbt "));
    assert_eq!(report["config"]["strategy"], "tsmr");
    let original_sweep = fs::read_to_string(run.join("sweep.csv")).unwrap();

    let out = optbt(&["sweep", "--run", p(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&run.join("sweep.csv")), 1 + 8);
    // re-derived from positions.csv, the sweep matches the in-process one
    assert_eq!(fs::read_to_string(run.join("sweep.csv")).unwrap(), original_sweep);

    let out = optbt(&["sweep", "--run", p(&run), "--costs", "0,10"]);
    assert!(out.status.success());
    let text = fs::read_to_string(run.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("cost_bps,sharpe"));
    assert_eq!(text.lines().count(), 1 + 2);

    let out = optbt(&["report", "--run", p(&run)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("tsmr"));

    let out = optbt(&["ingest", "--data-dir", p(&data), "--out", p(&tmp.path().join("ing"))]);
    assert!(out.status.success());
    assert!(tmp.path().join("ing/features.csv").is_file());
    // no temp files left behind
    for entry in fs::read_dir(&run).unwrap() {
        let name = entry.unwrap().file_name();
        assert!(!name.to_string_lossy().contains(".tmp"));
    }
}

#[test]
fn unknown_strategy_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = optbt(&["backtest", "--strategy", "nope", "--data-dir", p(tmp.path()), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tsmr") && err.contains("csheston_mr_12"), "{err}");
}

#[test]
fn bad_flags_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = p(tmp.path());
    assert_eq!(optbt(&["train", "--model", "gru", "--data-dir", d, "--out", d]).status.code(), Some(2));
    assert_eq!(optbt(&["train", "--model", "linear", "--seeds", "x", "--data-dir", d, "--out", d]).status.code(), Some(2));
    assert_eq!(optbt(&["synth", "--rho", "1.5", "--out", d]).status.code(), Some(2));
    assert_eq!(optbt(&["backtest", "--strategy", "tsmr", "--costs", "-1", "--data-dir", d, "--out", d]).status.code(), Some(2));
}

#[test]
fn missing_stocks_file_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "0");
    fs::remove_file(data.join("stocks.csv")).unwrap();
    let out = optbt(&["backtest", "--strategy", "tsmr", "--data-dir", p(&data), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stocks.csv"));
}

#[test]
fn malformed_row_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "0");
    let mut text = fs::read_to_string(data.join("stocks.csv")).unwrap();
    text.push_str("SYN000,2030-01-02,abc\n");
    fs::write(data.join("stocks.csv"), text).unwrap();
    let out = optbt(&["backtest", "--strategy", "tsmr", "--data-dir", p(&data), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row"));
}

#[test]
fn train_writes_checkpoints_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "-0.2");
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = optbt(&[
            "train", "--model", "linear", "--seeds", "1,2", "--trials", "2", "--max-epochs", "3",
            "--tc-reg", "5", "--block-years", "1", "--data-dir", p(&data), "--out", p(&dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let a = run("a");
    let b = run("b");
    let ra = fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("report.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["config"]["model"]["base"]["tc_reg_cost_bps"], 5.0);
    let windows = report["windows"].as_array().unwrap().len();
    assert!(windows >= 1);
    let ckpts = fs::read_dir(a.join("checkpoints")).unwrap().count();
    assert_eq!(ckpts, 2 * windows);
    assert!(a.join("checkpoints/w0_seed1.json").is_file());
    assert!(a.join("logs/w0_seed2.csv").is_file());
    assert!(a.join("trials/w0_seed1.json").is_file());
    assert!(a.join("best_config/w0_seed1.json").is_file());
}
