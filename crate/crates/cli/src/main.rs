//! `optbt` — straddle research engine command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use optbt::backtest::{
    exposure_calendar, parse_positions_csv, portfolio_returns, write_cumulative_csv,
    write_positions_csv, write_returns_csv, write_sweep_csv, cost_sweep, PortfolioReturns,
    DEFAULT_BLOCK_YEARS, DEFAULT_COST_GRID,
};
use optbt::models::{Architecture, Checkpoint};
use optbt::pipeline::{
    evaluation_periods, load_panel, model_report, run_model, run_strategy, strategy_report,
    LoadedPanel, ModelRunConfig, Report,
};
use optbt::strategies::Strategy;
use optbt::synth::{generate_option_chain_csv, SynthSpec};
use optbt::training::write_log_csv;
use optbt::Error;

#[derive(Parser)]
#[command(name = "optbt", version, about = "Delta-neutral straddle trading research engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest and form straddles; writes the feature panel and a summary.
    Ingest {
        #[arg(long, default_value = "./data")]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit a synthetic options.csv / stocks.csv pair.
    Synth(SynthArgs),
    /// Backtest a rules-based strategy.
    Backtest {
        #[arg(long)]
        strategy: String,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Walk-forward training and out-of-sample evaluation of a network.
    Train(TrainArgs),
    /// Cost sweep over a finished run's positions.
    Sweep {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated bps grid.
        #[arg(long)]
        costs: Option<String>,
    },
    /// Print the metrics of one or more finished runs.
    Report {
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    stocks: usize,
    #[arg(long, default_value_t = 120)]
    months: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    rho: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.02)]
    daily_vol: f64,
    #[arg(long, default_value_t = 2010)]
    start_year: i32,
    #[arg(long, default_value_t = 1)]
    start_month: u32,
    #[arg(long, default_value_t = 0.005)]
    half_spread: f64,
    #[arg(long)]
    skewed_deltas: bool,
    #[arg(long, default_value = "./data")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "./data")]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated bps grid for the cost sweep.
    #[arg(long)]
    costs: Option<String>,
    #[arg(long, default_value_t = DEFAULT_BLOCK_YEARS)]
    block_years: i32,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: String,
    /// Comma-separated seed list.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Turnover regularization cost in bps (0 = plain Sharpe loss).
    #[arg(long, default_value_t = 0.0)]
    tc_reg: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[command(flatten)]
    common: RunArgs,
}

enum CliError {
    Config(String),
    Data(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Data(m)) => {
            eprintln!("data error: {m}");
            ExitCode::from(3)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("OPTBT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("OPTBT_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Ingest { data_dir, out } => cmd_ingest(&data_dir, &out),
        Command::Synth(a) => cmd_synth(a),
        Command::Backtest { strategy, common } => cmd_backtest(&strategy, &common),
        Command::Train(a) => cmd_train(a),
        Command::Sweep { run, costs } => cmd_sweep(&run, costs.as_deref()),
        Command::Report { run } => cmd_report(&run),
    }
}

fn parse_list<T: FromStr>(flag: &str, s: &str) -> CliResult<Vec<T>> {
    let out = s
        .split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| CliError::Config(format!("--{flag}: cannot parse `{t}`")))
        })
        .collect::<CliResult<Vec<T>>>()?;
    if out.is_empty() {
        return Err(CliError::Config(format!("--{flag}: empty list")));
    }
    Ok(out)
}

fn cost_grid(costs: Option<&str>) -> CliResult<Vec<f64>> {
    let grid = match costs {
        None => DEFAULT_COST_GRID.to_vec(),
        Some(s) => parse_list::<f64>("costs", s)?,
    };
    if grid.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(CliError::Config("--costs: values must be finite and non-negative".into()));
    }
    Ok(grid)
}

/// Writes through a sibling temp file, then renames over `path`.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> optbt::Result<()>) -> CliResult<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp).map_err(|e| io_err(&tmp, e))?);
        f(&mut w).map_err(CliError::from)?;
        w.flush().map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn load(data_dir: &Path) -> CliResult<LoadedPanel> {
    let options = data_dir.join("options.csv");
    let stocks = data_dir.join("stocks.csv");
    for p in [&options, &stocks] {
        if !p.is_file() {
            return Err(CliError::Data(format!("{}: file not found", p.display())));
        }
    }
    let loaded = load_panel(&options, &stocks).map_err(|e| match e {
        Error::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Data(format!("{}: {other}", data_dir.display())),
    })?;
    if loaded.panel.stocks.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no straddle could be formed ({} rejected)",
            data_dir.display(),
            loaded.n_rejected
        )));
    }
    Ok(loaded)
}

fn cmd_ingest(data_dir: &Path, out: &Path) -> CliResult<()> {
    let loaded = load(data_dir)?;
    write_atomic(&out.join("features.csv"), |w| loaded.panel.write_features_csv(w))?;
    let summary = json!({
        "version": optbt::pipeline::VERSION,
        "quotes": loaded.n_quotes,
        "straddles": loaded.n_straddles,
        "rejected": loaded.n_rejected,
        "stocks": loaded.panel.stocks.len(),
        "panel_days": loaded.panel.n_days(),
        "first_date": loaded.panel.first_date(),
        "last_date": loaded.panel.last_date(),
    });
    write_json(&out.join("ingest.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary).unwrap_or_default());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let spec = SynthSpec {
        n_stocks: a.stocks,
        n_months: a.months,
        start_year: a.start_year,
        start_month: a.start_month,
        ar1_rho: a.rho,
        daily_vol: a.daily_vol,
        seed: a.seed,
        half_spread: a.half_spread,
        skewed_deltas: a.skewed_deltas,
        ..SynthSpec::default()
    };
    if !(1..=12).contains(&a.start_month) {
        return Err(CliError::Config("--start-month must be in 1..=12".into()));
    }
    spec.validate()?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let pid = std::process::id();
    let tmp_o = a.out.join(format!(".options.csv.tmp{pid}"));
    let tmp_s = a.out.join(format!(".stocks.csv.tmp{pid}"));
    let res = generate_option_chain_csv(&spec, &tmp_o, &tmp_s);
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp_o);
        let _ = fs::remove_file(&tmp_s);
        return Err(e.into());
    }
    for (tmp, name) in [(&tmp_o, "options.csv"), (&tmp_s, "stocks.csv")] {
        let dst = a.out.join(name);
        fs::rename(tmp, &dst).map_err(|e| io_err(&dst, e))?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn write_run_outputs(out: &Path, report: &Report, portfolio: &PortfolioReturns) -> CliResult<()> {
    write_atomic(&out.join("returns.csv"), |w| {
        write_returns_csv(&portfolio.dates, &portfolio.returns, w)
    })?;
    write_atomic(&out.join("cumulative.csv"), |w| {
        write_cumulative_csv(&portfolio.dates, &portfolio.returns, w)
    })?;
    write_atomic(&out.join("positions.csv"), |w| {
        write_positions_csv(&portfolio.exposures, w)
    })?;
    write_atomic(&out.join("sweep.csv"), |w| {
        write_sweep_csv(&report.evaluation.cost_sweep, w)
    })?;
    write_json(&out.join("report.json"), report)?;
    let m = &report.evaluation.metrics;
    println!(
        "{}: days={} E[R]={:.4} vol={:.4} sharpe={:.3} mdd={:.4}",
        report.name, report.evaluation.n_days, m.expected_return, m.volatility, m.sharpe, m.mdd
    );
    Ok(())
}

fn cmd_backtest(strategy: &str, common: &RunArgs) -> CliResult<()> {
    let strategy = Strategy::from_str(strategy)?;
    let grid = cost_grid(common.costs.as_deref())?;
    if common.block_years < 1 {
        return Err(CliError::Config("--block-years must be at least 1".into()));
    }
    let loaded = load(&common.data_dir)?;
    let (_, periods) = evaluation_periods(&loaded.panel, common.block_years)?;
    let run = run_strategy(&loaded.panel, strategy, &periods)?;
    let config = json!({
        "data_dir": common.data_dir,
        "strategy": strategy.to_string(),
        "target_vol": optbt::indicators::TARGET_VOL,
        "cost_grid": grid,
        "block_years": common.block_years,
    });
    let report = strategy_report(&run, &periods, &grid, config)?;
    write_run_outputs(&common.out, &report, &run.portfolio)
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let arch = Architecture::from_str(&a.model)?;
    let seeds = parse_list::<u64>("seeds", &a.seeds)?;
    let grid = cost_grid(a.common.costs.as_deref())?;
    if a.trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    if !a.tc_reg.is_finite() || a.tc_reg < 0.0 {
        return Err(CliError::Config("--tc-reg must be finite and non-negative".into()));
    }
    if a.common.block_years < 1 {
        return Err(CliError::Config("--block-years must be at least 1".into()));
    }
    let mut cfg = ModelRunConfig::new(arch);
    cfg.seeds = seeds;
    cfg.n_trials = a.trials;
    cfg.block_years = a.common.block_years;
    cfg.base.tc_reg_cost_bps = a.tc_reg;
    if let Some(e) = a.max_epochs {
        cfg.base.max_epochs = e;
    }
    if let Some(p) = a.patience {
        cfg.base.patience = p;
    }
    cfg.base.validate()?;

    let loaded = load(&a.common.data_dir)?;
    let run = run_model(&loaded.panel, &cfg)?;
    let config = json!({
        "data_dir": a.common.data_dir,
        "model": &cfg,
        "target_vol": optbt::indicators::TARGET_VOL,
        "cost_grid": grid,
    });
    let report = model_report(&run, &grid, config)?;

    let out = &a.common.out;
    for (k, w) in run.windows.iter().enumerate() {
        for s in &w.seeds {
            let stem = format!("w{k}_seed{}", s.seed);
            let hyper = json!({ "window": w.window, "config": s.best_config });
            let ckpt = Checkpoint::new(&s.params, hyper);
            write_atomic(&out.join("checkpoints").join(format!("{stem}.json")), |f| ckpt.write(f))?;
            write_atomic(&out.join("logs").join(format!("{stem}.csv")), |f| write_log_csv(&s.log, f))?;
            write_json(&out.join("best_config").join(format!("{stem}.json")), &s.best_config)?;
            write_json(&out.join("trials").join(format!("{stem}.json")), &s.trials)?;
        }
    }
    write_run_outputs(out, &report, &run.ensemble)
}

fn cmd_sweep(run: &Path, costs: Option<&str>) -> CliResult<()> {
    let grid = cost_grid(costs)?;
    let path = run.join("positions.csv");
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    let exposures = parse_positions_csv(BufReader::new(file)).map_err(|e| io_err(&path, e))?;
    let calendar = exposure_calendar(&exposures);
    let portfolio = portfolio_returns(&calendar, exposures).map_err(|e| io_err(&path, e))?;
    let rows = cost_sweep(&portfolio, &grid)?;
    write_atomic(&run.join("sweep.csv"), |w| write_sweep_csv(&rows, w))?;
    for r in &rows {
        println!("{:>6} bps  sharpe {:.4}", r.cost_bps, r.sharpe);
    }
    Ok(())
}

fn cmd_report(runs: &[PathBuf]) -> CliResult<()> {
    println!(
        "{:<24} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "run", "E[R]", "vol", "sharpe", "sortino", "mdd", "hit"
    );
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    for run in runs {
        let path = run.join("report.json");
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
        let m = &v["evaluation"]["metrics"];
        let num = |k: &str| m[k].as_f64();
        let name = v["name"].as_str().unwrap_or("?");
        println!(
            "{:<24} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            name,
            opt(num("expected_return")),
            opt(num("volatility")),
            opt(num("sharpe")),
            opt(num("sortino")),
            opt(num("mdd")),
            opt(num("hit_rate")),
        );
    }
    Ok(())
}
