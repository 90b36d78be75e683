//! End-to-end runs: panel loading, rules-based and trained-model
//! walk-forward backtests, and the reports both produce.

use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::backtest::{
    compute_metrics, cost_sweep, expanding_windows, portfolio_returns, rescale_to_target_vol,
    vol_scale_factor, BacktestWindow, Exposure, MetricsReport, PortfolioReturns, StraddleKey,
    SweepRow, DEFAULT_BLOCK_YEARS,
};
use crate::error::{Error, Result};
use crate::indicators::TARGET_VOL;
use crate::market_data::{form_straddles, ingest_csv};
use crate::models::{Architecture, ModelParams};
use crate::panel::Panel;
use crate::strategies::{generate_signals, Strategy};
use crate::training::{
    chronological_split, days_in_range, random_search, stock_positions, EpochLog, SearchSpace,
    TrainConfig, TrialRecord,
};

pub const VERSION: &str = concat!("optbt ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub panel: Panel,
    pub n_quotes: usize,
    pub n_straddles: usize,
    pub n_rejected: usize,
}

/// Ingests `options.csv` / `stocks.csv`, forms straddles and stitches the panel.
pub fn load_panel(options: &Path, stocks: &Path) -> Result<LoadedPanel> {
    let (quotes, prices) = ingest_csv(options, stocks)?;
    let formed = form_straddles(&quotes, &prices)?;
    let n_straddles = formed.straddles.len();
    Ok(LoadedPanel {
        panel: Panel::from_straddles(formed.straddles),
        n_quotes: quotes.len(),
        n_straddles,
        n_rejected: formed.rejected.len(),
    })
}

/// Inclusive date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d <= self.end
    }
}

/// Test blocks of the expanding-window protocol; the whole panel when it is
/// too short for one window.
pub fn evaluation_periods(panel: &Panel, block_years: i32) -> Result<(Vec<BacktestWindow>, Vec<Period>)> {
    let (start, end) = panel_bounds(panel)?;
    match expanding_windows(start, end, block_years) {
        Ok(w) => {
            let periods = w
                .iter()
                .map(|w| Period {
                    start: w.test_start,
                    end: w.test_end,
                })
                .collect();
            Ok((w, periods))
        }
        Err(Error::SpanTooShort { .. }) => Ok((Vec::new(), vec![Period { start, end }])),
        Err(e) => Err(e),
    }
}

fn panel_bounds(panel: &Panel) -> Result<(NaiveDate, NaiveDate)> {
    match (panel.first_date(), panel.last_date()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::InsufficientHistory {
            needed: 1,
            available: 0,
        }),
    }
}

/// Exposures for every panel day inside `periods`, positions given per
/// stock and aligned with its days.
pub fn exposures_from_positions(panel: &Panel, positions: &[Vec<f64>], periods: &[Period]) -> Result<Vec<Exposure>> {
    if positions.len() != panel.stocks.len() {
        return Err(Error::Alignment(format!(
            "{} position series for {} stocks",
            positions.len(),
            panel.stocks.len()
        )));
    }
    let mut out = Vec::new();
    for (stock, pos) in panel.stocks.iter().zip(positions) {
        for (k, day) in stock.days.iter().enumerate() {
            if !periods.iter().any(|p| p.contains(day.date)) {
                continue;
            }
            let x = *pos.get(k).ok_or_else(|| {
                Error::Alignment(format!("{}: no position for {}", stock.underlying, day.date))
            })?;
            out.push(Exposure {
                date: day.date,
                key: StraddleKey {
                    underlying: stock.underlying.clone(),
                    formation: stock.straddles[day.straddle].definition.formation_date,
                },
                position: x,
                sigma_ann: day.vol.sigma_ann,
                ret_next: day.ret_next,
            });
        }
    }
    Ok(out)
}

/// Trading days of the panel inside `periods`.
pub fn period_calendar(panel: &Panel, periods: &[Period]) -> Vec<NaiveDate> {
    panel
        .calendar()
        .into_iter()
        .filter(|d| periods.iter().any(|p| p.contains(*d)))
        .collect()
}

/// Evaluation summary shared by strategy and model runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub periods: Vec<Period>,
    pub n_days: usize,
    pub metrics: MetricsReport,
    /// Factor that brings the raw series to 15% annualized vol.
    pub vol_scale_factor: f64,
    pub metrics_rescaled: MetricsReport,
    pub cost_sweep: Vec<SweepRow>,
}

pub fn evaluate_portfolio(portfolio: &PortfolioReturns, periods: &[Period], cost_grid: &[f64]) -> Result<Evaluation> {
    let metrics = compute_metrics(&portfolio.returns)?;
    let k = vol_scale_factor(&portfolio.returns, TARGET_VOL)?;
    let rescaled = rescale_to_target_vol(&portfolio.returns, TARGET_VOL)?;
    Ok(Evaluation {
        periods: periods.to_vec(),
        n_days: portfolio.dates.len(),
        metrics,
        vol_scale_factor: k,
        metrics_rescaled: compute_metrics(&rescaled)?,
        cost_sweep: cost_sweep(portfolio, cost_grid)?,
    })
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub portfolio: PortfolioReturns,
}

/// Rules-based strategy over `periods`.
pub fn run_strategy(panel: &Panel, strategy: Strategy, periods: &[Period]) -> Result<StrategyRun> {
    let signals = generate_signals(panel, strategy)?;
    let positions: Vec<Vec<f64>> = signals.into_iter().map(|s| s.values).collect();
    let exposures = exposures_from_positions(panel, &positions, periods)?;
    let portfolio = portfolio_returns(&period_calendar(panel, periods), exposures)?;
    Ok(StrategyRun { strategy, portfolio })
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelRunConfig {
    pub architecture: Architecture,
    pub seeds: Vec<u64>,
    pub n_trials: usize,
    pub space: SearchSpace,
    /// Fixed fields (epochs, patience, turnover cost) for every trial.
    pub base: TrainConfig,
    pub block_years: i32,
}

impl ModelRunConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            seeds: vec![1],
            n_trials: 100,
            space: SearchSpace::default(),
            base: TrainConfig::new(architecture),
            block_years: DEFAULT_BLOCK_YEARS,
        }
    }
}

/// One seed's search and frozen model for one window.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub best_index: usize,
    pub best_config: TrainConfig,
    pub best_val_loss: f64,
    pub trials: Vec<TrialRecord>,
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Out-of-sample positions per stock over the window's test days
    /// (entries outside the test block are unused).
    pub positions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct WindowRun {
    pub window: BacktestWindow,
    pub seeds: Vec<SeedRun>,
}

#[derive(Debug, Clone)]
pub struct ModelRun {
    pub config: ModelRunConfig,
    pub windows: Vec<WindowRun>,
    pub periods: Vec<Period>,
    /// Seed-averaged positions.
    pub ensemble: PortfolioReturns,
    pub per_seed: Vec<PortfolioReturns>,
}

/// Positions of frozen parameters for each stock, covering its days up to
/// `end`.
pub fn model_positions(params: &ModelParams, panel: &Panel, end: NaiveDate) -> Result<Vec<Vec<f64>>> {
    panel
        .stocks
        .par_iter()
        .map(|stock| {
            let upto = stock.days.iter().take_while(|d| d.date <= end).count();
            stock_positions(params, stock, upto)
        })
        .collect()
}

/// Expanding-window protocol: per window and seed, random search on the
/// training block, then frozen out-of-sample positions on the test block.
pub fn run_model(panel: &Panel, config: &ModelRunConfig) -> Result<ModelRun> {
    if config.seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let mut base = config.base.clone();
    base.architecture = config.architecture;
    base.validate()?;
    let (start, end) = panel_bounds(panel)?;
    let windows = expanding_windows(start, end, config.block_years)?;
    let mut runs = Vec::with_capacity(windows.len());
    for window in &windows {
        let refs = days_in_range(panel, window.train_start, window.train_end);
        let split = chronological_split(panel, &refs)?;
        let seeds = config
            .seeds
            .par_iter()
            .map(|&seed| {
                let found = random_search(panel, &split, &config.space, &base, config.n_trials, seed)?;
                let positions = model_positions(&found.outcome.params, panel, window.test_end)?;
                Ok(SeedRun {
                    seed,
                    best_index: found.best_index,
                    best_config: found.best_config,
                    best_val_loss: found.outcome.best_val_loss,
                    trials: found.trials,
                    params: found.outcome.params,
                    log: found.outcome.log,
                    positions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        runs.push(WindowRun {
            window: *window,
            seeds,
        });
    }
    let periods: Vec<Period> = windows
        .iter()
        .map(|w| Period {
            start: w.test_start,
            end: w.test_end,
        })
        .collect();
    let calendar = period_calendar(panel, &periods);

    // stitch each window's test-block positions into one per-stock series
    let stitch = |pick: &dyn Fn(&WindowRun) -> Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = panel.stocks.iter().map(|s| vec![0.0; s.days.len()]).collect();
        for run in &runs {
            let pos = pick(run);
            for (s, stock) in panel.stocks.iter().enumerate() {
                for (k, day) in stock.days.iter().enumerate() {
                    if day.date >= run.window.test_start && day.date <= run.window.test_end {
                        out[s][k] = pos[s][k];
                    }
                }
            }
        }
        out
    };
    let n_seeds = config.seeds.len();
    let ensemble_positions = stitch(&|run: &WindowRun| {
        let mut avg: Vec<Vec<f64>> = run.seeds[0].positions.iter().map(|p| vec![0.0; p.len()]).collect();
        for seed in &run.seeds {
            for (a, p) in avg.iter_mut().zip(&seed.positions) {
                for (x, y) in a.iter_mut().zip(p) {
                    *x += y / n_seeds as f64;
                }
            }
        }
        avg
    });
    let ensemble = portfolio_returns(
        &calendar,
        exposures_from_positions(panel, &ensemble_positions, &periods)?,
    )?;
    let per_seed = (0..n_seeds)
        .map(|i| {
            let pos = stitch(&|run: &WindowRun| run.seeds[i].positions.clone());
            portfolio_returns(&calendar, exposures_from_positions(panel, &pos, &periods)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelRun {
        config: config.clone(),
        windows: runs,
        periods,
        ensemble,
        per_seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_trial: usize,
    pub best_config: TrainConfig,
    pub best_val_loss: f64,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowSummary {
    pub window: BacktestWindow,
    pub seeds: Vec<SeedSummary>,
}

/// Deterministic JSON report: no timings, no paths beyond those configured.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub version: String,
    pub command: String,
    pub name: String,
    pub config: serde_json::Value,
    pub evaluation: Evaluation,
    /// Per-seed metrics for model runs.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub seed_metrics: Vec<(u64, MetricsReport)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub windows: Vec<WindowSummary>,
}

pub fn strategy_report(run: &StrategyRun, periods: &[Period], cost_grid: &[f64], config: serde_json::Value) -> Result<Report> {
    Ok(Report {
        version: VERSION.to_string(),
        command: "backtest".into(),
        name: run.strategy.to_string(),
        config,
        evaluation: evaluate_portfolio(&run.portfolio, periods, cost_grid)?,
        seed_metrics: Vec::new(),
        windows: Vec::new(),
    })
}

pub fn model_report(run: &ModelRun, cost_grid: &[f64], config: serde_json::Value) -> Result<Report> {
    let seed_metrics = run
        .config
        .seeds
        .iter()
        .zip(&run.per_seed)
        .map(|(s, p)| Ok((*s, compute_metrics(&p.returns)?)))
        .collect::<Result<Vec<_>>>()?;
    let windows = run
        .windows
        .iter()
        .map(|w| WindowSummary {
            window: w.window,
            seeds: w
                .seeds
                .iter()
                .map(|s| SeedSummary {
                    seed: s.seed,
                    best_trial: s.best_index,
                    best_config: s.best_config.clone(),
                    best_val_loss: s.best_val_loss,
                    trials: s.trials.clone(),
                })
                .collect(),
        })
        .collect();
    Ok(Report {
        version: VERSION.to_string(),
        command: "train".into(),
        name: run.config.architecture.to_string(),
        config,
        evaluation: evaluate_portfolio(&run.ensemble, &run.periods, cost_grid)?,
        seed_metrics,
        windows,
    })
}
