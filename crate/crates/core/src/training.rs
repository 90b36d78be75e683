//! Direct Sharpe-ratio optimization of position-sizing networks.
//!
//! A minibatch is a set of straddle-days; each element contributes the
//! vol-scaled return `X * (sigma_tgt / sigma) * r`. The loss is the negative
//! annualized Sharpe ratio of those contributions, optionally net of a
//! proportional turnover charge against the previous day's position.

use std::time::Instant;

use chrono::NaiveDate;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::indicators::{FEATURE_DIM, SQRT_TRADING_DAYS, TARGET_VOL};
use crate::models::{
    bind_params, forward, predict, Architecture, Dropout, InputWindow, ModelInput, ModelParams,
    SEQUENCE_WINDOW,
};
use crate::panel::{Panel, StockHistory};

/// Guard inside the Sharpe denominator.
pub const SHARPE_EPS: f64 = 1e-12;
pub const DEFAULT_PATIENCE: usize = 25;
pub const DEFAULT_MAX_EPOCHS: usize = 300;
pub const TRAIN_FRACTION: f64 = 0.9;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Rows evaluated per inference call.
const INFERENCE_CHUNK: usize = 512;

// ---------------------------------------------------------------------------
// losses on plain slices

fn check_lengths(positions: &[f64], factors: &[f64], returns: &[f64]) -> Result<()> {
    if positions.len() != factors.len() || positions.len() != returns.len() {
        return Err(Error::ShapeMismatch(format!(
            "positions {}, factors {}, returns {}",
            positions.len(),
            factors.len(),
            returns.len()
        )));
    }
    if positions.len() < 2 {
        return Err(Error::BatchTooSmall(positions.len()));
    }
    Ok(())
}

/// Negative annualized Sharpe ratio of a return sample, with the `1e-12`
/// variance guard.
pub fn loss_from_returns(r: &[f64]) -> f64 {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let second = r.iter().map(|x| x * x).sum::<f64>() / n;
    -mean * SQRT_TRADING_DAYS / (second - mean * mean + SHARPE_EPS).sqrt()
}

pub fn sharpe_loss(positions: &[f64], factors: &[f64], returns: &[f64]) -> Result<f64> {
    check_lengths(positions, factors, returns)?;
    let r: Vec<f64> = positions
        .iter()
        .zip(factors)
        .zip(returns)
        .map(|((x, f), r)| x * f * r)
        .collect();
    Ok(loss_from_returns(&r))
}

/// Turnover-adjusted contributions: `X f r - c |X f - X_prev f_prev|`, with
/// `c` in basis points. A straddle's first day carries `X_prev = 0`.
pub fn turnover_adjusted_returns(
    positions: &[f64],
    factors: &[f64],
    returns: &[f64],
    prev_positions: &[f64],
    prev_factors: &[f64],
    c_bps: f64,
) -> Result<Vec<f64>> {
    if prev_positions.len() != positions.len() || prev_factors.len() != positions.len() {
        return Err(Error::MissingLinkage(format!(
            "{} elements but {} previous positions and {} previous factors",
            positions.len(),
            prev_positions.len(),
            prev_factors.len()
        )));
    }
    let c = c_bps * 1e-4;
    Ok((0..positions.len())
        .map(|i| {
            let q = positions[i] * factors[i];
            let q_prev = prev_positions[i] * prev_factors[i];
            q * returns[i] - c * (q - q_prev).abs()
        })
        .collect())
}

pub fn turnover_adjusted_loss(
    positions: &[f64],
    factors: &[f64],
    returns: &[f64],
    prev_positions: &[f64],
    prev_factors: &[f64],
    c_bps: f64,
) -> Result<f64> {
    check_lengths(positions, factors, returns)?;
    let r = turnover_adjusted_returns(positions, factors, returns, prev_positions, prev_factors, c_bps)?;
    Ok(loss_from_returns(&r))
}

// ---------------------------------------------------------------------------
// losses on the graph

/// Turnover context of a batch: previous scaled positions `X_prev * f_prev`
/// and the cost in basis points.
#[derive(Debug, Clone, Copy)]
pub struct Turnover<'a> {
    pub prev_scaled: &'a [f64],
    pub c_bps: f64,
}

/// Contributions `R` as a column, from a column of positions.
pub fn returns_graph(
    g: &mut Graph,
    positions: Var,
    factors: &[f64],
    returns: &[f64],
    turnover: Option<Turnover<'_>>,
) -> Result<Var> {
    let n = g.value(positions).len();
    if factors.len() != n || returns.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} positions, {} factors, {} returns",
            factors.len(),
            returns.len()
        )));
    }
    let shape = g.value(positions).shape();
    let fr = Tensor::new(shape.0, shape.1, factors.iter().zip(returns).map(|(f, r)| f * r).collect());
    let gross = g.mul_const(positions, fr);
    match turnover {
        Some(t) if t.c_bps != 0.0 => {
            if t.prev_scaled.len() != n {
                return Err(Error::MissingLinkage(format!(
                    "{n} elements but {} previous positions",
                    t.prev_scaled.len()
                )));
            }
            let scaled = g.mul_const(positions, Tensor::new(shape.0, shape.1, factors.to_vec()));
            let neg_prev = Tensor::new(shape.0, shape.1, t.prev_scaled.iter().map(|q| -q).collect());
            let delta = g.add_const(scaled, neg_prev);
            let turn = g.abs(delta);
            let cost = g.scale(turn, t.c_bps * 1e-4);
            Ok(g.sub(gross, cost))
        }
        _ => Ok(gross),
    }
}

/// Negative annualized Sharpe of the contributions held in `r`.
pub fn sharpe_loss_graph(g: &mut Graph, r: Var) -> Result<Var> {
    let n = g.value(r).len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let mean = g.mean(r);
    let sq = g.square(r);
    let second = g.mean(sq);
    let mean_sq = g.square(mean);
    let var = g.sub(second, mean_sq);
    let var = g.add_scalar(var, SHARPE_EPS);
    let sd = g.sqrt(var);
    let ratio = g.div(mean, sd);
    Ok(g.scale(ratio, -SQRT_TRADING_DAYS))
}

/// Copies reverse-mode derivatives of `loss` into `params.grads`. Parameters
/// the loss does not depend on receive exact zeros.
pub fn gradient(g: &Graph, loss: Var, vars: &[Var], params: &mut ModelParams) -> Result<()> {
    let adj = g.backward(loss)?;
    if vars.len() != params.tensors.len() {
        return Err(Error::ShapeMismatch("parameter bindings".into()));
    }
    params.grads = vars
        .iter()
        .zip(&params.tensors)
        .map(|(v, t)| adj.get_or_zeros(*v, t.value.shape()))
        .collect();
    Ok(())
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors
            .iter()
            .map(|t| Tensor::zeros(t.value.rows, t.value.cols))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Clips `params.grads` to `max_grad_norm` (global L2 norm) and applies one
/// bias-corrected Adam update. Returns the pre-clipping norm.
pub fn adam_step(params: &mut ModelParams, state: &mut AdamState, lr: f64, max_grad_norm: f64) -> f64 {
    let norm = global_norm(&params.grads);
    let scale = if norm > max_grad_norm && norm > 0.0 {
        max_grad_norm / norm
    } else {
        1.0
    };
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (i, t) in params.tensors.iter_mut().enumerate() {
        let g = &params.grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..t.value.data.len() {
            let gj = g.data[j] * scale;
            m.data[j] = ADAM_BETA1 * m.data[j] + (1.0 - ADAM_BETA1) * gj;
            v.data[j] = ADAM_BETA2 * v.data[j] + (1.0 - ADAM_BETA2) * gj * gj;
            let m_hat = m.data[j] / bc1;
            let v_hat = v.data[j] / bc2;
            t.value.data[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    norm
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub minibatch_size: usize,
    pub dropout_rate: f64,
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub max_gradient_norm: f64,
    /// Linear only; ignored by the other architectures.
    pub l1_coefficient: f64,
    /// 0 disables the turnover term.
    pub tc_reg_cost_bps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            minibatch_size: 64,
            dropout_rate: 0.1,
            hidden_size: 10,
            learning_rate: 1e-3,
            max_gradient_norm: 1.0,
            l1_coefficient: 0.0,
            tc_reg_cost_bps: 0.0,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.minibatch_size < 2 {
            return bad(format!("minibatch_size {} < 2", self.minibatch_size));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if !(self.max_gradient_norm > 0.0) {
            return bad(format!("max_gradient_norm {}", self.max_gradient_norm));
        }
        if !(self.l1_coefficient >= 0.0) {
            return bad(format!("l1_coefficient {}", self.l1_coefficient));
        }
        if !(self.tc_reg_cost_bps >= 0.0 && self.tc_reg_cost_bps.is_finite()) {
            return bad(format!("tc_reg_cost_bps {}", self.tc_reg_cost_bps));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be positive".into());
        }
        Ok(())
    }
}

/// Discrete hyperparameter grids sampled by random search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub minibatch_sizes: Vec<usize>,
    pub dropout_rates: Vec<f64>,
    pub hidden_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub max_gradient_norms: Vec<f64>,
    pub l1_coefficients: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            minibatch_sizes: vec![32, 64, 128, 256],
            dropout_rates: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            hidden_sizes: vec![5, 10, 20, 40, 80, 160],
            learning_rates: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            max_gradient_norms: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
            l1_coefficients: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
        }
    }
}

impl SearchSpace {
    /// Draws every grid uniformly; the trial seed is drawn last.
    pub fn sample<R: Rng>(&self, base: &TrainConfig, rng: &mut R) -> Result<TrainConfig> {
        fn pick<T: Copy, R: Rng>(grid: &[T], name: &str, rng: &mut R) -> Result<T> {
            grid.choose(rng)
                .copied()
                .ok_or_else(|| Error::InvalidConfig(format!("empty `{name}` grid")))
        }
        let mut c = base.clone();
        c.minibatch_size = pick(&self.minibatch_sizes, "minibatch_sizes", rng)?;
        c.dropout_rate = pick(&self.dropout_rates, "dropout_rates", rng)?;
        c.hidden_size = pick(&self.hidden_sizes, "hidden_sizes", rng)?;
        c.learning_rate = pick(&self.learning_rates, "learning_rates", rng)?;
        c.max_gradient_norm = pick(&self.max_gradient_norms, "max_gradient_norms", rng)?;
        let l1 = pick(&self.l1_coefficients, "l1_coefficients", rng)?;
        c.l1_coefficient = if c.architecture == Architecture::Linear { l1 } else { 0.0 };
        c.seed = rng.random();
        Ok(c)
    }
}

// ---------------------------------------------------------------------------
// data

/// A straddle-day addressed by stock index and day index in the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DayRef {
    pub stock: usize,
    pub day: usize,
}

/// Date on which the return `ret_next` of day `k` is realized.
pub fn next_date(stock: &StockHistory, k: usize) -> NaiveDate {
    let d = &stock.days[k];
    stock.straddles[d.straddle].records[d.record + 1].date
}

/// Vol-target factor `sigma_tgt / sigma_t`.
pub fn vol_factor(stock: &StockHistory, k: usize) -> f64 {
    TARGET_VOL / stock.days[k].vol.sigma_ann
}

/// Straddle-days dated in `[start, end]` whose next-day return is also
/// realized by `end`.
pub fn days_in_range(panel: &Panel, start: NaiveDate, end: NaiveDate) -> Vec<DayRef> {
    let mut out = Vec::new();
    for (s, stock) in panel.stocks.iter().enumerate() {
        for (k, d) in stock.days.iter().enumerate() {
            if d.date >= start && d.date <= end && next_date(stock, k) <= end {
                out.push(DayRef { stock: s, day: k });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<DayRef>,
    pub val: Vec<DayRef>,
}

/// Earlier 90% of distinct dates train, the remainder validates.
pub fn chronological_split(panel: &Panel, refs: &[DayRef]) -> Result<Split> {
    let date = |r: &DayRef| panel.stocks[r.stock].days[r.day].date;
    let mut dates: Vec<NaiveDate> = refs.iter().map(date).collect();
    dates.sort();
    dates.dedup();
    let n_train = ((dates.len() as f64 * TRAIN_FRACTION).floor() as usize).min(dates.len());
    let cutoff = dates.get(n_train).copied();
    let (train, val): (Vec<DayRef>, Vec<DayRef>) = refs
        .iter()
        .partition(|r| cutoff.is_none_or(|c| date(r) < c));
    for (name, part) in [("train", &train), ("validation", &val)] {
        if part.len() < 2 {
            return Err(Error::EmptySplit {
                split: name,
                len: part.len(),
            });
        }
    }
    Ok(Split { train, val })
}

/// Feature rows `k - tau + 1 ..= k`, zero rows before the first day.
pub fn input_window(stock: &StockHistory, k: usize, tau: usize) -> InputWindow {
    let rows = (0..tau)
        .map(|i| {
            let back = tau - 1 - i;
            if back > k {
                [0.0; FEATURE_DIM]
            } else {
                stock.days[k - back].features.values
            }
        })
        .collect();
    InputWindow { rows }
}

/// LSTM trajectory `c`: days `20c .. 20c + 20`, zero rows past the end.
fn trajectory_window(stock: &StockHistory, chunk: usize) -> InputWindow {
    let rows = (0..SEQUENCE_WINDOW)
        .map(|i| {
            stock
                .days
                .get(chunk * SEQUENCE_WINDOW + i)
                .map_or([0.0; FEATURE_DIM], |d| d.features.values)
        })
        .collect();
    InputWindow { rows }
}

/// Inference positions for days `0..upto` of one stock. The LSTM runs each
/// non-overlapping 20-day trajectory from zero state.
pub fn stock_positions(params: &ModelParams, stock: &StockHistory, upto: usize) -> Result<Vec<f64>> {
    let upto = upto.min(stock.days.len());
    let arch = params.architecture;
    let mut out = Vec::with_capacity(upto);
    if arch == Architecture::Lstm {
        let n_chunks = upto.div_ceil(SEQUENCE_WINDOW);
        let per_call = (INFERENCE_CHUNK / SEQUENCE_WINDOW).max(1);
        for first in (0..n_chunks).step_by(per_call) {
            let chunks: Vec<usize> = (first..(first + per_call).min(n_chunks)).collect();
            let windows: Vec<InputWindow> = chunks.iter().map(|&c| trajectory_window(stock, c)).collect();
            let pos = predict(params, &ModelInput::from_windows(arch, &windows)?)?;
            for (b, &c) in chunks.iter().enumerate() {
                for s in 0..SEQUENCE_WINDOW {
                    if c * SEQUENCE_WINDOW + s < upto {
                        out.push(pos.data[b * SEQUENCE_WINDOW + s]);
                    }
                }
            }
        }
    } else {
        let tau = arch.window();
        for first in (0..upto).step_by(INFERENCE_CHUNK) {
            let windows: Vec<InputWindow> = (first..(first + INFERENCE_CHUNK).min(upto))
                .map(|k| input_window(stock, k, tau))
                .collect();
            let pos = predict(params, &ModelInput::from_windows(arch, &windows)?)?;
            out.extend_from_slice(&pos.data);
        }
    }
    Ok(out)
}

/// Inference positions for every stock, covering the days `refs` touch and
/// the day before each.
fn position_table(params: &ModelParams, panel: &Panel, refs: &[&[DayRef]]) -> Result<Vec<Vec<f64>>> {
    let mut upto = vec![0usize; panel.stocks.len()];
    for r in refs.iter().flat_map(|s| s.iter()) {
        upto[r.stock] = upto[r.stock].max(r.day + 1);
    }
    panel
        .stocks
        .iter()
        .zip(&upto)
        .map(|(stock, &n)| stock_positions(params, stock, n))
        .collect()
}

/// Scaled position `X f` held the day before `r`; 0 on a straddle's first day.
fn prev_scaled(panel: &Panel, table: &[Vec<f64>], r: DayRef) -> f64 {
    let stock = &panel.stocks[r.stock];
    if stock.days[r.day].is_first_of_straddle() {
        0.0
    } else {
        table[r.stock][r.day - 1] * vol_factor(stock, r.day - 1)
    }
}

/// Loss of frozen positions on `refs`; turnover-adjusted when `c_bps > 0`.
fn evaluate(panel: &Panel, table: &[Vec<f64>], refs: &[DayRef], c_bps: f64) -> Result<f64> {
    let mut x = Vec::with_capacity(refs.len());
    let mut f = Vec::with_capacity(refs.len());
    let mut r = Vec::with_capacity(refs.len());
    let mut q = Vec::with_capacity(refs.len());
    for d in refs {
        let stock = &panel.stocks[d.stock];
        x.push(table[d.stock][d.day]);
        f.push(vol_factor(stock, d.day));
        r.push(stock.days[d.day].ret_next);
        q.push(prev_scaled(panel, table, *d));
    }
    if c_bps > 0.0 {
        let ones = vec![1.0; q.len()];
        turnover_adjusted_loss(&x, &f, &r, &q, &ones, c_bps)
    } else {
        sharpe_loss(&x, &f, &r)
    }
}

/// Units of one minibatch draw: single days, or whole LSTM trajectories.
fn training_units(arch: Architecture, refs: &[DayRef]) -> Vec<Vec<DayRef>> {
    if arch != Architecture::Lstm {
        return refs.iter().map(|r| vec![*r]).collect();
    }
    let mut sorted = refs.to_vec();
    sorted.sort();
    let mut units: Vec<Vec<DayRef>> = Vec::new();
    for r in sorted {
        let key = (r.stock, r.day / SEQUENCE_WINDOW);
        match units.last_mut() {
            Some(u) if (u[0].stock, u[0].day / SEQUENCE_WINDOW) == key => u.push(r),
            _ => units.push(vec![r]),
        }
    }
    units
}

/// One recorded training objective over a minibatch of units.
fn batch_objective(
    panel: &Panel,
    params: &ModelParams,
    config: &TrainConfig,
    units: &[Vec<DayRef>],
    table: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<(Graph, Var, Vec<Var>)> {
    let arch = params.architecture;
    let mut windows = Vec::with_capacity(units.len());
    let mut picks = Vec::new();
    let mut elems = Vec::new();
    for (b, unit) in units.iter().enumerate() {
        let stock = &panel.stocks[unit[0].stock];
        if arch == Architecture::Lstm {
            let chunk = unit[0].day / SEQUENCE_WINDOW;
            windows.push(trajectory_window(stock, chunk));
            for r in unit {
                picks.push(b * SEQUENCE_WINDOW + r.day - chunk * SEQUENCE_WINDOW);
                elems.push(*r);
            }
        } else {
            windows.push(input_window(stock, unit[0].day, arch.window()));
            elems.push(unit[0]);
        }
    }
    if elems.len() < 2 {
        return Err(Error::BatchTooSmall(elems.len()));
    }
    let factors: Vec<f64> = elems.iter().map(|r| vol_factor(&panel.stocks[r.stock], r.day)).collect();
    let returns: Vec<f64> = elems
        .iter()
        .map(|r| panel.stocks[r.stock].days[r.day].ret_next)
        .collect();
    let prev: Vec<f64> = if table.is_empty() {
        vec![0.0; elems.len()]
    } else {
        elems.iter().map(|r| prev_scaled(panel, table, *r)).collect()
    };

    let input = ModelInput::from_windows(arch, &windows)?;
    let mut g = Graph::new();
    let vars = bind_params(&mut g, params);
    let dropout = Some(Dropout {
        rate: config.dropout_rate,
        rng,
    });
    let out = forward(&mut g, params, &vars, &input, dropout)?;
    let x = if arch == Architecture::Lstm {
        g.select(out, picks)
    } else {
        out
    };
    let turnover = Turnover {
        prev_scaled: &prev,
        c_bps: config.tc_reg_cost_bps,
    };
    let r = returns_graph(&mut g, x, &factors, &returns, Some(turnover))?;
    let mut loss = sharpe_loss_graph(&mut g, r)?;
    if arch == Architecture::Linear && config.l1_coefficient > 0.0 {
        let w = g.abs(vars[0]);
        let l1 = g.sum(w);
        let l1 = g.scale(l1, config.l1_coefficient);
        loss = g.add(loss, l1);
    }
    Ok((g, loss, vars))
}

// ---------------------------------------------------------------------------
// early stopping and the training loop

/// Patience counter on a validation loss; only strict improvements reset it.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records an epoch; returns whether it improved on the best so far.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: Vec<EpochLog>,
}

pub fn write_log_csv<W: std::io::Write>(log: &[EpochLog], mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_loss,elapsed_s")?;
    for e in log {
        writeln!(w, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.elapsed_s)?;
    }
    Ok(())
}

pub fn train_with_early_stopping(panel: &Panel, split: &Split, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    for (name, part) in [("train", &split.train), ("validation", &split.val)] {
        if part.len() < 2 {
            return Err(Error::EmptySplit {
                split: name,
                len: part.len(),
            });
        }
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(config.architecture, config.hidden_size, config.dropout_rate, &mut rng);
    let mut adam = AdamState::new(&params);
    let mut units = training_units(config.architecture, &split.train);
    let c_bps = config.tc_reg_cost_bps;

    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut log = Vec::new();
    for epoch in 1..=config.max_epochs {
        let table = if c_bps > 0.0 {
            position_table(&params, panel, &[&split.train])?
        } else {
            Vec::new()
        };
        units.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for batch in units.chunks(config.minibatch_size) {
            let (g, loss, vars) = match batch_objective(panel, &params, config, batch, &table, &mut rng) {
                Err(Error::BatchTooSmall(_)) => continue,
                other => other?,
            };
            total += g.value(loss).item();
            batches += 1;
            gradient(&g, loss, &vars, &mut params)?;
            adam_step(&mut params, &mut adam, config.learning_rate, config.max_gradient_norm);
        }
        let table = position_table(&params, panel, &[&split.val])?;
        let val_loss = evaluate(panel, &table, &split.val, c_bps)?;
        log.push(EpochLog {
            epoch,
            train_loss: if batches > 0 { total / batches as f64 } else { f64::NAN },
            val_loss,
            elapsed_s: started.elapsed().as_secs_f64(),
        });
        if stopper.observe(epoch, val_loss) {
            best = params.clone();
        }
        if stopper.should_stop() || !params.is_finite() {
            break;
        }
    }
    if stopper.best_epoch == 0 {
        // validation loss was never finite; keep the initialization
        stopper.best_loss = f64::NAN;
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best_loss,
        log,
    })
}

// ---------------------------------------------------------------------------
// random search

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub index: usize,
    pub config: TrainConfig,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub best_config: TrainConfig,
    pub outcome: TrainOutcome,
    pub trials: Vec<TrialRecord>,
}

/// Index of the minimal loss, earliest on ties; NaN never wins.
pub fn select_best(losses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        let cur = losses[best];
        if !l.is_nan() && (cur.is_nan() || l < cur) {
            best = i;
        }
    }
    best
}

/// Samples `n_trials` configurations from `space` (overriding the tunable
/// fields of `base`), trains each, and keeps the minimal validation loss.
/// Trials run in parallel; results do not depend on scheduling.
pub fn random_search(
    panel: &Panel,
    split: &Split,
    space: &SearchSpace,
    base: &TrainConfig,
    n_trials: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if n_trials == 0 {
        return Err(Error::InvalidConfig("n_trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs = (0..n_trials)
        .map(|_| space.sample(base, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = configs
        .par_iter()
        .map(|c| train_with_early_stopping(panel, split, c))
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<f64> = outcomes.iter().map(|o| o.best_val_loss).collect();
    let best_index = select_best(&losses);
    let trials = configs
        .iter()
        .zip(&outcomes)
        .enumerate()
        .map(|(index, (config, o))| TrialRecord {
            index,
            config: config.clone(),
            best_val_loss: o.best_val_loss,
            best_epoch: o.best_epoch,
            epochs_run: o.log.len(),
        })
        .collect();
    let outcome = outcomes.into_iter().nth(best_index).expect("index in range");
    Ok(SearchOutcome {
        best_index,
        best_config: configs[best_index].clone(),
        outcome,
        trials,
    })
}
