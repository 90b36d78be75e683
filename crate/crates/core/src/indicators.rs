//! Volatility estimates, trend indicators and the 15-entry model input.
//!
//! All functions are causal: the value at index `t` reads inputs at indices
//! `<= t` only.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRADING_DAYS: f64 = 252.0;
/// `sqrt(252)`.
pub const SQRT_TRADING_DAYS: f64 = 15.874507866387544;
pub const VOL_SPAN: f64 = 20.0;
/// Annualized volatility each position is scaled to.
pub const TARGET_VOL: f64 = 0.15;

/// Daily volatility floor, 5% annualized.
pub fn sigma_floor_daily() -> f64 {
    0.05 / SQRT_TRADING_DAYS
}

/// Normalized-return horizons, in trading days.
pub const RETURN_HORIZONS: [usize; 5] = [1, 5, 10, 15, 20];
/// MACD (short, long) time scales.
pub const MACD_SCALES: [(f64, f64); 3] = [(2.0, 8.0), (4.0, 16.0), (8.0, 32.0)];
/// Option-momentum lookbacks, in months.
pub const MOMENTUM_LOOKBACKS: [usize; 4] = [1, 3, 6, 12];

pub const FEATURE_DIM: usize = 15;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "nret_1",
    "nret_5",
    "nret_10",
    "nret_15",
    "nret_20",
    "macd_2_8",
    "macd_4_16",
    "macd_8_32",
    "mom_1m",
    "mom_3m",
    "mom_6m",
    "mom_12m",
    "log_moneyness_call",
    "log_moneyness_put",
    "dte_years",
];

/// Identifies the frozen feature order; stored in model checkpoints.
pub fn feature_fingerprint() -> String {
    format!("v1:{}", FEATURE_NAMES.join("|"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolEstimate {
    pub sigma_daily: f64,
    pub sigma_ann: f64,
}

impl VolEstimate {
    pub fn from_daily(sigma_daily: f64) -> Self {
        let sigma_daily = sigma_daily.max(sigma_floor_daily());
        Self {
            sigma_daily,
            sigma_ann: sigma_daily * SQRT_TRADING_DAYS,
        }
    }

    pub fn floor() -> Self {
        Self::from_daily(0.0)
    }
}

/// Exponentially weighted standard deviation with span 20, seeded from the
/// first observation. Estimate `i` covers `returns[..=i]`.
pub fn ewm_volatility(returns: &[f64]) -> Vec<VolEstimate> {
    let alpha = 2.0 / (VOL_SPAN + 1.0);
    let mut out = Vec::with_capacity(returns.len());
    let mut mean = 0.0;
    let mut var = 0.0;
    for (i, &r) in returns.iter().enumerate() {
        if i == 0 {
            mean = r;
            var = 0.0;
        } else {
            let diff = r - mean;
            let incr = alpha * diff;
            mean += incr;
            var = (1.0 - alpha) * (var + diff * incr);
        }
        out.push(VolEstimate::from_daily(var.max(0.0).sqrt()));
    }
    out
}

/// Compounded return over `returns[t+1-k..=t]`.
pub fn compounded_return(returns: &[f64], t: usize, k: usize) -> Result<f64> {
    if k == 0 || t >= returns.len() || t + 1 < k {
        return Err(Error::InsufficientHistory {
            needed: k,
            available: (t + 1).min(returns.len()),
        });
    }
    Ok(returns[t + 1 - k..=t].iter().map(|r| 1.0 + r).product::<f64>() - 1.0)
}

/// `r_{t-k,t} / (sigma_daily * sqrt(k))` where the return compounds the `k`
/// daily returns ending at index `t`.
pub fn normalized_return(returns: &[f64], t: usize, k: usize, vol: VolEstimate) -> Result<f64> {
    Ok(compounded_return(returns, t, k)? / (vol.sigma_daily * (k as f64).sqrt()))
}

/// Half-life in days of an EWM with decay `1 - 1/j`.
pub fn half_life(j: f64) -> f64 {
    0.5_f64.ln() / (1.0 - 1.0 / j).ln()
}

fn ewm_average(prices: &[f64], j: f64) -> Vec<f64> {
    let alpha = 1.0 / j;
    let mut out = Vec::with_capacity(prices.len());
    let mut m = 0.0;
    for (i, &p) in prices.iter().enumerate() {
        if i == 0 {
            m = p;
        } else {
            m += alpha * (p - m);
        }
        out.push(m);
    }
    out
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Price window for the MACD normalizer (6 observations inclusive).
pub const MACD_PRICE_WINDOW: usize = 6;
/// Window of normalized MACD values for the signal normalizer (21 inclusive).
pub const MACD_SIGNAL_WINDOW: usize = 21;
/// Smallest index with a full MACD signal.
pub const MACD_MIN_INDEX: usize = MACD_PRICE_WINDOW + MACD_SIGNAL_WINDOW - 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacdComponents {
    pub macd: f64,
    pub macd_norm: f64,
    /// Volatility-normalized signal `Y_t`.
    pub signal: f64,
    /// A trailing standard deviation was zero; the affected value is 0.
    pub degenerate: bool,
}

/// MACD components at every index with enough history (`None` before).
pub fn macd_series(prices: &[f64], short: f64, long: f64) -> Vec<Option<MacdComponents>> {
    let fast = ewm_average(prices, short);
    let slow = ewm_average(prices, long);
    let n = prices.len();
    let mut macd = vec![0.0; n];
    let mut norm = vec![None; n];
    for t in 0..n {
        macd[t] = fast[t] - slow[t];
        if t + 1 >= MACD_PRICE_WINDOW {
            let sd = population_std(&prices[t + 1 - MACD_PRICE_WINDOW..=t]);
            norm[t] = Some(if sd > 0.0 { (macd[t] / sd, false) } else { (0.0, true) });
        }
    }
    let mut out = vec![None; n];
    for t in MACD_MIN_INDEX..n {
        let window: Vec<f64> = norm[t + 1 - MACD_SIGNAL_WINDOW..=t]
            .iter()
            .map(|v| v.expect("window starts after the price window").0)
            .collect();
        let (macd_norm, norm_degenerate) = norm[t].expect("filled");
        let sd = population_std(&window);
        let (signal, sig_degenerate) = if sd > 0.0 {
            (macd_norm / sd, false)
        } else {
            (0.0, true)
        };
        out[t] = Some(MacdComponents {
            macd: macd[t],
            macd_norm,
            signal,
            degenerate: norm_degenerate || sig_degenerate,
        });
    }
    out
}

/// MACD, its price-normalized value and the signal `Y_t` at index `t`.
pub fn macd_components(prices: &[f64], t: usize, short: f64, long: f64) -> Result<MacdComponents> {
    if t >= prices.len() || t < MACD_MIN_INDEX {
        return Err(Error::InsufficientHistory {
            needed: MACD_MIN_INDEX + 1,
            available: (t + 1).min(prices.len()),
        });
    }
    Ok(macd_series(&prices[..=t], short, long)[t].expect("enough history"))
}

/// Response function applied to MACD signals.
pub fn phi(y: f64) -> f64 {
    y * (-y * y / 4.0).exp() / 0.89
}

/// Hold-to-expiry return of one completed monthly straddle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonthlyReturn {
    pub formation: NaiveDate,
    pub expiry: NaiveDate,
    pub ret: f64,
}

/// Mean of the `n` most recent monthly returns completed by `formation_date`
/// (expiry on or before it). Returns `(0, false)` when fewer than `n` exist.
pub fn option_momentum_feature(
    history: &[MonthlyReturn],
    formation_date: NaiveDate,
    n: usize,
) -> (f64, bool) {
    let mut done: Vec<&MonthlyReturn> = history
        .iter()
        .filter(|m| m.expiry <= formation_date)
        .collect();
    if n == 0 || done.len() < n {
        return (0.0, false);
    }
    done.sort_by_key(|m| m.expiry);
    let recent = &done[done.len() - n..];
    (recent.iter().map(|m| m.ret).sum::<f64>() / n as f64, true)
}

/// One model input row plus the validity of its momentum entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_DIM],
    pub momentum_mask: [bool; 4],
}

impl FeatureVector {
    pub const fn zeros() -> Self {
        Self {
            values: [0.0; FEATURE_DIM],
            momentum_mask: [false; 4],
        }
    }

    pub fn normalized_returns(&self) -> &[f64] {
        &self.values[0..5]
    }

    pub fn macd_signals(&self) -> &[f64] {
        &self.values[5..8]
    }

    pub fn momentum(&self, lookback_index: usize) -> (f64, bool) {
        (self.values[8 + lookback_index], self.momentum_mask[lookback_index])
    }
}

/// Everything about a stock's stitched history that features read.
///
/// `returns[k]` is earned from day `k` to day `k + 1`; at day `k` only
/// `returns[..k]` is known.
#[derive(Debug, Clone)]
pub struct FeatureContext<'a> {
    pub returns: &'a [f64],
    pub monthly: &'a [MonthlyReturn],
}

/// Per-day contract descriptors of the straddle held on a day.
#[derive(Debug, Clone, Copy)]
pub struct ContractState {
    pub formation_date: NaiveDate,
    pub log_moneyness_call: f64,
    pub log_moneyness_put: f64,
    pub dte_years: f64,
}

/// Stitched price index: 1 at day 0, compounding the known returns.
pub fn price_index(returns: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(returns.len() + 1);
    p.push(1.0);
    for r in returns {
        let last = *p.last().expect("non-empty");
        p.push(last * (1.0 + r));
    }
    p
}

/// Volatility at every day `k` (estimate after `returns[..k]`; floor at `k=0`).
pub fn day_volatility(returns: &[f64], days: usize) -> Vec<VolEstimate> {
    let est = ewm_volatility(&returns[..days.saturating_sub(1).min(returns.len())]);
    (0..days)
        .map(|k| if k == 0 { VolEstimate::floor() } else { est[k - 1] })
        .collect()
}

/// Feature rows for every day of a stitched history, in one pass.
pub fn build_features(ctx: &FeatureContext<'_>, contracts: &[ContractState]) -> Vec<FeatureVector> {
    let days = contracts.len();
    let vols = day_volatility(ctx.returns, days);
    let prices = price_index(&ctx.returns[..days.saturating_sub(1).min(ctx.returns.len())]);
    let macd: Vec<Vec<Option<MacdComponents>>> = MACD_SCALES
        .iter()
        .map(|&(s, l)| macd_series(&prices, s, l))
        .collect();

    contracts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut f = FeatureVector::zeros();
            if k > 0 {
                for (slot, &h) in RETURN_HORIZONS.iter().enumerate() {
                    if let Ok(v) = normalized_return(ctx.returns, k - 1, h, vols[k]) {
                        f.values[slot] = v;
                    }
                }
            }
            for (slot, series) in macd.iter().enumerate() {
                if let Some(Some(m)) = series.get(k) {
                    f.values[5 + slot] = m.signal;
                }
            }
            for (slot, &n) in MOMENTUM_LOOKBACKS.iter().enumerate() {
                let (v, ok) = option_momentum_feature(ctx.monthly, c.formation_date, n);
                f.values[8 + slot] = v;
                f.momentum_mask[slot] = ok;
            }
            f.values[12] = c.log_moneyness_call;
            f.values[13] = c.log_moneyness_put;
            f.values[14] = c.dte_years;
            f
        })
        .collect()
}

/// Feature row for day `k` alone.
pub fn build_feature_vector(
    ctx: &FeatureContext<'_>,
    contracts: &[ContractState],
    k: usize,
) -> FeatureVector {
    let truncated = FeatureContext {
        returns: &ctx.returns[..k.min(ctx.returns.len())],
        monthly: ctx.monthly,
    };
    build_features(&truncated, &contracts[..=k])[k]
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct weighted form of the EWM variance: weights `(1-a)^n` on the
    /// seed and `a (1-a)^(n-i)` elsewhere.
    fn ewm_std_oracle(xs: &[f64]) -> f64 {
        let a: f64 = 2.0 / 21.0;
        let n = xs.len() - 1;
        let w: Vec<f64> = (0..=n)
            .map(|i| {
                if i == 0 {
                    (1.0 - a).powi(n as i32)
                } else {
                    a * (1.0 - a).powi((n - i) as i32)
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        let mean = w.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / total;
        let var = w
            .iter()
            .zip(xs)
            .map(|(w, x)| w * (x - mean).powi(2))
            .sum::<f64>()
            / total;
        var.sqrt()
    }

    #[test]
    fn sqrt_constant() {
        assert_eq!(TRADING_DAYS.sqrt(), SQRT_TRADING_DAYS);
    }

    #[test]
    fn constant_returns_hit_floor() {
        let est = ewm_volatility(&[0.003; 50]);
        assert!(est.iter().all(|e| e.sigma_daily == sigma_floor_daily()));
        let single = ewm_volatility(&[0.2]);
        assert_eq!(single[0].sigma_daily, sigma_floor_daily());
    }

    #[test]
    fn alternating_returns_match_weighted_oracle() {
        let xs: Vec<f64> = (0..400).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let est = ewm_volatility(&xs);
        for t in [5, 50, 399] {
            let oracle = ewm_std_oracle(&xs[..=t]).max(sigma_floor_daily());
            assert!((est[t].sigma_daily - oracle).abs() < 1e-12, "t={t}");
        }
        // stationary level: sqrt(1e-4 - (0.01/20)^2)
        assert!((est[399].sigma_daily - 0.01).abs() < 2e-5);
        assert!((est[399].sigma_ann / est[399].sigma_daily - SQRT_TRADING_DAYS).abs() < 1e-12);
    }

    #[test]
    fn normalized_return_examples() {
        let vol = VolEstimate::from_daily(0.01);
        let r5 = [0.0, 0.0, 0.0, 0.0, 0.05];
        let v = normalized_return(&r5, 4, 5, vol).unwrap();
        assert!((v - 0.05 / (0.01 * 5f64.sqrt())).abs() < 1e-12);
        assert!((v - 2.2360).abs() < 1e-4);
        let v = normalized_return(&[-0.02], 0, 1, VolEstimate::from_daily(0.02)).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
        assert_eq!(normalized_return(&[0.0; 20], 19, 20, vol).unwrap(), 0.0);
        assert!(matches!(
            normalized_return(&[0.01; 3], 2, 5, vol),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn half_lives() {
        assert_eq!(half_life(2.0), 1.0);
        assert!((half_life(8.0) - 5.190_893_069_684).abs() < 1e-9);
    }

    #[test]
    fn constant_prices_degenerate() {
        let prices = [3.0; 40];
        let m = macd_components(&prices, 39, 2.0, 8.0).unwrap();
        assert_eq!(m.macd, 0.0);
        assert_eq!(m.signal, 0.0);
        assert!(m.degenerate);
        assert!(macd_components(&prices, MACD_MIN_INDEX - 1, 2.0, 8.0).is_err());
    }

    #[test]
    fn macd_oracle_on_short_series() {
        // direct evaluation from the definitions
        let prices: Vec<f64> = (0..30).map(|i| 1.0 + 0.1 * (i as f64 * 0.7).sin()).collect();
        let ewm = |j: f64, t: usize| {
            let mut m = prices[0];
            for p in &prices[1..=t] {
                m = (1.0 - 1.0 / j) * m + p / j;
            }
            m
        };
        let std = |xs: &[f64]| {
            let n = xs.len() as f64;
            let mu = xs.iter().sum::<f64>() / n;
            (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt()
        };
        let norm = |t: usize| (ewm(4.0, t) - ewm(16.0, t)) / std(&prices[t - 5..=t]);
        let t = 29;
        let window: Vec<f64> = (t - 20..=t).map(norm).collect();
        let expected = norm(t) / std(&window);
        let got = macd_components(&prices, t, 4.0, 16.0).unwrap();
        assert!((got.signal - expected).abs() < 1e-10);
        assert!((got.macd - (ewm(4.0, t) - ewm(16.0, t))).abs() < 1e-12);
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(0.0), 0.0);
        let s = 2f64.sqrt();
        assert!((phi(s) - s * (-0.5f64).exp() / 0.89).abs() < 1e-15);
        assert!((phi(s) - 0.96378).abs() < 1e-5);
        for y in [0.1, 0.7, 1.9, 3.3] {
            assert_eq!(phi(-y), -phi(y));
        }
    }

    fn month(m: u32, ret: f64) -> MonthlyReturn {
        MonthlyReturn {
            formation: NaiveDate::from_ymd_opt(2010, m, 1).unwrap(),
            expiry: NaiveDate::from_ymd_opt(2010, m + 1, 1).unwrap(),
            ret,
        }
    }

    #[test]
    fn momentum_feature() {
        let hist = [month(1, 0.10), month(2, -0.05), month(3, 0.01)];
        let at = NaiveDate::from_ymd_opt(2010, 4, 1).unwrap();
        let (v, ok) = option_momentum_feature(&hist, at, 3);
        assert!(ok && (v - 0.02).abs() < 1e-15);
        assert_eq!(option_momentum_feature(&hist, at, 1), (0.01, true));
        assert_eq!(option_momentum_feature(&hist[..2], at, 6), (0.0, false));
        // a straddle expiring after the formation date is not yet complete
        let early = NaiveDate::from_ymd_opt(2010, 3, 15).unwrap();
        assert_eq!(option_momentum_feature(&hist, early, 1), (-0.05, true));
    }

    fn contracts(n: usize) -> Vec<ContractState> {
        let f = NaiveDate::from_ymd_opt(2010, 1, 15).unwrap();
        (0..n)
            .map(|k| ContractState {
                formation_date: f,
                log_moneyness_call: 0.0,
                log_moneyness_put: 0.0,
                dte_years: (29 - k.min(29)) as f64 / 365.0,
            })
            .collect()
    }

    #[test]
    fn cold_start_features() {
        let ctx = FeatureContext {
            returns: &[],
            monthly: &[],
        };
        let f = build_feature_vector(&ctx, &contracts(1), 0);
        assert!(f.values[..12].iter().all(|v| *v == 0.0));
        assert_eq!(f.momentum_mask, [false; 4]);
        assert_eq!(f.values[12], 0.0);
        assert!((f.values[14] - 0.07945).abs() < 1e-5);
    }

    #[test]
    fn single_day_matches_batch() {
        let returns: Vec<f64> = (0..60).map(|i| 0.02 * ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let cs = contracts(61);
        let ctx = FeatureContext {
            returns: &returns,
            monthly: &[],
        };
        let all = build_features(&ctx, &cs);
        for k in [0, 1, 5, 20, 25, 26, 40, 60] {
            assert_eq!(build_feature_vector(&ctx, &cs, k), all[k], "k={k}");
        }
        assert!(all.iter().all(|f| f.values.iter().all(|v| v.is_finite())));
        assert!(all[40].values[5..8].iter().any(|v| *v != 0.0));
    }
}
