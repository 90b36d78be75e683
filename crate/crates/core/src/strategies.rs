//! Rules-based straddle trading signals in `[-1, 1]`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::indicators::{compounded_return, macd_components, phi, MACD_SCALES, MOMENTUM_LOOKBACKS};
use crate::panel::{Panel, StockHistory};

/// Trailing window of the time-series momentum signal.
pub const TSMOM_LOOKBACK: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    LongOnly,
    ShortOnly,
    Tsmom,
    Tsmr,
    Macd,
    Macdmr,
    TsHeston { lookback: usize, mean_revert: bool },
    CsHeston { lookback: usize, mean_revert: bool },
}

impl Strategy {
    pub fn all() -> Vec<Strategy> {
        let mut out = vec![
            Strategy::LongOnly,
            Strategy::ShortOnly,
            Strategy::Tsmom,
            Strategy::Tsmr,
            Strategy::Macd,
            Strategy::Macdmr,
        ];
        for mean_revert in [false, true] {
            for &lookback in &MOMENTUM_LOOKBACKS {
                out.push(Strategy::TsHeston { lookback, mean_revert });
            }
        }
        for mean_revert in [false, true] {
            for &lookback in &MOMENTUM_LOOKBACKS {
                out.push(Strategy::CsHeston { lookback, mean_revert });
            }
        }
        out
    }

    pub fn names() -> Vec<String> {
        Self::all().iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::LongOnly => f.write_str("long_only"),
            Strategy::ShortOnly => f.write_str("short_only"),
            Strategy::Tsmom => f.write_str("tsmom"),
            Strategy::Tsmr => f.write_str("tsmr"),
            Strategy::Macd => f.write_str("macd"),
            Strategy::Macdmr => f.write_str("macdmr"),
            Strategy::TsHeston { lookback, mean_revert } => {
                let kind = if *mean_revert { "mr" } else { "mom" };
                write!(f, "tsheston_{kind}_{lookback}")
            }
            Strategy::CsHeston { lookback, mean_revert } => {
                let kind = if *mean_revert { "mr" } else { "mom" };
                write!(f, "csheston_{kind}_{lookback}")
            }
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::all()
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown strategy `{s}`; valid names: {}",
                    Strategy::names().join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalSeries {
    pub underlying: String,
    pub strategy: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

/// `sgn` with `sgn(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn flip(x: f64, mean_revert: bool) -> f64 {
    if mean_revert {
        -x
    } else {
        x
    }
}

fn constant(stock: &StockHistory, name: &str, value: f64) -> SignalSeries {
    SignalSeries {
        underlying: stock.underlying.clone(),
        strategy: name.to_string(),
        dates: stock.days.iter().map(|d| d.date).collect(),
        values: vec![value; stock.days.len()],
    }
}

pub fn long_only(stock: &StockHistory) -> SignalSeries {
    constant(stock, "long_only", 1.0)
}

pub fn short_only(stock: &StockHistory) -> SignalSeries {
    constant(stock, "short_only", -1.0)
}

/// Sign of the compounded 20-day return known at day `k` of a stitched
/// history (`returns[..k]`); 0 with less history.
pub fn tsmom_signal(returns: &[f64], k: usize, mean_revert: bool) -> f64 {
    if k < TSMOM_LOOKBACK {
        return 0.0;
    }
    match compounded_return(returns, k - 1, TSMOM_LOOKBACK) {
        Ok(r) => flip(sign(r), mean_revert),
        Err(_) => 0.0,
    }
}

/// Equal-weight mean of `phi(Y)` over the three MACD time-scale pairs at
/// index `t` of a price series. Pairs without enough history contribute 0.
pub fn macd_strategy_signal(prices: &[f64], t: usize, mean_revert: bool) -> f64 {
    let ys = MACD_SCALES.map(|(s, l)| {
        macd_components(prices, t, s, l)
            .map(|m| m.signal)
            .unwrap_or(0.0)
    });
    flip(macd_from_signals(&ys), mean_revert)
}

/// Combines precomputed MACD signals `Y` into a position.
pub fn macd_from_signals(ys: &[f64]) -> f64 {
    ys.iter().map(|y| phi(*y)).sum::<f64>() / 3.0
}

/// Position held from formation to expiry from a momentum score.
pub fn ts_heston_signal(feature: f64, valid: bool, mean_revert: bool) -> f64 {
    if !valid {
        return 0.0;
    }
    flip(sign(feature), mean_revert)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossSectionScore {
    pub underlying: String,
    pub score: f64,
    pub valid: bool,
}

/// High-minus-low decile positions; output aligned with `scores`.
pub fn cs_heston_signal(scores: &[CrossSectionScore], mean_revert: bool) -> Result<Vec<f64>> {
    let mut valid: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].valid).collect();
    if valid.len() < 2 {
        return Err(Error::TooFewStocks(valid.len()));
    }
    valid.sort_by(|&a, &b| {
        scores[b]
            .score
            .total_cmp(&scores[a].score)
            .then_with(|| scores[a].underlying.cmp(&scores[b].underlying))
    });
    let decile = (valid.len() / 10).max(1);
    let mut out = vec![0.0; scores.len()];
    for &i in &valid[..decile] {
        out[i] = flip(1.0, mean_revert);
    }
    for &i in &valid[valid.len() - decile..] {
        out[i] = flip(-1.0, mean_revert);
    }
    Ok(out)
}

fn lookback_slot(lookback: usize) -> Result<usize> {
    MOMENTUM_LOOKBACKS
        .iter()
        .position(|&n| n == lookback)
        .ok_or_else(|| Error::InvalidConfig(format!("unsupported lookback {lookback}")))
}

/// Signals for every stock-day of the panel, one series per stock.
pub fn generate_signals(panel: &Panel, strategy: Strategy) -> Result<Vec<SignalSeries>> {
    let name = strategy.to_string();
    let per_stock = |f: &dyn Fn(&StockHistory, usize) -> f64| -> Vec<SignalSeries> {
        panel
            .stocks
            .iter()
            .map(|stock| SignalSeries {
                underlying: stock.underlying.clone(),
                strategy: name.clone(),
                dates: stock.days.iter().map(|d| d.date).collect(),
                values: (0..stock.days.len()).map(|k| f(stock, k)).collect(),
            })
            .collect()
    };

    Ok(match strategy {
        Strategy::LongOnly => panel.stocks.iter().map(long_only).collect(),
        Strategy::ShortOnly => panel.stocks.iter().map(short_only).collect(),
        Strategy::Tsmom | Strategy::Tsmr => {
            let mr = strategy == Strategy::Tsmr;
            let returns: Vec<Vec<f64>> = panel.stocks.iter().map(|s| s.returns()).collect();
            panel
                .stocks
                .iter()
                .zip(&returns)
                .map(|(stock, rets)| SignalSeries {
                    underlying: stock.underlying.clone(),
                    strategy: name.clone(),
                    dates: stock.days.iter().map(|d| d.date).collect(),
                    values: (0..stock.days.len())
                        .map(|k| tsmom_signal(rets, k, mr))
                        .collect(),
                })
                .collect()
        }
        Strategy::Macd | Strategy::Macdmr => {
            let mr = strategy == Strategy::Macdmr;
            per_stock(&|stock, k| {
                flip(macd_from_signals(stock.days[k].features.macd_signals()), mr)
            })
        }
        Strategy::TsHeston { lookback, mean_revert } => {
            let slot = lookback_slot(lookback)?;
            per_stock(&|stock, k| {
                let (v, ok) = stock.days[k].features.momentum(slot);
                ts_heston_signal(v, ok, mean_revert)
            })
        }
        Strategy::CsHeston { lookback, mean_revert } => {
            let slot = lookback_slot(lookback)?;
            cross_sectional(panel, slot, mean_revert, &name)
        }
    })
}

fn cross_sectional(panel: &Panel, slot: usize, mean_revert: bool, name: &str) -> Vec<SignalSeries> {
    // formation date -> (stock index, straddle index, score)
    let mut cohorts: BTreeMap<NaiveDate, Vec<(usize, usize, CrossSectionScore)>> = BTreeMap::new();
    for (si, stock) in panel.stocks.iter().enumerate() {
        for day in stock.days.iter().filter(|d| d.is_first_of_straddle()) {
            let (score, valid) = day.features.momentum(slot);
            let formation = stock.straddles[day.straddle].definition.formation_date;
            cohorts.entry(formation).or_default().push((
                si,
                day.straddle,
                CrossSectionScore {
                    underlying: stock.underlying.clone(),
                    score,
                    valid,
                },
            ));
        }
    }
    let mut held: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for members in cohorts.values() {
        let scores: Vec<CrossSectionScore> = members.iter().map(|m| m.2.clone()).collect();
        let positions = cs_heston_signal(&scores, mean_revert).unwrap_or_else(|_| vec![0.0; scores.len()]);
        for (m, x) in members.iter().zip(positions) {
            held.insert((m.0, m.1), x);
        }
    }
    panel
        .stocks
        .iter()
        .enumerate()
        .map(|(si, stock)| SignalSeries {
            underlying: stock.underlying.clone(),
            strategy: name.to_string(),
            dates: stock.days.iter().map(|d| d.date).collect(),
            values: stock
                .days
                .iter()
                .map(|d| held.get(&(si, d.straddle)).copied().unwrap_or(0.0))
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        let names = Strategy::names();
        assert_eq!(names.len(), 22);
        assert_eq!(names[0], "long_only");
        assert!(names.contains(&"tsheston_mr_12".to_string()));
        assert!(names.contains(&"csheston_mom_3".to_string()));
        for n in &names {
            assert_eq!(&n.parse::<Strategy>().unwrap().to_string(), n);
        }
        let err = "bogus".parse::<Strategy>().unwrap_err().to_string();
        assert!(err.contains("long_only") && err.contains("csheston_mr_12"));
    }

    #[test]
    fn tsmom_examples() {
        let mut rets = vec![0.0; 20];
        rets[0] = 0.08;
        assert_eq!(tsmom_signal(&rets, 20, false), 1.0);
        assert_eq!(tsmom_signal(&rets, 20, true), -1.0);
        assert_eq!(tsmom_signal(&[0.0; 20], 20, false), 0.0);
        assert_eq!(tsmom_signal(&rets, 19, false), 0.0);
    }

    #[test]
    fn macd_examples() {
        assert_eq!(macd_from_signals(&[0.0; 3]), 0.0);
        let s = 2f64.sqrt();
        assert!((macd_from_signals(&[s, s, s]) - 0.96378).abs() < 1e-5);
        assert_eq!(macd_strategy_signal(&[2.0; 60], 59, false), 0.0);
        assert_eq!(macd_strategy_signal(&[2.0; 60], 59, true), 0.0);
    }

    #[test]
    fn ts_heston_examples() {
        assert_eq!(ts_heston_signal(0.02, true, false), 1.0);
        assert_eq!(ts_heston_signal(0.02, false, false), 0.0);
        assert_eq!(ts_heston_signal(-0.01, true, true), 1.0);
    }

    fn scores(values: &[f64]) -> Vec<CrossSectionScore> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| CrossSectionScore {
                underlying: format!("S{i:02}"),
                score: *v,
                valid: true,
            })
            .collect()
    }

    #[test]
    fn cs_heston_deciles() {
        let x = cs_heston_signal(&scores(&(0..20).map(f64::from).collect::<Vec<_>>()), false).unwrap();
        assert_eq!(x.iter().filter(|v| **v == 1.0).count(), 2);
        assert_eq!(x.iter().filter(|v| **v == -1.0).count(), 2);
        assert_eq!((x[19], x[18], x[0], x[1]), (1.0, 1.0, -1.0, -1.0));

        let x = cs_heston_signal(&scores(&[0.3, 0.1, 0.5, 0.2, 0.4]), false).unwrap();
        assert_eq!(x, vec![0.0, -1.0, 1.0, 0.0, 0.0]);

        let x = cs_heston_signal(&scores(&[0.1; 10]), false).unwrap();
        assert_eq!(x[0], 1.0);
        assert_eq!(x[9], -1.0);
        assert_eq!(x.iter().filter(|v| **v != 0.0).count(), 2);

        let mr = cs_heston_signal(&scores(&[0.3, 0.1, 0.5, 0.2, 0.4]), true).unwrap();
        assert_eq!(mr, vec![0.0, 1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn cs_heston_masks() {
        let mut s = scores(&[0.3, 0.1, 0.5]);
        s[2].valid = false;
        assert_eq!(cs_heston_signal(&s, false).unwrap(), vec![1.0, -1.0, 0.0]);
        s[1].valid = false;
        assert!(matches!(cs_heston_signal(&s, false), Err(Error::TooFewStocks(1))));
    }
}
