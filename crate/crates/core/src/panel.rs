//! Per-stock daily panel assembled from formed straddles.
//!
//! Each stock holds one straddle at a time: the straddle formed on a monthly
//! expiry day is held until the next one, when it rolls into the newly
//! formed contract. Its daily returns are stitched into a single history
//! from which volatility, trend and momentum features are computed.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::Result;
use crate::indicators::{
    build_features, day_volatility, ContractState, FeatureContext, FeatureVector, MonthlyReturn,
    VolEstimate, FEATURE_DIM,
};
use crate::market_data::StraddleSeries;

/// One tradable straddle-day: a position taken at the close of `date` earns
/// `ret_next`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelDay {
    pub date: NaiveDate,
    pub straddle: usize,
    pub record: usize,
    pub ret_next: f64,
    pub vol: VolEstimate,
    pub features: FeatureVector,
}

impl PanelDay {
    pub fn is_first_of_straddle(&self) -> bool {
        self.record == 0
    }
}

#[derive(Debug, Clone)]
pub struct StockHistory {
    pub underlying: String,
    pub straddles: Vec<StraddleSeries>,
    pub days: Vec<PanelDay>,
}

impl StockHistory {
    pub fn returns(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.ret_next).collect()
    }

    /// Completed hold-to-expiry returns of every straddle of the stock.
    pub fn monthly_returns(&self) -> Vec<MonthlyReturn> {
        monthly_returns(&self.straddles)
    }

    /// Index of the last tradable day of each straddle.
    pub fn is_last_of_straddle(&self, k: usize) -> bool {
        self.days
            .get(k + 1)
            .is_none_or(|next| next.straddle != self.days[k].straddle)
    }
}

fn monthly_returns(straddles: &[StraddleSeries]) -> Vec<MonthlyReturn> {
    straddles
        .iter()
        .map(|s| MonthlyReturn {
            formation: s.definition.formation_date,
            expiry: s.definition.expiry,
            ret: s.hold_return(),
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub stocks: Vec<StockHistory>,
}

impl Panel {
    /// Groups straddles by underlying and stitches them chronologically.
    /// A straddle formed before the previous one expired is skipped.
    pub fn from_straddles(straddles: Vec<StraddleSeries>) -> Self {
        let mut by_stock: BTreeMap<String, Vec<StraddleSeries>> = BTreeMap::new();
        for s in straddles {
            by_stock.entry(s.definition.underlying.clone()).or_default().push(s);
        }
        let stocks = by_stock
            .into_iter()
            .map(|(underlying, mut list)| {
                list.sort_by_key(|s| s.definition.formation_date);
                let mut kept: Vec<StraddleSeries> = Vec::with_capacity(list.len());
                for s in list {
                    let overlaps = kept
                        .last()
                        .is_some_and(|prev| s.definition.formation_date < prev.definition.expiry);
                    if !overlaps && s.records.len() >= 2 {
                        kept.push(s);
                    }
                }
                stitch(underlying, kept)
            })
            .collect();
        Self { stocks }
    }

    /// Sorted union of all tradable dates.
    pub fn calendar(&self) -> Vec<NaiveDate> {
        let mut dates: Vec<NaiveDate> = self
            .stocks
            .iter()
            .flat_map(|s| s.days.iter().map(|d| d.date))
            .collect();
        dates.sort();
        dates.dedup();
        dates
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.stocks.iter().filter_map(|s| s.days.first()).map(|d| d.date).min()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.stocks.iter().filter_map(|s| s.days.last()).map(|d| d.date).max()
    }

    pub fn n_days(&self) -> usize {
        self.stocks.iter().map(|s| s.days.len()).sum()
    }

    /// Writes `underlying,formation_date,date,f1..f15,mask1..mask4`.
    pub fn write_features_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["underlying".to_string(), "formation_date".into(), "date".into()];
        header.extend((1..=FEATURE_DIM).map(|i| format!("f{i}")));
        header.extend((1..=4).map(|i| format!("mask{i}")));
        writeln!(w, "{}", header.join(","))?;
        for stock in &self.stocks {
            for day in &stock.days {
                let formation = stock.straddles[day.straddle].definition.formation_date;
                let mut row = vec![stock.underlying.clone(), formation.to_string(), day.date.to_string()];
                row.extend(day.features.values.iter().map(|v| v.to_string()));
                row.extend(
                    day.features
                        .momentum_mask
                        .iter()
                        .map(|m| if *m { "1" } else { "0" }.to_string()),
                );
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

fn stitch(underlying: String, straddles: Vec<StraddleSeries>) -> StockHistory {
    let mut skeleton = Vec::new();
    let mut contracts = Vec::new();
    for (si, s) in straddles.iter().enumerate() {
        for (ri, rec) in s.records.iter().enumerate() {
            if let Some(ret) = rec.ret_next {
                skeleton.push((rec.date, si, ri, ret));
                contracts.push(ContractState {
                    formation_date: s.definition.formation_date,
                    log_moneyness_call: rec.log_moneyness_call,
                    log_moneyness_put: rec.log_moneyness_put,
                    dte_years: rec.dte_years,
                });
            }
        }
    }
    let returns: Vec<f64> = skeleton.iter().map(|s| s.3).collect();
    let monthly = monthly_returns(&straddles);
    let ctx = FeatureContext {
        returns: &returns,
        monthly: &monthly,
    };
    let features = build_features(&ctx, &contracts);
    let vols = day_volatility(&returns, returns.len());
    let days = skeleton
        .into_iter()
        .zip(features)
        .zip(vols)
        .map(|(((date, straddle, record, ret_next), features), vol)| PanelDay {
            date,
            straddle,
            record,
            ret_next,
            vol,
            features,
        })
        .collect();
    StockHistory {
        underlying,
        straddles,
        days,
    }
}
