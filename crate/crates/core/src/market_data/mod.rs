//! Option-chain ingestion and monthly straddle formation.
//!
//! Quotes pass through [`apply_filters`] before a formation-day chain is
//! reduced to one call/put pair by [`select_atm_pair`]. The pair is weighted
//! so the initial net delta is zero ([`delta_neutral_weights`]) and tracked
//! daily until expiry by [`build_straddle_series`]. [`form_straddles`] runs
//! the whole procedure over a dataset and keeps the reason for every
//! discarded straddle.

mod formation;
mod ingest;

pub use formation::{
    apply_filters, build_straddle_series, delta_neutral_weights, form_straddles,
    select_atm_pair, FormationOutcome, Rejection, StockBook, MONEYNESS_RANGE,
};
pub use ingest::{
    ingest_csv, parse_options_csv, parse_stocks_csv, write_options_csv, write_stocks_csv,
    OPTIONS_HEADER, STOCKS_HEADER,
};

use chrono::{Datelike, Months, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptionType {
    Call,
    Put,
}

impl OptionType {
    pub fn code(self) -> &'static str {
        match self {
            OptionType::Call => "C",
            OptionType::Put => "P",
        }
    }
}

/// One end-of-day observation of one option contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub date: NaiveDate,
    pub underlying: String,
    pub option_type: OptionType,
    pub strike: f64,
    pub expiry: NaiveDate,
    pub bid: f64,
    pub ask: f64,
    pub delta: f64,
    pub open_interest: u64,
    pub standard_settlement: bool,
}

impl OptionQuote {
    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }

    /// S/K for calls, K/S for puts.
    pub fn moneyness(&self, spot: f64) -> f64 {
        match self.option_type {
            OptionType::Call => spot / self.strike,
            OptionType::Put => self.strike / spot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockPrice {
    pub date: NaiveDate,
    pub underlying: String,
    pub close: f64,
}

/// Formation-day terms of a static delta-neutral straddle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StraddleDefinition {
    pub underlying: String,
    pub formation_date: NaiveDate,
    pub expiry: NaiveDate,
    pub strike: f64,
    pub w_call: f64,
    pub w_put: f64,
    pub call_delta0: f64,
    pub put_delta0: f64,
}

impl StraddleDefinition {
    /// Net delta of the weighted pair at formation; zero up to rounding.
    pub fn initial_delta(&self) -> f64 {
        self.w_call * self.call_delta0 + self.w_put * self.put_delta0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StraddleRecord {
    pub date: NaiveDate,
    pub spot: f64,
    pub call_mid: f64,
    pub put_mid: f64,
    pub price: f64,
    /// Simple return from this record to the next; `None` on the expiry day.
    pub ret_next: Option<f64>,
    pub log_moneyness_call: f64,
    pub log_moneyness_put: f64,
    pub dte_years: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StraddleSeries {
    pub definition: StraddleDefinition,
    pub records: Vec<StraddleRecord>,
}

impl StraddleSeries {
    pub fn underlying(&self) -> &str {
        &self.definition.underlying
    }

    /// Formation-to-expiry return of the straddle held unchanged.
    pub fn hold_return(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(first), Some(last)) => last.price / first.price - 1.0,
            _ => 0.0,
        }
    }

    /// Daily returns `r_{t,t+1}` for every record that has a successor.
    pub fn returns(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().filter_map(|r| r.ret_next)
    }
}

/// Third Friday of the given month.
pub fn third_friday(year: i32, month: u32) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, Weekday::Fri, 3)
        .expect("every month has a third Friday")
}

pub fn is_third_friday(date: NaiveDate) -> bool {
    date == third_friday(date.year(), date.month())
}

/// Standard monthly expiry in the month after `date`.
pub fn next_month_expiry(date: NaiveDate) -> NaiveDate {
    let next = date
        .with_day(1)
        .and_then(|d| d.checked_add_months(Months::new(1)))
        .expect("date within chrono range");
    third_friday(next.year(), next.month())
}

/// Weekdays from `start` to `end`, both inclusive.
pub fn weekdays_between(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn third_fridays() {
        assert_eq!(third_friday(2010, 1), d(2010, 1, 15));
        assert_eq!(third_friday(2023, 12), d(2023, 12, 15));
        assert_eq!(third_friday(2020, 3), d(2020, 3, 20));
        assert!(is_third_friday(d(2019, 12, 20)));
        assert!(!is_third_friday(d(2019, 12, 13)));
    }

    #[test]
    fn next_expiry_crosses_year() {
        assert_eq!(next_month_expiry(d(2019, 12, 20)), d(2020, 1, 17));
        assert_eq!(next_month_expiry(d(2010, 1, 31)), d(2010, 2, 19));
    }

    #[test]
    fn weekday_calendar() {
        let days = weekdays_between(d(2010, 1, 15), d(2010, 2, 19));
        assert_eq!(days.first(), Some(&d(2010, 1, 15)));
        assert_eq!(days.last(), Some(&d(2010, 2, 19)));
        assert_eq!(days.len(), 26);
    }
}
