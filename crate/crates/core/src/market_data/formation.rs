use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::Serialize;

use super::{
    is_third_friday, next_month_expiry, OptionQuote, OptionType, StockPrice, StraddleDefinition,
    StraddleRecord, StraddleSeries,
};
use crate::error::{Error, Result};

/// Admissible moneyness for both legs at formation.
pub const MONEYNESS_RANGE: (f64, f64) = (0.95, 1.05);

/// Stock closes keyed by underlying, then date.
#[derive(Debug, Clone, Default)]
pub struct StockBook {
    closes: BTreeMap<String, BTreeMap<NaiveDate, f64>>,
}

impl StockBook {
    pub fn new(prices: &[StockPrice]) -> Self {
        let mut closes: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
        for p in prices {
            closes
                .entry(p.underlying.clone())
                .or_default()
                .insert(p.date, p.close);
        }
        Self { closes }
    }

    pub fn close(&self, underlying: &str, date: NaiveDate) -> Option<f64> {
        self.closes.get(underlying)?.get(&date).copied()
    }

    pub fn underlyings(&self) -> impl Iterator<Item = &str> {
        self.closes.keys().map(String::as_str)
    }

    /// Trading days (days with a close) of `underlying` in `[from, to]`.
    pub fn trading_days(&self, underlying: &str, from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
        self.closes
            .get(underlying)
            .map(|m| m.range(from..=to).map(|(d, _)| *d).collect())
            .unwrap_or_default()
    }
}

fn within_american_bounds(q: &OptionQuote, spot: f64) -> bool {
    let mid = q.mid();
    let (lower, upper) = match q.option_type {
        OptionType::Call => ((spot - q.strike).max(0.0), spot),
        OptionType::Put => ((q.strike - spot).max(0.0), q.strike),
    };
    mid >= lower && mid <= upper
}

/// Keeps quotes with a positive bid, an uncrossed market, standard
/// settlement, a third-Friday expiry and a midpoint inside the intrinsic
/// American bounds against the same-day close.
pub fn apply_filters(quotes: &[OptionQuote], stocks: &StockBook) -> Result<Vec<OptionQuote>> {
    let mut kept = Vec::with_capacity(quotes.len());
    for q in quotes {
        let spot = stocks
            .close(&q.underlying, q.date)
            .ok_or_else(|| Error::MissingStockPrice {
                underlying: q.underlying.clone(),
                date: q.date,
            })?;
        if q.bid > 0.0
            && q.ask > q.bid
            && q.standard_settlement
            && is_third_friday(q.expiry)
            && within_american_bounds(q, spot)
        {
            kept.push(q.clone());
        }
    }
    Ok(kept)
}

fn in_window(m: f64) -> bool {
    m >= MONEYNESS_RANGE.0 && m <= MONEYNESS_RANGE.1
}

/// Picks the call/put pair at the shared strike closest to the money.
///
/// Both legs must sit in the moneyness window and carry open interest.
/// Equal distances resolve to the lower strike.
pub fn select_atm_pair(chain: &[OptionQuote], spot: f64) -> Result<(OptionQuote, OptionQuote)> {
    let mut by_strike: BTreeMap<u64, (f64, Option<&OptionQuote>, Option<&OptionQuote>)> =
        BTreeMap::new();
    for q in chain {
        let slot = by_strike
            .entry(q.strike.to_bits())
            .or_insert((q.strike, None, None));
        match q.option_type {
            OptionType::Call => slot.1 = Some(q),
            OptionType::Put => slot.2 = Some(q),
        }
    }

    let distance = |k: f64| (spot / k - 1.0).abs();
    let better = |a: (f64, f64), b: (f64, f64)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);

    let mut best_pair: Option<(f64, f64, &OptionQuote, &OptionQuote)> = None;
    let mut best_single: Option<(f64, f64, &'static str)> = None;
    for (strike, call, put) in by_strike.values() {
        let (strike, dist) = (*strike, distance(*strike));
        let both_in_window = in_window(spot / strike) && in_window(strike / spot);
        if !both_in_window {
            continue;
        }
        match (call, put) {
            (Some(c), Some(p)) => {
                if c.open_interest > 0
                    && p.open_interest > 0
                    && best_pair.is_none_or(|(d, k, _, _)| better((dist, strike), (d, k)))
                {
                    best_pair = Some((dist, strike, c, p));
                }
            }
            (Some(_), None) | (None, Some(_)) => {
                let present = if call.is_some() { "call" } else { "put" };
                if best_single.is_none_or(|(d, k, _)| better((dist, strike), (d, k))) {
                    best_single = Some((dist, strike, present));
                }
            }
            (None, None) => {}
        }
    }

    match (best_pair, best_single) {
        (Some((_, _, c, p)), _) => Ok((c.clone(), p.clone())),
        (None, Some((_, strike, present))) => Err(Error::MissingLeg { strike, present }),
        (None, None) => Err(Error::NoEligibleStrike),
    }
}

/// Normalized static weights `(w_call, w_put)` that zero the initial delta.
pub fn delta_neutral_weights(call_delta: f64, put_delta: f64) -> Result<(f64, f64)> {
    let valid = call_delta > 0.0 && call_delta <= 1.0 && (-1.0..0.0).contains(&put_delta);
    if !valid || call_delta - put_delta <= 0.0 {
        return Err(Error::DegenerateDeltas {
            call: call_delta,
            put: put_delta,
        });
    }
    let w_call = -put_delta;
    let w_put = call_delta;
    let w_call_norm = w_call / (w_call + w_put);
    Ok((w_call_norm, 1.0 - w_call_norm))
}

type ContractKey = (String, NaiveDate, OptionType, u64);

/// Filtered quotes keyed by contract for daily lookups.
struct QuoteIndex<'a> {
    contracts: HashMap<ContractKey, BTreeMap<NaiveDate, &'a OptionQuote>>,
}

impl<'a> QuoteIndex<'a> {
    fn new(quotes: &'a [OptionQuote]) -> Self {
        let mut contracts: HashMap<ContractKey, BTreeMap<NaiveDate, &'a OptionQuote>> =
            HashMap::new();
        for q in quotes {
            contracts
                .entry((q.underlying.clone(), q.expiry, q.option_type, q.strike.to_bits()))
                .or_default()
                .insert(q.date, q);
        }
        Self { contracts }
    }

    fn quote(
        &self,
        defn: &StraddleDefinition,
        kind: OptionType,
        date: NaiveDate,
    ) -> Option<&'a OptionQuote> {
        let key = (
            defn.underlying.clone(),
            defn.expiry,
            kind,
            defn.strike.to_bits(),
        );
        self.contracts.get(&key)?.get(&date).copied()
    }
}

/// Prices the weighted pair on every trading day from formation to expiry.
pub fn build_straddle_series(
    defn: &StraddleDefinition,
    quotes: &[OptionQuote],
    stocks: &StockBook,
) -> Result<StraddleSeries> {
    build_from_index(defn, &QuoteIndex::new(quotes), stocks)
}

fn build_from_index(
    defn: &StraddleDefinition,
    index: &QuoteIndex<'_>,
    stocks: &StockBook,
) -> Result<StraddleSeries> {
    let days = stocks.trading_days(&defn.underlying, defn.formation_date, defn.expiry);
    let mut records: Vec<StraddleRecord> = Vec::with_capacity(days.len());
    for date in days {
        let gap = |leg| Error::GapInSeries {
            underlying: defn.underlying.clone(),
            formation: defn.formation_date,
            date,
            leg,
        };
        let call = index
            .quote(defn, OptionType::Call, date)
            .ok_or_else(|| gap("call"))?;
        let put = index
            .quote(defn, OptionType::Put, date)
            .ok_or_else(|| gap("put"))?;
        let spot = stocks
            .close(&defn.underlying, date)
            .expect("trading days come from the stock book");
        let price = defn.w_call * call.mid() + defn.w_put * put.mid();
        if !(price > 0.0) {
            return Err(Error::NonPositivePrice {
                underlying: defn.underlying.clone(),
                formation: defn.formation_date,
                date,
            });
        }
        if let Some(prev) = records.last_mut() {
            prev.ret_next = Some(price / prev.price - 1.0);
        }
        records.push(StraddleRecord {
            date,
            spot,
            call_mid: call.mid(),
            put_mid: put.mid(),
            price,
            ret_next: None,
            log_moneyness_call: (spot / defn.strike).ln(),
            log_moneyness_put: (defn.strike / spot).ln(),
            dte_years: (defn.expiry - date).num_days() as f64 / 365.0,
        });
    }
    Ok(StraddleSeries {
        definition: defn.clone(),
        records,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Rejection {
    pub underlying: String,
    pub formation_date: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct FormationOutcome {
    pub straddles: Vec<StraddleSeries>,
    pub rejected: Vec<Rejection>,
}

/// Forms one straddle per underlying on every monthly expiry day that is a
/// trading day, expiring on the following month's expiry.
pub fn form_straddles(quotes: &[OptionQuote], stocks: &[StockPrice]) -> Result<FormationOutcome> {
    let book = StockBook::new(stocks);
    let filtered = apply_filters(quotes, &book)?;
    let index = QuoteIndex::new(&filtered);

    let mut chains: HashMap<(&str, NaiveDate, NaiveDate), Vec<OptionQuote>> = HashMap::new();
    for q in &filtered {
        chains
            .entry((q.underlying.as_str(), q.date, q.expiry))
            .or_default()
            .push(q.clone());
    }

    let mut outcome = FormationOutcome::default();
    for underlying in book.underlyings() {
        let days = book.trading_days(underlying, NaiveDate::MIN, NaiveDate::MAX);
        for formation in days.into_iter().filter(|d| is_third_friday(*d)) {
            let expiry = next_month_expiry(formation);
            let spot = book.close(underlying, formation).expect("trading day");
            let chain = chains
                .get(&(underlying, formation, expiry))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let formed = select_atm_pair(chain, spot).and_then(|(call, put)| {
                let (w_call, w_put) = delta_neutral_weights(call.delta, put.delta)?;
                let defn = StraddleDefinition {
                    underlying: underlying.to_string(),
                    formation_date: formation,
                    expiry,
                    strike: call.strike,
                    w_call,
                    w_put,
                    call_delta0: call.delta,
                    put_delta0: put.delta,
                };
                build_from_index(&defn, &index, &book)
            });
            match formed {
                Ok(series) if series.records.len() >= 2 => outcome.straddles.push(series),
                Ok(_) => outcome.rejected.push(Rejection {
                    underlying: underlying.to_string(),
                    formation_date: formation,
                    reason: "fewer than two trading days to expiry".into(),
                }),
                Err(e) => outcome.rejected.push(Rejection {
                    underlying: underlying.to_string(),
                    formation_date: formation,
                    reason: e.to_string(),
                }),
            }
        }
    }
    Ok(outcome)
}
