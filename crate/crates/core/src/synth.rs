//! Synthetic straddle panels with known serial correlation.
//!
//! Each stock rolls monthly straddles on a weekday calendar: a straddle is
//! formed on a third Friday and expires on the next month's third Friday,
//! where the following one is formed. Daily straddle returns follow one
//! AR(1) process per stock that runs continuously across rolls, so trend and
//! reversal strategies see the dependence they are meant to exploit.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{
    delta_neutral_weights, next_month_expiry, third_friday, weekdays_between, write_options_csv,
    write_stocks_csv, OptionQuote, OptionType, StockPrice, StraddleDefinition, StraddleRecord,
    StraddleSeries,
};

/// Strike of every synthetic straddle; the stock closes here on formation days.
pub const SYNTH_STRIKE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_stocks: usize,
    /// Calendar months covered; straddles are formed in all but the last.
    pub n_months: usize,
    pub start_year: i32,
    pub start_month: u32,
    pub ar1_rho: f64,
    /// Unconditional daily std of straddle returns.
    pub daily_vol: f64,
    pub seed: u64,
    pub strike_grid_spacing: f64,
    pub half_spread: f64,
    /// Call delta 0.6 / put delta -0.4 instead of +-0.5.
    pub skewed_deltas: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_stocks: 20,
            n_months: 120,
            start_year: 2010,
            start_month: 1,
            ar1_rho: 0.0,
            daily_vol: 0.02,
            seed: 0,
            strike_grid_spacing: 2.5,
            half_spread: 0.005,
            skewed_deltas: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_stocks == 0 {
            return bad("n_stocks must be positive".into());
        }
        if self.n_months < 2 {
            return bad(format!("n_months {} < 2", self.n_months));
        }
        if !(1..=12).contains(&self.start_month) {
            return bad(format!("start_month {}", self.start_month));
        }
        if !(self.ar1_rho.abs() < 1.0) {
            return bad(format!("ar1_rho {} outside (-1, 1)", self.ar1_rho));
        }
        if !(self.daily_vol > 0.0 && self.daily_vol <= 0.1) {
            return bad(format!("daily_vol {} outside (0, 0.1]", self.daily_vol));
        }
        if !(self.strike_grid_spacing > 0.0 && self.strike_grid_spacing < SYNTH_STRIKE / 2.0) {
            return bad(format!("strike_grid_spacing {}", self.strike_grid_spacing));
        }
        // a zero half-spread makes ask == bid, which the filters reject
        if !(self.half_spread > 0.0 && self.half_spread.is_finite()) {
            return bad(format!("half_spread {} must be > 0", self.half_spread));
        }
        Ok(())
    }

    fn deltas(&self) -> (f64, f64) {
        if self.skewed_deltas {
            (0.6, -0.4)
        } else {
            (0.5, -0.5)
        }
    }

    pub fn underlying(i: usize) -> String {
        format!("SYN{i:03}")
    }

    /// Third Fridays on which straddles are formed.
    pub fn formation_dates(&self) -> Vec<NaiveDate> {
        let first = NaiveDate::from_ymd_opt(self.start_year, self.start_month, 1).expect("valid month");
        (0..self.n_months - 1)
            .map(|m| {
                let d = first
                    .checked_add_months(chrono::Months::new(m as u32))
                    .expect("date in range");
                third_friday(d.year(), d.month())
            })
            .collect()
    }
}

/// One simulated day of a straddle's life.
#[derive(Debug, Clone, Copy)]
struct SimDay {
    date: NaiveDate,
    spot: f64,
    price: f64,
}

struct SimStraddle {
    formation: NaiveDate,
    expiry: NaiveDate,
    days: Vec<SimDay>,
}

fn simulate_stock(spec: &SynthSpec, stock: usize) -> Vec<SimStraddle> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stock as u64 + 1);
    let innov = Normal::new(0.0, spec.daily_vol * (1.0 - spec.ar1_rho * spec.ar1_rho).sqrt())
        .expect("validated vol");
    let stationary = Normal::new(0.0, spec.daily_vol).expect("validated vol");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut r = stationary.sample(&mut rng);
    let mut out = Vec::new();
    for formation in spec.formation_dates() {
        let expiry = next_month_expiry(formation);
        let dates = weekdays_between(formation, expiry);
        let mut days = Vec::with_capacity(dates.len());
        let mut price: f64 = 1.0;
        for (i, &date) in dates.iter().enumerate() {
            // roll days (formation and expiry) close exactly at the strike
            let spot = if i == 0 || i + 1 == dates.len() {
                SYNTH_STRIKE
            } else {
                // spot noise bounded by half the leg price keeps each leg
                // above its intrinsic value
                let half = 0.5 * price;
                SYNTH_STRIKE + (0.25 * price * unit.sample(&mut rng)).clamp(-half, half)
            };
            days.push(SimDay { date, spot, price });
            if i + 1 < dates.len() {
                price *= 1.0 + r;
                r = spec.ar1_rho * r + innov.sample(&mut rng);
            }
        }
        out.push(SimStraddle {
            formation,
            expiry,
            days,
        });
    }
    out
}

fn definition(spec: &SynthSpec, underlying: &str, s: &SimStraddle) -> Result<StraddleDefinition> {
    let (call_delta0, put_delta0) = spec.deltas();
    let (w_call, w_put) = delta_neutral_weights(call_delta0, put_delta0)?;
    Ok(StraddleDefinition {
        underlying: underlying.to_string(),
        formation_date: s.formation,
        expiry: s.expiry,
        strike: SYNTH_STRIKE,
        w_call,
        w_put,
        call_delta0,
        put_delta0,
    })
}

/// Straddle series straight from the simulation, without going through quotes.
pub fn generate_straddle_panel(spec: &SynthSpec) -> Result<Vec<StraddleSeries>> {
    spec.validate()?;
    let per_stock: Vec<Result<Vec<StraddleSeries>>> = (0..spec.n_stocks)
        .into_par_iter()
        .map(|i| {
            let name = SynthSpec::underlying(i);
            simulate_stock(spec, i)
                .iter()
                .map(|s| {
                    let definition = definition(spec, &name, s)?;
                    let mut records: Vec<StraddleRecord> = Vec::with_capacity(s.days.len());
                    for d in &s.days {
                        if let Some(prev) = records.last_mut() {
                            prev.ret_next = Some(d.price / prev.price - 1.0);
                        }
                        records.push(StraddleRecord {
                            date: d.date,
                            spot: d.spot,
                            call_mid: d.price,
                            put_mid: d.price,
                            price: definition.w_call * d.price + definition.w_put * d.price,
                            ret_next: None,
                            log_moneyness_call: (d.spot / SYNTH_STRIKE).ln(),
                            log_moneyness_put: (SYNTH_STRIKE / d.spot).ln(),
                            dte_years: (s.expiry - d.date).num_days() as f64 / 365.0,
                        });
                    }
                    Ok(StraddleSeries { definition, records })
                })
                .collect()
        })
        .collect();
    let mut all = Vec::new();
    for s in per_stock {
        all.extend(s?);
    }
    Ok(all)
}

/// Quotes and closes whose formation reproduces `generate_straddle_panel`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthMarket {
    pub quotes: Vec<OptionQuote>,
    pub stocks: Vec<StockPrice>,
}

pub fn generate_market(spec: &SynthSpec) -> Result<SynthMarket> {
    spec.validate()?;
    let (call_delta, put_delta) = spec.deltas();
    let per_stock: Vec<SynthMarket> = (0..spec.n_stocks)
        .into_par_iter()
        .map(|i| {
            let name = SynthSpec::underlying(i);
            let mut quotes = Vec::new();
            let mut stocks: Vec<StockPrice> = Vec::new();
            for s in simulate_stock(spec, i) {
                for (k, d) in s.days.iter().enumerate() {
                    if stocks.last().is_none_or(|p| p.date < d.date) {
                        stocks.push(StockPrice {
                            date: d.date,
                            underlying: name.clone(),
                            close: d.spot,
                        });
                    }
                    let strikes: &[f64] = if k == 0 {
                        &[-1.0, 0.0, 1.0]
                    } else {
                        &[0.0]
                    };
                    for off in strikes {
                        let strike = SYNTH_STRIKE + off * spec.strike_grid_spacing;
                        for (option_type, delta) in [(OptionType::Call, call_delta), (OptionType::Put, put_delta)] {
                            let intrinsic = match option_type {
                                OptionType::Call => (d.spot - strike).max(0.0),
                                OptionType::Put => (strike - d.spot).max(0.0),
                            };
                            let mid = d.price + if *off == 0.0 { 0.0 } else { intrinsic };
                            let h = spec.half_spread.min(mid / 4.0);
                            quotes.push(OptionQuote {
                                date: d.date,
                                underlying: name.clone(),
                                option_type,
                                strike,
                                expiry: s.expiry,
                                bid: mid - h,
                                ask: mid + h,
                                delta,
                                open_interest: 100,
                                standard_settlement: true,
                            });
                        }
                    }
                }
            }
            SynthMarket { quotes, stocks }
        })
        .collect();
    let mut market = SynthMarket {
        quotes: Vec::new(),
        stocks: Vec::new(),
    };
    for m in per_stock {
        market.quotes.extend(m.quotes);
        market.stocks.extend(m.stocks);
    }
    Ok(market)
}

/// Writes `options.csv` and `stocks.csv` in the ingestion schema.
pub fn generate_option_chain_csv(spec: &SynthSpec, options: &Path, stocks: &Path) -> Result<()> {
    let market = generate_market(spec)?;
    write_options_csv(BufWriter::new(File::create(options)?), &market.quotes)?;
    write_stocks_csv(BufWriter::new(File::create(stocks)?), &market.stocks)?;
    Ok(())
}

/// Lag-1 sample autocorrelation.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

/// Draws a fresh seed list from one master seed; used for seed averaging.
pub fn derive_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..n).map(|_| rng.random()).collect()
}
