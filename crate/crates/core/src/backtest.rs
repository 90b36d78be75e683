//! Walk-forward evaluation: window tiling, equal-weight vol-targeted
//! aggregation, proportional turnover costs and performance metrics.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::{SQRT_TRADING_DAYS, TARGET_VOL, TRADING_DAYS};

pub const DEFAULT_BLOCK_YEARS: i32 = 5;
/// Basis-point grid of the cost sweep.
pub const DEFAULT_COST_GRID: [f64; 8] = [0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 50.0];

/// Inclusive calendar ranges of one walk-forward step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktestWindow {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

fn jan1(year: i32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year")
}

fn dec31(year: i32) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year")
}

/// Calendar-year blocks anchored on `panel_start`'s year: train on the first
/// `k` blocks, test on block `k + 1`, truncated at `panel_end`.
pub fn expanding_windows(panel_start: NaiveDate, panel_end: NaiveDate, block_years: i32) -> Result<Vec<BacktestWindow>> {
    if block_years < 1 {
        return Err(Error::InvalidConfig(format!("block_years {block_years} < 1")));
    }
    let y0 = panel_start.year();
    let span = panel_end.year() - y0 + 1;
    if span < 2 * block_years {
        return Err(Error::SpanTooShort {
            years: span,
            needed: 2 * block_years,
        });
    }
    let mut out = Vec::new();
    let mut k = 1;
    while y0 + k * block_years <= panel_end.year() {
        let test_year = y0 + k * block_years;
        out.push(BacktestWindow {
            train_start: jan1(y0),
            train_end: dec31(test_year - 1),
            test_start: jan1(test_year),
            test_end: dec31(test_year + block_years - 1).min(panel_end),
        });
        k += 1;
    }
    Ok(out)
}

/// Identity of a straddle: underlying and formation day.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StraddleKey {
    pub underlying: String,
    pub formation: NaiveDate,
}

/// Position `X` held in one straddle from the close of `date` to the next
/// trading day, with the annualized volatility used for sizing and the
/// return earned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub date: NaiveDate,
    pub key: StraddleKey,
    pub position: f64,
    pub sigma_ann: f64,
    pub ret_next: f64,
}

impl Exposure {
    /// Vol-targeted position `X * sigma_tgt / sigma`.
    pub fn scaled(&self) -> f64 {
        self.position * TARGET_VOL / self.sigma_ann
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioReturns {
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<f64>,
    /// Active straddles per day.
    pub active: Vec<usize>,
    /// Exposures sorted by (straddle, date).
    pub exposures: Vec<Exposure>,
}

struct Aggregate {
    returns: Vec<f64>,
    active: Vec<usize>,
    /// Mean absolute change of scaled positions per day, entry and exit
    /// included.
    turnover: Vec<f64>,
}

/// The single aggregation path behind raw and cost-adjusted returns. Raw
/// returns do not need consecutive-day linkage, so only `linked` runs check it.
fn aggregate(calendar: &[NaiveDate], exposures: &[Exposure], c_bps: f64, linked: bool) -> Result<Aggregate> {
    let index: HashMap<NaiveDate, usize> = calendar.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let c = c_bps * 1e-4;
    let mut sum = vec![0.0; calendar.len()];
    let mut turn = vec![0.0; calendar.len()];
    let mut active = vec![0usize; calendar.len()];
    for (i, e) in exposures.iter().enumerate() {
        let t = index[&e.date];
        let q = e.scaled();
        let prev = exposures
            .get(i.wrapping_sub(1))
            .filter(|p| i > 0 && p.key == e.key);
        let q_prev = match prev {
            Some(p) => {
                if linked && index[&p.date] + 1 != t {
                    return Err(Error::MissingLinkage(format!(
                        "{} {}: no exposure between {} and {}",
                        e.key.underlying, e.key.formation, p.date, e.date
                    )));
                }
                p.scaled()
            }
            None => 0.0,
        };
        let last = exposures.get(i + 1).is_none_or(|n| n.key != e.key);
        let mut traded = (q - q_prev).abs();
        if last {
            traded += q.abs();
        }
        sum[t] += q * e.ret_next - c * traded;
        turn[t] += traded;
        active[t] += 1;
    }
    let returns = sum
        .iter()
        .zip(&active)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let turnover = turn
        .iter()
        .zip(&active)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    Ok(Aggregate {
        returns,
        active,
        turnover,
    })
}

/// Equal-weight average of vol-targeted straddle returns per calendar day;
/// days without active straddles return 0.
pub fn portfolio_returns(calendar: &[NaiveDate], mut exposures: Vec<Exposure>) -> Result<PortfolioReturns> {
    if calendar.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Alignment("calendar must be strictly increasing".into()));
    }
    let known: std::collections::HashSet<&NaiveDate> = calendar.iter().collect();
    for e in &exposures {
        if !known.contains(&e.date) {
            return Err(Error::Alignment(format!(
                "{} {} dated {} is outside the calendar",
                e.key.underlying, e.key.formation, e.date
            )));
        }
        if !(e.sigma_ann > 0.0) || !e.position.is_finite() || !e.ret_next.is_finite() {
            return Err(Error::Alignment(format!(
                "{} {} on {}: non-finite position/return or non-positive volatility",
                e.key.underlying, e.key.formation, e.date
            )));
        }
    }
    exposures.sort_by(|a, b| (&a.key, a.date).cmp(&(&b.key, b.date)));
    if let Some(w) = exposures.windows(2).find(|w| w[0].key == w[1].key && w[0].date == w[1].date) {
        return Err(Error::Alignment(format!(
            "{} {} appears twice on {}",
            w[0].key.underlying, w[0].key.formation, w[0].date
        )));
    }
    let agg = aggregate(calendar, &exposures, 0.0, false)?;
    Ok(PortfolioReturns {
        dates: calendar.to_vec(),
        returns: agg.returns,
        active: agg.active,
        exposures,
    })
}

/// Daily returns net of `c * |q_t - q_{t-1}|` per straddle, entry from and
/// exit to a flat position charged.
pub fn cost_adjusted_returns(portfolio: &PortfolioReturns, c_bps: f64) -> Result<Vec<f64>> {
    if !(c_bps >= 0.0) {
        return Err(Error::InvalidConfig(format!("cost {c_bps} bps must be >= 0")));
    }
    Ok(aggregate(&portfolio.dates, &portfolio.exposures, c_bps, true)?.returns)
}

/// Per-day mean absolute change of vol-targeted positions.
pub fn daily_turnover(portfolio: &PortfolioReturns) -> Result<Vec<f64>> {
    Ok(aggregate(&portfolio.dates, &portfolio.exposures, 0.0, true)?.turnover)
}

/// Mean of [`daily_turnover`] over days with active straddles.
pub fn mean_daily_turnover(portfolio: &PortfolioReturns) -> Result<f64> {
    let agg = aggregate(&portfolio.dates, &portfolio.exposures, 0.0, true)?;
    let (s, n) = agg
        .turnover
        .iter()
        .zip(&agg.active)
        .filter(|(_, &a)| a > 0)
        .fold((0.0, 0usize), |(s, n), (t, _)| (s + t, n + 1));
    Ok(if n == 0 { 0.0 } else { s / n as f64 })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn annualized_vol(returns: &[f64]) -> f64 {
    mean_std(returns).1 * SQRT_TRADING_DAYS
}

/// Multiplier that brings the series' realized annualized vol to `target`.
pub fn vol_scale_factor(returns: &[f64], target: f64) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let vol = annualized_vol(returns);
    if !(vol > 0.0) || !vol.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok(target / vol)
}

/// Ex-post constant rescaling of a whole series to `target` annualized vol.
pub fn rescale_to_target_vol(returns: &[f64], target: f64) -> Result<Vec<f64>> {
    let k = vol_scale_factor(returns, target)?;
    Ok(returns.iter().map(|r| r * k).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub expected_return: f64,
    pub volatility: f64,
    /// `None` when there are no losing days.
    pub downside_deviation: Option<f64>,
    pub mdd: f64,
    pub sharpe: f64,
    pub sortino: Option<f64>,
    /// `None` without a drawdown.
    pub calmar: Option<f64>,
    pub hit_rate: f64,
    pub avg_profit_over_avg_loss: Option<f64>,
}

/// Largest peak-to-trough fraction of the compounded equity curve that
/// starts at 1.
pub fn max_drawdown(returns: &[f64]) -> f64 {
    let mut equity = 1.0;
    let mut peak = 1.0;
    let mut mdd: f64 = 0.0;
    for r in returns {
        equity *= 1.0 + r;
        if equity > peak {
            peak = equity;
        }
        mdd = mdd.max((peak - equity) / peak);
    }
    mdd
}

pub fn sharpe_ratio(returns: &[f64]) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            available: returns.len(),
        });
    }
    let (mean, sd) = mean_std(returns);
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(mean / sd * SQRT_TRADING_DAYS)
}

pub fn compute_metrics(returns: &[f64]) -> Result<MetricsReport> {
    let sharpe = sharpe_ratio(returns)?;
    let (mean, sd) = mean_std(returns);
    let expected_return = mean * TRADING_DAYS;
    let losses: Vec<f64> = returns.iter().copied().filter(|r| *r < 0.0).collect();
    let gains: Vec<f64> = returns.iter().copied().filter(|r| *r > 0.0).collect();
    let downside_deviation = (!losses.is_empty()).then(|| mean_std(&losses).1 * SQRT_TRADING_DAYS);
    let sortino = downside_deviation.filter(|d| *d > 0.0).map(|d| expected_return / d);
    let mdd = max_drawdown(returns);
    let calmar = (mdd > 0.0).then(|| expected_return / mdd);
    let avg_profit_over_avg_loss = (!losses.is_empty() && !gains.is_empty()).then(|| {
        let g = gains.iter().sum::<f64>() / gains.len() as f64;
        let l = losses.iter().sum::<f64>() / losses.len() as f64;
        g / l.abs()
    });
    Ok(MetricsReport {
        expected_return,
        volatility: sd * SQRT_TRADING_DAYS,
        downside_deviation,
        mdd,
        sharpe,
        sortino,
        calmar,
        hit_rate: gains.len() as f64 / returns.len() as f64,
        avg_profit_over_avg_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cost_bps: f64,
    pub sharpe: f64,
}

/// Sharpe of the cost-adjusted series at each cost level, every series
/// multiplied by the factor that rescales the raw series to 15% vol.
pub fn cost_sweep(portfolio: &PortfolioReturns, grid: &[f64]) -> Result<Vec<SweepRow>> {
    let k = vol_scale_factor(&portfolio.returns, TARGET_VOL)?;
    grid.iter()
        .map(|&c| {
            let net: Vec<f64> = cost_adjusted_returns(portfolio, c)?.iter().map(|r| r * k).collect();
            Ok(SweepRow {
                cost_bps: c,
                sharpe: compute_metrics(&net)?.sharpe,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "cost_bps,sharpe")?;
    for r in rows {
        writeln!(w, "{},{}", r.cost_bps, r.sharpe)?;
    }
    Ok(())
}

pub fn write_returns_csv<W: Write>(dates: &[NaiveDate], returns: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "date,return")?;
    for (d, r) in dates.iter().zip(returns) {
        writeln!(w, "{d},{r}")?;
    }
    Ok(())
}

/// Compounded equity curve, one value per date.
pub fn write_cumulative_csv<W: Write>(dates: &[NaiveDate], returns: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "date,cumulative")?;
    let mut equity = 1.0;
    for (d, r) in dates.iter().zip(returns) {
        equity *= 1.0 + r;
        writeln!(w, "{d},{equity}")?;
    }
    Ok(())
}

pub fn write_positions_csv<W: Write>(exposures: &[Exposure], mut w: W) -> Result<()> {
    writeln!(w, "date,underlying,formation_date,position,sigma_ann,ret_next")?;
    for e in exposures {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e.date, e.key.underlying, e.key.formation, e.position, e.sigma_ann, e.ret_next
        )?;
    }
    Ok(())
}

/// Parses `date,underlying,formation_date,position,sigma_ann,ret_next`.
pub fn parse_positions_csv<R: std::io::Read>(reader: R) -> Result<Vec<Exposure>> {
    let header = ["date", "underlying", "formation_date", "position", "sigma_ann", "ret_next"];
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut out = Vec::new();
    let mut saw_header = false;
    let parse_err = |row: u64, column: &str, message: String| Error::Parse {
        row,
        column: column.to_string(),
        message,
    };
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 1;
        let rec = rec.map_err(|e| parse_err(row, "", e.to_string()))?;
        if i == 0 {
            saw_header = true;
            if rec.iter().ne(header.iter().copied()) {
                return Err(parse_err(1, "", format!("header must be `{}`", header.join(","))));
            }
            continue;
        }
        if rec.len() != header.len() {
            return Err(parse_err(row, "", format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let date = |c: usize| {
            NaiveDate::parse_from_str(&rec[c], "%Y-%m-%d")
                .map_err(|e| parse_err(row, header[c], format!("{:?}: {e}", &rec[c])))
        };
        let num = |c: usize| match rec[c].parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(parse_err(row, header[c], format!("expected a number, got {:?}", &rec[c]))),
        };
        if rec[1].is_empty() {
            return Err(parse_err(row, "underlying", "empty value".into()));
        }
        out.push(Exposure {
            date: date(0)?,
            key: StraddleKey {
                underlying: rec[1].to_string(),
                formation: date(2)?,
            },
            position: num(3)?,
            sigma_ann: num(4)?,
            ret_next: num(5)?,
        });
    }
    if !saw_header {
        return Err(parse_err(1, "", "missing header".into()));
    }
    Ok(out)
}

/// Sorted union of exposure dates.
pub fn exposure_calendar(exposures: &[Exposure]) -> Vec<NaiveDate> {
    let set: BTreeMap<NaiveDate, ()> = exposures.iter().map(|e| (e.date, ())).collect();
    set.into_keys().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn key(u: &str) -> StraddleKey {
        StraddleKey {
            underlying: u.into(),
            formation: d(2010, 1, 15),
        }
    }

    fn exp(date: NaiveDate, u: &str, x: f64, sigma: f64, r: f64) -> Exposure {
        Exposure {
            date,
            key: key(u),
            position: x,
            sigma_ann: sigma,
            ret_next: r,
        }
    }

    #[test]
    fn window_tiling() {
        let w = expanding_windows(d(2010, 1, 4), d(2023, 12, 29), 5).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].train_start, w[0].train_end), (d(2010, 1, 1), d(2014, 12, 31)));
        assert_eq!((w[0].test_start, w[0].test_end), (d(2015, 1, 1), d(2019, 12, 31)));
        assert_eq!((w[1].train_start, w[1].train_end), (d(2010, 1, 1), d(2019, 12, 31)));
        assert_eq!((w[1].test_start, w[1].test_end), (d(2020, 1, 1), d(2023, 12, 29)));
        assert_eq!(expanding_windows(d(2010, 1, 15), d(2019, 12, 20), 5).unwrap().len(), 1);
        assert!(matches!(
            expanding_windows(d(2010, 1, 15), d(2018, 12, 20), 5),
            Err(Error::SpanTooShort { years: 9, needed: 10 })
        ));
    }

    #[test]
    fn aggregation_examples() {
        let day = d(2010, 1, 18);
        let p = portfolio_returns(
            &[day],
            vec![exp(day, "A", 1.0, 0.15, 0.02), exp(day, "B", -1.0, 0.15, 0.04)],
        )
        .unwrap();
        assert!((p.returns[0] + 0.01).abs() < 1e-15);
        assert_eq!(p.active, vec![2]);
        let p = portfolio_returns(&[day], vec![exp(day, "A", 0.0, 0.15, 0.02)]).unwrap();
        assert_eq!(p.returns[0], 0.0);
        let p = portfolio_returns(&[day], vec![exp(day, "A", 1.0, 0.30, 0.02)]).unwrap();
        assert!((p.returns[0] - 0.01).abs() < 1e-15);
        let empty = portfolio_returns(&[day, d(2010, 1, 19)], vec![exp(day, "A", 1.0, 0.15, 0.02)]).unwrap();
        assert_eq!(empty.returns[1], 0.0);
        assert_eq!(empty.active[1], 0);
        assert!(matches!(
            portfolio_returns(&[day], vec![exp(d(2011, 1, 3), "A", 1.0, 0.15, 0.0)]),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn cost_examples() {
        let days = [d(2010, 1, 18), d(2010, 1, 19), d(2010, 1, 20)];
        let ex: Vec<Exposure> = days.iter().map(|&t| exp(t, "A", 1.0, 0.15, 0.01)).collect();
        let p = portfolio_returns(&days, ex).unwrap();
        assert_eq!(cost_adjusted_returns(&p, 0.0).unwrap(), p.returns);
        let net = cost_adjusted_returns(&p, 10.0).unwrap();
        // entry on day one, nothing inside, exit on the last day
        assert!((p.returns[0] - net[0] - 0.001).abs() < 1e-15);
        assert_eq!(p.returns[1], net[1]);
        assert!((p.returns[2] - net[2] - 0.001).abs() < 1e-15);

        let gap = vec![exp(days[0], "A", 1.0, 0.15, 0.0), exp(days[2], "A", 1.0, 0.15, 0.0)];
        let p = portfolio_returns(&days, gap).unwrap();
        assert!(matches!(cost_adjusted_returns(&p, 1.0), Err(Error::MissingLinkage(_))));
    }

    #[test]
    fn rescaling() {
        let r: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.01 } else { -0.005 }).collect();
        let vol = annualized_vol(&r);
        let s = rescale_to_target_vol(&r, 0.15).unwrap();
        assert!((annualized_vol(&s) - 0.15).abs() < 1e-12);
        let doubled: Vec<f64> = r.iter().map(|x| x * 0.30 / vol).collect();
        let halved = rescale_to_target_vol(&doubled, 0.15).unwrap();
        for (a, b) in halved.iter().zip(&doubled) {
            assert!((a - b / 2.0).abs() < 1e-15);
        }
        assert!(matches!(rescale_to_target_vol(&[0.01; 5], 0.15), Err(Error::ZeroVariance)));
    }

    #[test]
    fn metric_examples() {
        // curve 1.0 -> 1.2 -> 0.9 -> 1.1
        let r = [0.2, 0.9 / 1.2 - 1.0, 1.1 / 0.9 - 1.0];
        assert!((max_drawdown(&r) - 0.25).abs() < 1e-15);
        let m = compute_metrics(&[0.01, -0.01]).unwrap();
        assert_eq!(m.expected_return, 0.0);
        assert_eq!(m.sharpe, 0.0);
        assert_eq!(m.hit_rate, 0.5);
        let up = compute_metrics(&[0.01, 0.02, 0.005]).unwrap();
        assert_eq!(up.hit_rate, 1.0);
        assert_eq!(up.downside_deviation, None);
        assert_eq!(up.sortino, None);
        assert_eq!(up.calmar, None);
        assert_eq!(up.mdd, 0.0);
        assert!(matches!(compute_metrics(&[0.01; 4]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn sweep_rows() {
        let days: Vec<NaiveDate> = d(2010, 1, 18).iter_days().take(30).collect();
        let ex: Vec<Exposure> = days
            .iter()
            .enumerate()
            .map(|(i, &t)| exp(t, "A", if i % 3 == 0 { 1.0 } else { -0.5 }, 0.15, 0.01 * ((i % 5) as f64 - 2.0)))
            .collect();
        let p = portfolio_returns(&days, ex).unwrap();
        let rows = cost_sweep(&p, &DEFAULT_COST_GRID).unwrap();
        assert_eq!(rows.len(), 8);
        let scaled = rescale_to_target_vol(&p.returns, TARGET_VOL).unwrap();
        assert_eq!(rows[0].sharpe, compute_metrics(&scaled).unwrap().sharpe);
        assert!(rows.windows(2).all(|w| w[1].sharpe <= w[0].sharpe));
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 9);
    }

    #[test]
    fn positions_csv_round_trip() {
        let ex = vec![exp(d(2010, 1, 18), "A", 0.25, 0.2, -0.01), exp(d(2010, 1, 19), "B", -1.0, 0.3, 0.1 + 0.2)];
        let mut buf = Vec::new();
        write_positions_csv(&ex, &mut buf).unwrap();
        assert_eq!(parse_positions_csv(buf.as_slice()).unwrap(), ex);
        assert!(parse_positions_csv("".as_bytes()).is_err());
        assert!(parse_positions_csv("date,underlying\n".as_bytes()).is_err());
    }
}
