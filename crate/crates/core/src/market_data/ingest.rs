use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{OptionQuote, OptionType, StockPrice};
use crate::error::{Error, Result};

pub const OPTIONS_HEADER: [&str; 10] = [
    "date",
    "underlying",
    "type",
    "strike",
    "expiry",
    "bid",
    "ask",
    "delta",
    "open_interest",
    "standard_settlement",
];

pub const STOCKS_HEADER: [&str; 3] = ["date", "underlying", "close"];

/// Reads `options.csv` and `stocks.csv`. Rows are validated for type and
/// range but not filtered; see [`super::apply_filters`].
pub fn ingest_csv(
    options_path: impl AsRef<Path>,
    stocks_path: impl AsRef<Path>,
) -> Result<(Vec<OptionQuote>, Vec<StockPrice>)> {
    let quotes = parse_options_csv(File::open(options_path)?)?;
    let stocks = parse_stocks_csv(File::open(stocks_path)?)?;
    Ok((quotes, stocks))
}

struct Row<'a> {
    line: u64,
    record: &'a csv::StringRecord,
    header: &'a [&'a str],
}

impl Row<'_> {
    fn err(&self, col: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            row: self.line,
            column: self.header[col].to_string(),
            message: message.into(),
        }
    }

    fn field(&self, col: usize) -> &str {
        &self.record[col]
    }

    fn text(&self, col: usize) -> Result<String> {
        let s = self.field(col);
        if s.is_empty() {
            return Err(self.err(col, "empty value"));
        }
        Ok(s.to_string())
    }

    fn date(&self, col: usize) -> Result<NaiveDate> {
        let s = self.field(col);
        // chrono accepts some non-canonical widths; insist on YYYY-MM-DD
        let shaped = s.len() == 10
            && s.bytes().enumerate().all(|(i, b)| match i {
                4 | 7 => b == b'-',
                _ => b.is_ascii_digit(),
            });
        if !shaped {
            return Err(self.err(col, format!("expected YYYY-MM-DD, got {s:?}")));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map_err(|e| self.err(col, format!("invalid date {s:?}: {e}")))
    }

    fn number(&self, col: usize) -> Result<f64> {
        let s = self.field(col);
        let plain = !s.is_empty()
            && s.bytes()
                .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'));
        let value = if plain { s.parse::<f64>().ok() } else { None };
        match value {
            Some(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(col, format!("expected a decimal number, got {s:?}"))),
        }
    }

    fn count(&self, col: usize) -> Result<u64> {
        let s = self.field(col);
        s.parse::<u64>()
            .map_err(|_| self.err(col, format!("expected a non-negative integer, got {s:?}")))
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader)
}

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        row,
        column: String::new(),
        message: e.to_string(),
    }
}

/// Walks the records of a headed CSV, checking the header and row widths.
fn for_each_row<R: Read>(
    reader: R,
    header: &[&str],
    mut visit: impl FnMut(&Row<'_>) -> Result<()>,
) -> Result<()> {
    let mut rdr = csv_reader(reader);
    let mut records = rdr.records();
    let first = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => {
            return Err(Error::Parse {
                row: 1,
                column: String::new(),
                message: "missing header".into(),
            })
        }
    };
    if first.iter().ne(header.iter().copied()) {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            message: format!("header must be `{}`", header.join(",")),
        });
    }
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: line,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        visit(&Row {
            line,
            record: &rec,
            header,
        })?;
    }
    Ok(())
}

pub fn parse_options_csv<R: Read>(reader: R) -> Result<Vec<OptionQuote>> {
    let mut quotes = Vec::new();
    let mut keys = HashSet::new();
    for_each_row(reader, &OPTIONS_HEADER, |row| {
        let date = row.date(0)?;
        let underlying = row.text(1)?;
        let option_type = match row.field(2) {
            "C" => OptionType::Call,
            "P" => OptionType::Put,
            other => return Err(row.err(2, format!("expected C or P, got {other:?}"))),
        };
        let strike = row.number(3)?;
        if strike <= 0.0 {
            return Err(row.err(3, "strike must be positive"));
        }
        let expiry = row.date(4)?;
        let bid = row.number(5)?;
        if bid < 0.0 {
            return Err(row.err(5, "bid must be non-negative"));
        }
        let ask = row.number(6)?;
        if ask < 0.0 {
            return Err(row.err(6, "ask must be non-negative"));
        }
        let delta = row.number(7)?;
        let delta_ok = match option_type {
            OptionType::Call => (0.0..=1.0).contains(&delta),
            OptionType::Put => (-1.0..=0.0).contains(&delta),
        };
        if !delta_ok {
            return Err(row.err(7, format!("delta {delta} outside the {option_type:?} range")));
        }
        let open_interest = row.count(8)?;
        let standard_settlement = match row.field(9) {
            "1" => true,
            "0" => false,
            other => return Err(row.err(9, format!("expected 0 or 1, got {other:?}"))),
        };

        let key = (date, underlying.clone(), option_type, strike.to_bits(), expiry);
        if !keys.insert(key) {
            return Err(Error::DuplicateKey {
                row: row.line,
                key: format!("{date},{underlying},{},{strike},{expiry}", option_type.code()),
            });
        }
        quotes.push(OptionQuote {
            date,
            underlying,
            option_type,
            strike,
            expiry,
            bid,
            ask,
            delta,
            open_interest,
            standard_settlement,
        });
        Ok(())
    })?;
    Ok(quotes)
}

pub fn parse_stocks_csv<R: Read>(reader: R) -> Result<Vec<StockPrice>> {
    let mut prices = Vec::new();
    let mut keys = HashSet::new();
    for_each_row(reader, &STOCKS_HEADER, |row| {
        let date = row.date(0)?;
        let underlying = row.text(1)?;
        let close = row.number(2)?;
        if close <= 0.0 {
            return Err(row.err(2, "close must be positive"));
        }
        if !keys.insert((date, underlying.clone())) {
            return Err(Error::DuplicateKey {
                row: row.line,
                key: format!("{date},{underlying}"),
            });
        }
        prices.push(StockPrice {
            date,
            underlying,
            close,
        });
        Ok(())
    })?;
    Ok(prices)
}

pub fn write_options_csv<W: Write>(writer: W, quotes: &[OptionQuote]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(OPTIONS_HEADER).map_err(csv_error)?;
    for q in quotes {
        w.write_record([
            q.date.to_string(),
            q.underlying.clone(),
            q.option_type.code().to_string(),
            q.strike.to_string(),
            q.expiry.to_string(),
            q.bid.to_string(),
            q.ask.to_string(),
            q.delta.to_string(),
            q.open_interest.to_string(),
            if q.standard_settlement { "1" } else { "0" }.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stocks_csv<W: Write>(writer: W, prices: &[StockPrice]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(STOCKS_HEADER).map_err(csv_error)?;
    for p in prices {
        w.write_record([p.date.to_string(), p.underlying.clone(), p.close.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "date,underlying,type,strike,expiry,bid,ask,delta,open_interest,standard_settlement\n";

    fn parse(body: &str) -> Result<Vec<OptionQuote>> {
        parse_options_csv(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn three_rows() {
        let quotes = parse(
            "2010-01-15,AAA,C,100,2010-02-19,1.0,1.2,0.52,10,1\n\
             2010-01-15,AAA,P,100,2010-02-19,1.1,1.3,-0.48,12,1\n\
             2010-01-15,AAA,C,105,2010-02-19,0.4,0.5,0.3,3,0\n",
        )
        .unwrap();
        assert_eq!(quotes.len(), 3);
        assert_eq!(quotes[1].option_type, OptionType::Put);
        assert!(!quotes[2].standard_settlement);
        assert!((quotes[0].mid() - 1.1).abs() < 1e-15);
    }

    #[test]
    fn crossed_market_is_kept_at_ingest() {
        let quotes = parse("2010-01-15,AAA,C,100,2010-02-19,1.2,1.0,0.5,1,1\n").unwrap();
        assert_eq!(quotes.len(), 1);
    }

    #[test]
    fn non_iso_date_reports_row_and_column() {
        let err = parse(
            "2010-01-15,AAA,C,100,2010-02-19,1.0,1.2,0.5,1,1\n\
             15/01/2010,AAA,P,100,2010-02-19,1.0,1.2,-0.5,1,1\n",
        )
        .unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "date");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse(
            "2010-01-15,AAA,C,100,2010-02-19,1.0,1.2,0.5,1,1\n\
             2010-01-15,AAA,C,100,2010-02-19,1.1,1.3,0.5,1,1\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateKey { row: 3, .. }));
    }

    #[test]
    fn rejects_bad_fields() {
        for (row, column) in [
            ("2010-01-15,AAA,X,100,2010-02-19,1.0,1.2,0.5,1,1", "type"),
            ("2010-01-15,AAA,C,1,000,2010-02-19,1.0,1.2,0.5,1,1", ""),
            ("2010-01-15,AAA,C,NaN,2010-02-19,1.0,1.2,0.5,1,1", "strike"),
            ("2010-01-15,AAA,C,100,2010-02-19,-1.0,1.2,0.5,1,1", "bid"),
            ("2010-01-15,AAA,P,100,2010-02-19,1.0,1.2,0.5,1,1", "delta"),
            ("2010-01-15,AAA,C,100,2010-02-19,1.0,1.2,0.5,-3,1", "open_interest"),
            ("2010-01-15,AAA,C,100,2010-02-19,1.0,1.2,0.5,1,2", "standard_settlement"),
            ("2010-01-15,,C,100,2010-02-19,1.0,1.2,0.5,1,1", "underlying"),
            ("2010-1-15,AAA,C,100,2010-02-19,1.0,1.2,0.5,1,1", "date"),
        ] {
            match parse(&format!("{row}\n")) {
                Err(Error::Parse { column: c, row: 2, .. }) => assert_eq!(c, column, "{row}"),
                other => panic!("{row}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn header_must_match() {
        let err = parse_options_csv("date,underlying\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }));
        let err = parse_stocks_csv("".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }));
    }

    #[test]
    fn stocks_round_trip() {
        let rows = vec![
            StockPrice {
                date: NaiveDate::from_ymd_opt(2010, 1, 15).unwrap(),
                underlying: "AAA".into(),
                close: 100.25,
            },
            StockPrice {
                date: NaiveDate::from_ymd_opt(2010, 1, 18).unwrap(),
                underlying: "AAA".into(),
                close: 0.1 + 0.2,
            },
        ];
        let mut buf = Vec::new();
        write_stocks_csv(&mut buf, &rows).unwrap();
        assert_eq!(parse_stocks_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn stocks_reject_duplicates_and_non_positive() {
        let dup = "date,underlying,close\n2010-01-15,AAA,10\n2010-01-15,AAA,11\n";
        assert!(matches!(
            parse_stocks_csv(dup.as_bytes()),
            Err(Error::DuplicateKey { row: 3, .. })
        ));
        let zero = "date,underlying,close\n2010-01-15,AAA,0\n";
        assert!(matches!(parse_stocks_csv(zero.as_bytes()), Err(Error::Parse { .. })));
    }
}
