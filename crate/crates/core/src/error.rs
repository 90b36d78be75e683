use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no stock close for {underlying} on {date}")]
    MissingStockPrice { underlying: String, date: NaiveDate },

    #[error("no shared strike within the moneyness window with open interest on both legs")]
    NoEligibleStrike,

    #[error("best strike {strike} has only the {present} leg")]
    MissingLeg { strike: f64, present: &'static str },

    #[error("degenerate formation deltas (call {call}, put {put})")]
    DegenerateDeltas { call: f64, put: f64 },

    #[error("{underlying} straddle formed {formation}: missing {leg} quote on {date}")]
    GapInSeries {
        underlying: String,
        formation: NaiveDate,
        date: NaiveDate,
        leg: &'static str,
    },

    #[error("{underlying} straddle formed {formation}: non-positive price on {date}")]
    NonPositivePrice {
        underlying: String,
        formation: NaiveDate,
        date: NaiveDate,
    },

    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: u64,
        column: String,
        message: String,
    },

    #[error("row {row}: duplicate key {key}")]
    DuplicateKey { row: u64, key: String },

    #[error("need {needed} observations, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("need at least 2 stocks with valid scores, have {0}")]
    TooFewStocks(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch needs at least 2 elements, has {0}")]
    BatchTooSmall(usize),

    #[error("missing position linkage: {0}")]
    MissingLinkage(String),

    #[error("backward pass requested on a graph built without recording")]
    GraphNotRecorded,

    #[error("{split} split has {len} observations, need at least 2")]
    EmptySplit { split: &'static str, len: usize },

    #[error("panel spans {years} calendar years, need at least {needed}")]
    SpanTooShort { years: i32, needed: i32 },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("return series has zero variance")]
    ZeroVariance,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
