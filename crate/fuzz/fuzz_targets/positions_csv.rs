#![no_main]

use libfuzzer_sys::fuzz_target;
use optbt::backtest::{exposure_calendar, parse_positions_csv, portfolio_returns};

fuzz_target!(|data: &[u8]| {
    // whatever parses must aggregate or fail cleanly, never panic
    if let Ok(exposures) = parse_positions_csv(data) {
        let calendar = exposure_calendar(&exposures);
        let _ = portfolio_returns(&calendar, exposures);
    }
});
