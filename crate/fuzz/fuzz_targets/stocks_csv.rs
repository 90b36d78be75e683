#![no_main]

use libfuzzer_sys::fuzz_target;
use optbt::market_data::{parse_stocks_csv, write_stocks_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(prices) = parse_stocks_csv(data) {
        let mut buf = Vec::new();
        write_stocks_csv(&mut buf, &prices).unwrap();
        assert_eq!(parse_stocks_csv(buf.as_slice()).unwrap(), prices);
    }
});
