#![no_main]

use libfuzzer_sys::fuzz_target;
use optbt::market_data::{parse_options_csv, write_options_csv};

fuzz_target!(|data: &[u8]| {
    // accepted rows must survive a write/parse round trip
    if let Ok(quotes) = parse_options_csv(data) {
        let mut buf = Vec::new();
        write_options_csv(&mut buf, &quotes).unwrap();
        assert_eq!(parse_options_csv(buf.as_slice()).unwrap(), quotes);
    }
});
