#![no_main]

use libfuzzer_sys::fuzz_target;
use lts_core::io::{parse_csv, write_csv};

fuzz_target!(|data: &str| {
    // Anything that parses must survive a write/parse round trip unchanged.
    if let Ok(ds) = parse_csv(data) {
        assert_eq!(parse_csv(&write_csv(&ds)).unwrap(), ds);
    }
});
