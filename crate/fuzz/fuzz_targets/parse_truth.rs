#![no_main]

use libfuzzer_sys::fuzz_target;
use lts_core::io::{parse_truth, write_truth};

fuzz_target!(|data: &str| {
    if let Ok(truth) = parse_truth(data) {
        assert_eq!(parse_truth(&write_truth(&truth)).unwrap(), truth);
    }
});
