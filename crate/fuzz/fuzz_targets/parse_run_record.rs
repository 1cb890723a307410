#![no_main]

use libfuzzer_sys::fuzz_target;
use lts_core::io::parse_run_record;

fuzz_target!(|data: &str| {
    let _ = parse_run_record(data);
});
