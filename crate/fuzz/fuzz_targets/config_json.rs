#![no_main]

use libfuzzer_sys::fuzz_target;
use qmeter::config::ExperimentConfig;

// parse-and-validate must never panic, whatever the bytes
fuzz_target!(|data: &[u8]| {
    let _ = ExperimentConfig::from_json_bytes(data);
});
