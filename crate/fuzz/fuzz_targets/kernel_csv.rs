#![no_main]

use libfuzzer_sys::fuzz_target;
use qmeter::kernels::ReductionKernel;

/// Splits the input at a marker line so one byte stream drives both the
/// CSV table and its JSON sidecar; without the marker the whole input is
/// the CSV and the sidecar is a fixed valid one.
const SEP: &[u8] = b"\n#sidecar\n";

fuzz_target!(|data: &[u8]| {
    match data.windows(SEP.len()).position(|w| w == SEP) {
        Some(pos) => {
            let _ = ReductionKernel::from_csv_bytes(&data[..pos], &data[pos + SEP.len()..]);
        }
        None => {
            let _ = ReductionKernel::from_csv_bytes(data, br#"{"dt": 0.01, "hbar": 1.0}"#);
        }
    }
});
