//! Training CSV reader against arbitrary bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;
use regmeter::calibration::read_training_csv;

fuzz_target!(|data: &[u8]| {
    let _ = read_training_csv(data);
});
