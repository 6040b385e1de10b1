//! Sample CSV reader against arbitrary bytes; accepted rows must respect the
//! ADC range invariants.

#![no_main]

use libfuzzer_sys::fuzz_target;
use regmeter::adc::{read_samples_csv, ADC_MAX_COUNT};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_samples_csv(data) {
        for row in rows {
            assert!(row.v_counts <= ADC_MAX_COUNT && row.i_counts <= ADC_MAX_COUNT);
            assert!(row.sample_period_us > 0.0);
        }
    }
});
