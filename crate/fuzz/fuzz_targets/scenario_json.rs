//! Scenario JSON loader: arbitrary documents must validate or error, and an
//! accepted scenario must be synthesizable for a short window.

#![no_main]

use libfuzzer_sys::fuzz_target;
use regmeter::adc::{simulate_analog, Scenario};

fuzz_target!(|data: &[u8]| {
    if let Ok(scenario) = Scenario::from_json(data) {
        let _ = simulate_analog(&scenario, 8, 100.0);
    }
});
