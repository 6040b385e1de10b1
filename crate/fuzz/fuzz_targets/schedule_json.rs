//! Tariff schedule JSON loader: accepted schedules must bill and classify
//! without panicking across their whole range.

#![no_main]

use libfuzzer_sys::fuzz_target;
use regmeter::tariff::{bill, dr_status, TariffSchedule};

fuzz_target!(|data: &[u8]| {
    if let Ok(schedule) = TariffSchedule::from_json(data) {
        let last = schedule.boundaries.last().copied().unwrap_or(1.0);
        for units in [0.0, last * 0.5, last, last * 2.0] {
            let _ = bill(units, &schedule);
            let _ = dr_status(units, &schedule);
        }
    }
});
