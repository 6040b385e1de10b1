//! Energy register file parser: arbitrary contents must parse cleanly or
//! error, and accepted values must survive a format/parse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use regmeter::nvstore::{format_register_contents, parse_register_contents};

fuzz_target!(|data: &[u8]| {
    if let Ok(value) = parse_register_contents(data) {
        let reformatted = format_register_contents(value);
        assert_eq!(
            parse_register_contents(reformatted.as_bytes()).expect("own format parses"),
            value
        );
    }
});
