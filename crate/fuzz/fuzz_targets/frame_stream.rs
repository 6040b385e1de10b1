//! Length-prefixed stream reader over arbitrary bytes: framing errors must
//! come back as values, never panics, and the reader must terminate.

#![no_main]

use libfuzzer_sys::fuzz_target;
use regmeter::amr::FrameReader;

fuzz_target!(|data: &[u8]| {
    for outcome in FrameReader::new(data) {
        let _ = outcome;
    }
});
