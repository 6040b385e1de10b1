//! Telemetry frame decoder against arbitrary bytes: must never panic, and
//! anything it accepts must re-encode to exactly the input bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;
use regmeter::amr::MeterFrame;

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = MeterFrame::decode(data) {
        let encoded = frame.encode().expect("decoded frames are valid");
        assert_eq!(&encoded[..], data, "decode/encode disagree on accepted input");
    }
});
