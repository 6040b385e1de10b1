//! Meter telemetry wire format and transport.
//!
//! A telemetry frame is exactly 44 bytes: a 2-byte magic, a version byte,
//! the meter identity header, the reading fields in fixed-width big-endian
//! milli-units, a demand-response flag, and a trailing CRC-16 over everything
//! before it. On byte streams frames travel behind a 2-byte big-endian
//! length prefix so they survive segmentation.

mod collector;

pub use collector::{Collector, CollectorError, CollectorRecord, IngestStats};

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metering::Measurements;
use crate::tariff::DrStatus;

/// Leading frame bytes: `SM`.
pub const FRAME_MAGIC: [u8; 2] = [0x53, 0x4D];
/// Current wire format version.
pub const FRAME_VERSION: u8 = 0x01;
/// Total encoded frame length in bytes.
pub const FRAME_LEN: usize = 44;
/// Bytes covered by the trailing CRC: everything before it.
pub const CRC_COVERED_LEN: usize = FRAME_LEN - 2;
/// Largest legal scaled power factor (1.0000).
pub const MAX_PF_SCALED: u16 = 10_000;
/// Largest legal demand-response flag.
pub const MAX_DR_FLAG: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("short-frame: got {got} bytes, need {FRAME_LEN}")]
    ShortFrame { got: usize },
    #[error("oversized-frame: got {got} bytes, expected {FRAME_LEN}")]
    OversizedFrame { got: usize },
    #[error("bad-magic: got {got:02X?}")]
    BadMagic { got: [u8; 2] },
    #[error("unsupported-version: {got}")]
    UnsupportedVersion { got: u8 },
    #[error("crc-mismatch: stored {stored:#06X}, computed {computed:#06X}")]
    CrcMismatch { stored: u16, computed: u16 },
    #[error("field-out-of-range: {field} = {value}")]
    FieldOutOfRange { field: &'static str, value: u64 },
}

/// Error from the length-prefixed stream reader: either a malformed frame
/// (recoverable, the stream stays framed) or a transport failure.
#[derive(Debug, Error)]
pub enum StreamError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One meter reading on the wire. Electrical quantities are integer
/// milli-units; the power factor is scaled by 10^4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterFrame {
    pub meter_id: u32,
    /// Seconds since the epoch of the sending meter's clock.
    pub timestamp: u64,
    pub v_rms_mv: u32,
    pub i_rms_ma: u32,
    pub p_mw: u32,
    pub s_mva: u32,
    /// Power factor scaled by 10^4, at most 10000.
    pub pf_scaled: u16,
    pub energy_mwh: u64,
    /// 0 normal, 1 warning, 2 crossed.
    pub dr_flag: u8,
}

/// CRC-16/CCITT-FALSE: polynomial 0x1021, initial value 0xFFFF, no
/// reflection, no final xor. Check value: `crc16(b"123456789") == 0x29B1`.
pub fn crc16(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in bytes {
        crc ^= u16::from(byte) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
        }
    }
    crc
}

impl MeterFrame {
    pub fn validate(&self) -> Result<(), FrameError> {
        if self.pf_scaled > MAX_PF_SCALED {
            return Err(FrameError::FieldOutOfRange {
                field: "pf_scaled",
                value: u64::from(self.pf_scaled),
            });
        }
        if self.dr_flag > MAX_DR_FLAG {
            return Err(FrameError::FieldOutOfRange {
                field: "dr_flag",
                value: u64::from(self.dr_flag),
            });
        }
        Ok(())
    }

    /// Encodes the frame to its fixed 44-byte wire form.
    pub fn encode(&self) -> Result<[u8; FRAME_LEN], FrameError> {
        self.validate()?;
        let mut buf = [0u8; FRAME_LEN];
        buf[0..2].copy_from_slice(&FRAME_MAGIC);
        buf[2] = FRAME_VERSION;
        buf[3..7].copy_from_slice(&self.meter_id.to_be_bytes());
        buf[7..15].copy_from_slice(&self.timestamp.to_be_bytes());
        buf[15..19].copy_from_slice(&self.v_rms_mv.to_be_bytes());
        buf[19..23].copy_from_slice(&self.i_rms_ma.to_be_bytes());
        buf[23..27].copy_from_slice(&self.p_mw.to_be_bytes());
        buf[27..31].copy_from_slice(&self.s_mva.to_be_bytes());
        buf[31..33].copy_from_slice(&self.pf_scaled.to_be_bytes());
        buf[33..41].copy_from_slice(&self.energy_mwh.to_be_bytes());
        buf[41] = self.dr_flag;
        let crc = crc16(&buf[..CRC_COVERED_LEN]);
        buf[42..44].copy_from_slice(&crc.to_be_bytes());
        Ok(buf)
    }

    /// Decodes and validates a 44-byte frame. The CRC is checked before the
    /// version and field ranges, so any corruption of a CRC-covered byte
    /// surfaces as `crc-mismatch` rather than a misleading field error.
    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < FRAME_LEN {
            return Err(FrameError::ShortFrame { got: bytes.len() });
        }
        if bytes.len() > FRAME_LEN {
            return Err(FrameError::OversizedFrame { got: bytes.len() });
        }
        if bytes[0..2] != FRAME_MAGIC {
            return Err(FrameError::BadMagic {
                got: [bytes[0], bytes[1]],
            });
        }
        let stored = u16::from_be_bytes([bytes[42], bytes[43]]);
        let computed = crc16(&bytes[..CRC_COVERED_LEN]);
        if stored != computed {
            return Err(FrameError::CrcMismatch { stored, computed });
        }
        if bytes[2] != FRAME_VERSION {
            return Err(FrameError::UnsupportedVersion { got: bytes[2] });
        }
        let be32 = |range: std::ops::Range<usize>| {
            u32::from_be_bytes(bytes[range].try_into().expect("fixed width"))
        };
        let be64 = |range: std::ops::Range<usize>| {
            u64::from_be_bytes(bytes[range].try_into().expect("fixed width"))
        };
        let frame = Self {
            meter_id: be32(3..7),
            timestamp: be64(7..15),
            v_rms_mv: be32(15..19),
            i_rms_ma: be32(19..23),
            p_mw: be32(23..27),
            s_mva: be32(27..31),
            pf_scaled: u16::from_be_bytes([bytes[31], bytes[32]]),
            energy_mwh: be64(33..41),
            dr_flag: bytes[41],
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Builds a frame from a window's measurements, rounding to milli-units
    /// and saturating at the field widths. An undefined power factor encodes
    /// as zero.
    pub fn from_measurements(
        meter_id: u32,
        timestamp: u64,
        m: &Measurements,
        energy_wh: f64,
        dr: &DrStatus,
    ) -> Self {
        fn milli32(value: f64) -> u32 {
            (value * 1000.0).round().clamp(0.0, u32::MAX as f64) as u32
        }
        fn milli64(value: f64) -> u64 {
            (value * 1000.0).round().clamp(0.0, u64::MAX as f64) as u64
        }
        Self {
            meter_id,
            timestamp,
            v_rms_mv: milli32(m.v_rms),
            i_rms_ma: milli32(m.i_rms),
            p_mw: milli32(m.active_power.max(0.0)),
            s_mva: milli32(m.apparent_power),
            pf_scaled: m
                .power_factor
                .map_or(0, |pf| ((pf * 1e4).round() as u16).min(MAX_PF_SCALED)),
            energy_mwh: milli64(energy_wh),
            dr_flag: dr.flag(),
        }
    }
}

/// Writes one frame behind its 2-byte big-endian length prefix.
pub fn write_frame<W: Write>(writer: &mut W, frame: &MeterFrame) -> Result<(), StreamError> {
    let encoded = frame.encode()?;
    writer.write_all(&(FRAME_LEN as u16).to_be_bytes())?;
    writer.write_all(&encoded)?;
    Ok(())
}

/// Iterates length-prefixed frames off a byte stream.
///
/// Malformed frames come back as `Err(StreamError::Frame)` and iteration
/// continues at the next length prefix; transport errors and truncated
/// trailing frames end the stream after being reported once.
pub struct FrameReader<R: Read> {
    inner: R,
    done: bool,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, done: false }
    }

    fn read_exact_or_eof(&mut self, buf: &mut [u8]) -> Result<usize, io::Error> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(filled)
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<MeterFrame, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut len_buf = [0u8; 2];
        let got = match self.read_exact_or_eof(&mut len_buf) {
            Ok(got) => got,
            Err(e) => {
                self.done = true;
                return Some(Err(e.into()));
            }
        };
        if got == 0 {
            self.done = true;
            return None;
        }
        if got < 2 {
            self.done = true;
            return Some(Err(FrameError::ShortFrame { got }.into()));
        }
        let len = usize::from(u16::from_be_bytes(len_buf));
        let mut payload = vec![0u8; len];
        match self.read_exact_or_eof(&mut payload) {
            Ok(n) if n == len => Some(MeterFrame::decode(&payload).map_err(StreamError::from)),
            Ok(n) => {
                self.done = true;
                Some(Err(FrameError::ShortFrame { got: n }.into()))
            }
            Err(e) => {
                self.done = true;
                Some(Err(e.into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bit-serial long-division CRC used as an independent reference.
    fn crc16_bitwise(data: &[u8]) -> u16 {
        let mut reg: u16 = 0xFFFF;
        for &byte in data {
            for k in 0..8 {
                let bit = (byte >> (7 - k)) & 1;
                let msb = (reg >> 15) & 1;
                reg <<= 1;
                if msb ^ u16::from(bit) == 1 {
                    reg ^= 0x1021;
                }
            }
        }
        reg
    }

    fn sample_frame() -> MeterFrame {
        MeterFrame {
            meter_id: 7,
            timestamp: 1_700_000_000,
            v_rms_mv: 230_123,
            i_rms_ma: 5_042,
            p_mw: 1_150_000,
            s_mva: 1_160_000,
            pf_scaled: 9_914,
            energy_mwh: 31_610,
            dr_flag: 1,
        }
    }

    #[test]
    fn crc16_published_check_value() {
        assert_eq!(crc16(b"123456789"), 0x29B1);
        assert_eq!(crc16_bitwise(b"123456789"), 0x29B1);
    }

    #[test]
    fn crc16_empty_is_initial_value() {
        assert_eq!(crc16(b""), 0xFFFF);
    }

    #[test]
    fn crc16_matches_bitwise_reference() {
        assert_eq!(crc16(&[0x00]), crc16_bitwise(&[0x00]));
        let mut state: u64 = 0xDEADBEEF;
        for len in 0..48 {
            let data: Vec<u8> = (0..len)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    (state >> 32) as u8
                })
                .collect();
            assert_eq!(crc16(&data), crc16_bitwise(&data));
        }
    }

    #[test]
    fn encode_layout() {
        let frame = MeterFrame {
            pf_scaled: 10_000,
            ..sample_frame()
        };
        let bytes = frame.encode().unwrap();
        assert_eq!(bytes.len(), FRAME_LEN);
        assert_eq!(&bytes[0..2], &FRAME_MAGIC);
        assert_eq!(bytes[2], FRAME_VERSION);
        // Power factor field sits after magic, version, id, timestamp and
        // the four 32-bit quantities.
        assert_eq!(&bytes[31..33], &[0x27, 0x10]);
        let crc = u16::from_be_bytes([bytes[42], bytes[43]]);
        assert_eq!(crc, crc16_bitwise(&bytes[..42]));
    }

    #[test]
    fn encode_zeroed_frame_crc_matches_reference() {
        let frame = MeterFrame {
            meter_id: 1,
            timestamp: 0,
            v_rms_mv: 0,
            i_rms_ma: 0,
            p_mw: 0,
            s_mva: 0,
            pf_scaled: 0,
            energy_mwh: 0,
            dr_flag: 0,
        };
        let bytes = frame.encode().unwrap();
        let crc = u16::from_be_bytes([bytes[42], bytes[43]]);
        assert_eq!(crc, crc16_bitwise(&bytes[..42]));
    }

    #[test]
    fn decode_round_trips() {
        let frame = sample_frame();
        let decoded = MeterFrame::decode(&frame.encode().unwrap()).unwrap();
        assert_eq!(frame, decoded);
    }

    #[test]
    fn decode_rejects_wrong_lengths() {
        let bytes = sample_frame().encode().unwrap();
        assert_eq!(
            MeterFrame::decode(&bytes[..43]),
            Err(FrameError::ShortFrame { got: 43 })
        );
        let mut long = bytes.to_vec();
        long.push(0);
        assert_eq!(
            MeterFrame::decode(&long),
            Err(FrameError::OversizedFrame { got: 45 })
        );
        assert_eq!(MeterFrame::decode(&[]), Err(FrameError::ShortFrame { got: 0 }));
    }

    #[test]
    fn decode_rejects_bad_magic_and_version() {
        let mut bytes = sample_frame().encode().unwrap();
        bytes[0] = 0x00;
        assert!(matches!(
            MeterFrame::decode(&bytes),
            Err(FrameError::BadMagic { .. })
        ));

        // A well-formed frame of a future version: valid CRC, version 2.
        let mut v2 = sample_frame().encode().unwrap();
        v2[2] = 0x02;
        let crc = crc16(&v2[..CRC_COVERED_LEN]);
        v2[42..44].copy_from_slice(&crc.to_be_bytes());
        assert_eq!(
            MeterFrame::decode(&v2),
            Err(FrameError::UnsupportedVersion { got: 2 })
        );
    }

    #[test]
    fn decode_rejects_out_of_range_fields_behind_valid_crc() {
        let mut bytes = sample_frame().encode().unwrap();
        bytes[31..33].copy_from_slice(&10_001u16.to_be_bytes());
        let crc = crc16(&bytes[..CRC_COVERED_LEN]);
        bytes[42..44].copy_from_slice(&crc.to_be_bytes());
        assert_eq!(
            MeterFrame::decode(&bytes),
            Err(FrameError::FieldOutOfRange {
                field: "pf_scaled",
                value: 10_001
            })
        );

        let mut bytes = sample_frame().encode().unwrap();
        bytes[41] = 3;
        let crc = crc16(&bytes[..CRC_COVERED_LEN]);
        bytes[42..44].copy_from_slice(&crc.to_be_bytes());
        assert_eq!(
            MeterFrame::decode(&bytes),
            Err(FrameError::FieldOutOfRange {
                field: "dr_flag",
                value: 3
            })
        );
    }

    #[test]
    fn every_single_byte_corruption_is_caught() {
        let bytes = sample_frame().encode().unwrap();
        for pos in 0..FRAME_LEN {
            for delta in 1..=255u8 {
                let mut corrupted = bytes;
                corrupted[pos] ^= delta;
                match MeterFrame::decode(&corrupted) {
                    Ok(frame) => panic!("byte {pos} xor {delta:#04X} decoded as {frame:?}"),
                    Err(FrameError::BadMagic { .. }) if pos < 2 => {}
                    Err(FrameError::CrcMismatch { .. } | FrameError::FieldOutOfRange { .. })
                        if pos >= 2 => {}
                    Err(other) => panic!("byte {pos} xor {delta:#04X}: unexpected {other}"),
                }
            }
        }
    }

    #[test]
    fn encode_rejects_invalid_fields() {
        let mut frame = sample_frame();
        frame.pf_scaled = 10_001;
        assert!(matches!(
            frame.encode(),
            Err(FrameError::FieldOutOfRange {
                field: "pf_scaled",
                ..
            })
        ));
        let mut frame = sample_frame();
        frame.dr_flag = 9;
        assert!(matches!(
            frame.encode(),
            Err(FrameError::FieldOutOfRange { field: "dr_flag", .. })
        ));
    }

    #[test]
    fn frame_reader_walks_a_stream_and_survives_bad_frames() {
        let good = sample_frame();
        let mut wire = Vec::new();
        write_frame(&mut wire, &good).unwrap();

        // A corrupted frame in the middle, still length-prefixed.
        let mut corrupt = good.encode().unwrap().to_vec();
        corrupt[20] ^= 0xFF;
        wire.extend_from_slice(&(FRAME_LEN as u16).to_be_bytes());
        wire.extend_from_slice(&corrupt);

        write_frame(&mut wire, &good).unwrap();

        let outcomes: Vec<_> = FrameReader::new(&wire[..]).collect();
        assert_eq!(outcomes.len(), 3);
        assert!(outcomes[0].is_ok());
        assert!(matches!(
            outcomes[1],
            Err(StreamError::Frame(FrameError::CrcMismatch { .. }))
        ));
        assert!(outcomes[2].is_ok());
    }

    #[test]
    fn frame_reader_reports_truncated_tail_once() {
        let mut wire = Vec::new();
        write_frame(&mut wire, &sample_frame()).unwrap();
        wire.truncate(wire.len() - 5);
        let outcomes: Vec<_> = FrameReader::new(&wire[..]).collect();
        assert_eq!(outcomes.len(), 1);
        assert!(matches!(
            outcomes[0],
            Err(StreamError::Frame(FrameError::ShortFrame { .. }))
        ));
    }

    #[test]
    fn frame_reader_empty_stream_yields_nothing() {
        assert_eq!(FrameReader::new(&b""[..]).count(), 0);
    }

    #[test]
    fn from_measurements_scales_and_saturates() {
        let m = Measurements {
            v_rms: 230.1234,
            i_rms: 5.0424,
            active_power: 1150.0,
            apparent_power: 1160.0,
            power_factor: Some(0.99138),
            dt_hours: 0.02,
        };
        let frame =
            MeterFrame::from_measurements(3, 100, &m, 31.61, &DrStatus::Warning { boundary: 100.0 });
        assert_eq!(frame.v_rms_mv, 230_123);
        assert_eq!(frame.i_rms_ma, 5_042);
        assert_eq!(frame.p_mw, 1_150_000);
        assert_eq!(frame.pf_scaled, 9_914);
        assert_eq!(frame.energy_mwh, 31_610);
        assert_eq!(frame.dr_flag, 1);

        let huge = Measurements {
            v_rms: 1e12,
            i_rms: 5.0,
            active_power: -3.0,
            apparent_power: 0.0,
            power_factor: None,
            dt_hours: 0.02,
        };
        let frame = MeterFrame::from_measurements(3, 100, &huge, 0.0, &DrStatus::Normal);
        assert_eq!(frame.v_rms_mv, u32::MAX);
        assert_eq!(frame.p_mw, 0);
        assert_eq!(frame.pf_scaled, 0);
    }
}
