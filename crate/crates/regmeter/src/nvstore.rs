//! Nonvolatile energy register.
//!
//! The meter's cumulative watt-hours live in a small text file: the decimal
//! value on the first line and its CRC-16 in hex on the second, so torn or
//! tampered files are detectable. Writes go through a temp file and rename,
//! which keeps some complete previous value readable no matter where a crash
//! lands. Real nonvolatile parts wear out under per-window writes, so a
//! min-delta policy can batch them; the default writes every window.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::amr::crc16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("corrupt register: {reason}")]
    Corrupt { reason: String },
    #[error("energy must be a finite nonnegative value, got {0}")]
    InvalidValue(f64),
    #[error("monotonicity violation: {requested} Wh is below the cached {cached} Wh")]
    Monotonicity { requested: f64, cached: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// When a `store` physically touches the file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WritePolicy {
    /// Every store is written through.
    EveryWindow,
    /// Physical writes are skipped until the value has grown by at least
    /// this many watt-hours since the last durable write.
    MinDelta { watt_hours: f64 },
}

/// What a store call did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOutcome {
    /// Durable on disk.
    Committed,
    /// Cache updated, physical write deferred by the min-delta policy.
    Skipped,
    /// Simulated crash: the process is assumed dead at the injection point.
    Interrupted,
}

/// Injection points for the crash-safety harness. `None` is a normal store.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    None,
    BeforeTempWrite,
    MidTempWrite { keep_bytes: usize },
    BeforeRename,
    AfterRename,
}

#[derive(Debug)]
pub struct EnergyRegister {
    path: PathBuf,
    policy: WritePolicy,
    cached: f64,
    last_written: Option<f64>,
}

impl EnergyRegister {
    /// Opens a register, reading any existing value. A missing file is an
    /// empty register at zero; an unreadable one is a corruption error, not
    /// a silent reset.
    pub fn open(path: impl Into<PathBuf>, policy: WritePolicy) -> Result<Self, StoreError> {
        let path = path.into();
        let (cached, last_written) = match fs::read(&path) {
            Ok(bytes) => {
                let value = parse_register_contents(&bytes)?;
                (value, Some(value))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => (0.0, None),
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            path,
            policy,
            cached,
            last_written,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn policy(&self) -> WritePolicy {
        self.policy
    }

    /// Last stored value, including stores the policy has not yet flushed.
    pub fn cached(&self) -> f64 {
        self.cached
    }

    /// Reads the register from disk. Absent means zero; unparseable content
    /// is reported as corruption.
    pub fn load(&self) -> Result<f64, StoreError> {
        match fs::read(&self.path) {
            Ok(bytes) => parse_register_contents(&bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(0.0),
            Err(e) => Err(e.into()),
        }
    }

    /// Stores a new cumulative value. The value must not regress; the write
    /// is atomic (temp file, then rename) and durable on return unless the
    /// min-delta policy skipped it.
    pub fn store(&mut self, energy_wh: f64) -> Result<StoreOutcome, StoreError> {
        self.store_at(energy_wh, CrashPoint::None)
    }

    /// Store with a crash injected at `crash`. Test harness entry point; a
    /// register that "crashed" must be discarded like the process it models.
    #[doc(hidden)]
    pub fn store_at(
        &mut self,
        energy_wh: f64,
        crash: CrashPoint,
    ) -> Result<StoreOutcome, StoreError> {
        if !energy_wh.is_finite() || energy_wh < 0.0 {
            return Err(StoreError::InvalidValue(energy_wh));
        }
        if energy_wh < self.cached {
            return Err(StoreError::Monotonicity {
                requested: energy_wh,
                cached: self.cached,
            });
        }
        self.cached = energy_wh;
        if let WritePolicy::MinDelta { watt_hours } = self.policy {
            if let Some(last) = self.last_written {
                if energy_wh - last < watt_hours {
                    return Ok(StoreOutcome::Skipped);
                }
            }
        }

        if crash == CrashPoint::BeforeTempWrite {
            return Ok(StoreOutcome::Interrupted);
        }
        let payload = format_register_contents(energy_wh);
        let tmp_path = temp_path(&self.path);
        let mut tmp = File::create(&tmp_path)?;
        if let CrashPoint::MidTempWrite { keep_bytes } = crash {
            let keep = keep_bytes.min(payload.len());
            tmp.write_all(&payload.as_bytes()[..keep])?;
            return Ok(StoreOutcome::Interrupted);
        }
        tmp.write_all(payload.as_bytes())?;
        tmp.sync_all()?;
        drop(tmp);
        if crash == CrashPoint::BeforeRename {
            return Ok(StoreOutcome::Interrupted);
        }
        fs::rename(&tmp_path, &self.path)?;
        // Directory sync so the rename itself survives power loss.
        if let Some(parent) = self.path.parent() {
            if let Ok(dir) = File::open(parent) {
                let _ = dir.sync_all();
            }
        }
        if crash == CrashPoint::AfterRename {
            return Ok(StoreOutcome::Interrupted);
        }
        self.last_written = Some(energy_wh);
        Ok(StoreOutcome::Committed)
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Serializes a register file: the decimal value, then the CRC-16 of the
/// value line's bytes in hex.
pub fn format_register_contents(energy_wh: f64) -> String {
    let value = energy_wh.to_string();
    let crc = crc16(value.as_bytes());
    format!("{value}\n{crc:04X}\n")
}

/// Parses and verifies register file contents.
pub fn parse_register_contents(bytes: &[u8]) -> Result<f64, StoreError> {
    let corrupt = |reason: &str| StoreError::Corrupt {
        reason: reason.to_string(),
    };
    let text = std::str::from_utf8(bytes).map_err(|_| corrupt("not utf-8"))?;
    let mut lines = text.split('\n');
    let value_line = lines.next().ok_or_else(|| corrupt("empty file"))?;
    let crc_line = lines
        .next()
        .ok_or_else(|| corrupt("missing checksum line"))?
        .trim_end_matches('\r');
    if lines.any(|rest| !rest.is_empty()) {
        return Err(corrupt("trailing content after checksum"));
    }
    let value: f64 = value_line
        .parse()
        .map_err(|_| corrupt("value line is not a number"))?;
    if !value.is_finite() || value < 0.0 {
        return Err(corrupt("value must be finite and nonnegative"));
    }
    if crc_line.is_empty() || crc_line.len() > 4 {
        return Err(corrupt("checksum line is not 1-4 hex digits"));
    }
    let stored =
        u16::from_str_radix(crc_line, 16).map_err(|_| corrupt("checksum line is not hex"))?;
    let computed = crc16(value_line.as_bytes());
    if stored != computed {
        return Err(corrupt("checksum mismatch"));
    }
    Ok(value)
}
