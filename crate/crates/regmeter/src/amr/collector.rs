//! Head-end collector: ingests framed telemetry from many meters, keeps one
//! newline-delimited record log per meter id plus an in-memory latest-reading
//! snapshot, and counts malformed frames without dropping the stream.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FrameReader, MeterFrame, StreamError};

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("log directory {}: {source}", path.display())]
    LogDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("meter {meter_id} log: {source}")]
    LogWrite {
        meter_id: u32,
        source: std::io::Error,
    },
    #[error("record serialization: {0}")]
    Record(#[from] serde_json::Error),
}

/// One stored reading: the frame, when the collector took it in, and whether
/// it kept the meter's energy register monotone. Non-monotone readings are
/// logged for the record but flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectorRecord {
    #[serde(flatten)]
    pub frame: MeterFrame,
    pub received_at: u64,
    pub valid: bool,
}

/// Counters across everything a collector has ingested.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    /// Frames decoded, validated, and logged.
    pub accepted: u64,
    /// Frames rejected before logging (framing, CRC, or range errors).
    pub rejected: u64,
    /// Accepted frames whose energy regressed against the meter's history.
    pub flagged: u64,
}

struct MeterLog {
    file: File,
    high_water_energy_mwh: Option<u64>,
}

pub struct Collector {
    log_dir: PathBuf,
    logs: Mutex<HashMap<u32, Arc<Mutex<MeterLog>>>>,
    snapshots: RwLock<HashMap<u32, CollectorRecord>>,
    accepted: AtomicU64,
    rejected: AtomicU64,
    flagged: AtomicU64,
}

impl Collector {
    /// Opens a collector over a log directory, creating it if needed and
    /// verifying it is writable up front.
    pub fn new(log_dir: impl Into<PathBuf>) -> Result<Self, CollectorError> {
        let log_dir = log_dir.into();
        let fail = |source| CollectorError::LogDir {
            path: log_dir.clone(),
            source,
        };
        std::fs::create_dir_all(&log_dir).map_err(fail)?;
        let probe = log_dir.join(".write-probe");
        File::create(&probe).map_err(fail)?;
        std::fs::remove_file(&probe).map_err(fail)?;
        Ok(Self {
            log_dir,
            logs: Mutex::new(HashMap::new()),
            snapshots: RwLock::new(HashMap::new()),
            accepted: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
            flagged: AtomicU64::new(0),
        })
    }

    /// Path of a meter's record log.
    pub fn log_path(&self, meter_id: u32) -> PathBuf {
        self.log_dir.join(format!("meter-{meter_id}.jsonl"))
    }

    /// Reads length-prefixed frames off `reader` until it ends. Malformed
    /// frames are counted and skipped; a transport error ends the stream
    /// after logging. Only unwritable logs are fatal.
    pub fn ingest<R: Read>(&self, reader: R) -> Result<IngestStats, CollectorError> {
        let mut stats = IngestStats::default();
        for outcome in FrameReader::new(reader) {
            match outcome {
                Ok(frame) => {
                    let record = self.submit(frame, unix_now())?;
                    stats.accepted += 1;
                    if !record.valid {
                        stats.flagged += 1;
                    }
                }
                Err(StreamError::Frame(e)) => {
                    log::debug!("rejected frame: {e}");
                    stats.rejected += 1;
                    self.rejected.fetch_add(1, Ordering::Relaxed);
                }
                Err(StreamError::Io(e)) => {
                    log::warn!("stream ended with transport error: {e}");
                    break;
                }
            }
        }
        Ok(stats)
    }

    /// Stores one already-decoded frame: appends it to the meter's log and
    /// refreshes the snapshot table. Writes for one meter are serialized;
    /// distinct meters proceed in parallel.
    pub fn submit(
        &self,
        frame: MeterFrame,
        received_at: u64,
    ) -> Result<CollectorRecord, CollectorError> {
        let log = self.meter_log(frame.meter_id)?;
        let mut log = log.lock().expect("meter log lock");

        let valid = log
            .high_water_energy_mwh
            .is_none_or(|high| frame.energy_mwh >= high);
        let record = CollectorRecord {
            frame,
            received_at,
            valid,
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let write_err = |source| CollectorError::LogWrite {
            meter_id: frame.meter_id,
            source,
        };
        log.file.write_all(line.as_bytes()).map_err(write_err)?;
        log.file.flush().map_err(write_err)?;
        log.high_water_energy_mwh = Some(
            log.high_water_energy_mwh
                .map_or(frame.energy_mwh, |high| high.max(frame.energy_mwh)),
        );

        self.snapshots
            .write()
            .expect("snapshot lock")
            .insert(frame.meter_id, record);
        self.accepted.fetch_add(1, Ordering::Relaxed);
        if !valid {
            self.flagged.fetch_add(1, Ordering::Relaxed);
            log::warn!(
                "meter {} energy regressed to {} mWh",
                frame.meter_id,
                frame.energy_mwh
            );
        }
        Ok(record)
    }

    fn meter_log(&self, meter_id: u32) -> Result<Arc<Mutex<MeterLog>>, CollectorError> {
        let mut logs = self.logs.lock().expect("log table lock");
        if let Some(existing) = logs.get(&meter_id) {
            return Ok(Arc::clone(existing));
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.log_path(meter_id))
            .map_err(|source| CollectorError::LogWrite { meter_id, source })?;
        let log = Arc::new(Mutex::new(MeterLog {
            file,
            high_water_energy_mwh: None,
        }));
        logs.insert(meter_id, Arc::clone(&log));
        Ok(log)
    }

    /// Latest record for one meter.
    pub fn snapshot(&self, meter_id: u32) -> Option<CollectorRecord> {
        self.snapshots
            .read()
            .expect("snapshot lock")
            .get(&meter_id)
            .copied()
    }

    /// Latest record per meter, ordered by meter id.
    pub fn snapshot_table(&self) -> Vec<CollectorRecord> {
        let snapshots = self.snapshots.read().expect("snapshot lock");
        let mut table: Vec<CollectorRecord> = snapshots.values().copied().collect();
        table.sort_by_key(|r| r.frame.meter_id);
        table
    }

    pub fn stats(&self) -> IngestStats {
        IngestStats {
            accepted: self.accepted.load(Ordering::Relaxed),
            rejected: self.rejected.load(Ordering::Relaxed),
            flagged: self.flagged.load(Ordering::Relaxed),
        }
    }

    /// Accepts connections forever, ingesting each on its own thread.
    pub fn serve(self: &Arc<Self>, listener: TcpListener) -> std::io::Result<()> {
        for stream in listener.incoming() {
            match stream {
                Ok(stream) => {
                    let collector = Arc::clone(self);
                    std::thread::spawn(move || handle_connection(&collector, stream));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        Ok(())
    }

    /// Reads a whole length-prefixed frame file, as written by a meter run.
    pub fn ingest_file(&self, path: &Path) -> Result<IngestStats, CollectorError> {
        let file = File::open(path).map_err(|source| CollectorError::LogDir {
            path: path.to_path_buf(),
            source,
        })?;
        self.ingest(file)
    }
}

fn handle_connection(collector: &Collector, stream: TcpStream) {
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "unknown".into());
    match collector.ingest(stream) {
        Ok(stats) => log::info!(
            "{peer}: accepted {} rejected {} flagged {}",
            stats.accepted,
            stats.rejected,
            stats.flagged
        ),
        Err(e) => log::error!("{peer}: {e}"),
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
