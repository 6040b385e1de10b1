//! Software emulation of a single-phase smart energy meter.
//!
//! The signal path runs end to end in software: synthesized mains voltage
//! and load current waveforms pass through a configurable (possibly
//! nonlinear) current-sensor model with a dc bias, get quantized by a 10-bit
//! unipolar ADC at a fixed sample period, and feed a metering loop that
//! computes RMS quantities, active and apparent power, power factor, and
//! cumulative energy with nonvolatile persistence.
//!
//! Around the meter core sit the pieces a deployed meter needs: a
//! least-squares polynomial calibration that replaces the sensor's fixed
//! datasheet sensitivity, block-rate tariff billing with demand-response
//! warnings near block boundaries, and a compact framed telemetry format
//! with a head-end collector for reading whole fleets remotely.

pub mod adc;
pub mod amr;
pub mod calibration;
pub mod metering;
pub mod nvstore;
pub mod runner;
pub mod tariff;

mod util;

pub use adc::{quantize, sensor_transfer, synthesize, Scenario, SensorModel, WaveformSpec};
pub use amr::{crc16, Collector, FrameReader, MeterFrame};
pub use calibration::{fit, CalibrationModel, CurrentConverter, TrainingSet};
pub use metering::{metering_step, project_monthly, ChannelConfig, MeterState, Measurements};
pub use nvstore::{EnergyRegister, WritePolicy};
pub use runner::{compare_runs, run_metering, windows_from_rows, ComparisonReport};
pub use tariff::{bill, bill_itemized, dr_status, DrStatus, Money, TariffSchedule};
