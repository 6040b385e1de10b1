//! Pipeline orchestration: turning sample streams into metering windows,
//! driving runs with persistence and telemetry, and comparing the
//! fixed-sensitivity path against the regression path.

use std::fmt;

use thiserror::Error;

use crate::adc::{AdcError, SampleRow};
use crate::amr::MeterFrame;
use crate::calibration::{CalibrationError, CurrentConverter};
use crate::metering::{
    self, metering_step, ChannelConfig, Measurements, MeterState, MeteringError, SampleWindow,
};
use crate::nvstore::{EnergyRegister, StoreError};
use crate::tariff::{dr_status, DrStatus, TariffError, TariffSchedule};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("sample stream: {0}")]
    Adc(#[from] AdcError),
    #[error(transparent)]
    Metering(#[from] MeteringError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tariff(#[from] TariffError),
    #[error("sample period changed mid-stream: {first} us then {other} us at row {row}")]
    InconsistentPeriod { first: f64, other: f64, row: usize },
    #[error("no complete window of {window_len} samples in {rows} rows")]
    NotEnoughSamples { window_len: usize, rows: usize },
}

/// Groups sample rows into fixed-length windows on a uniform sampling grid.
/// A trailing partial window is dropped.
pub fn windows_from_rows(
    rows: &[SampleRow],
    window_len: usize,
) -> Result<Vec<SampleWindow>, RunnerError> {
    if window_len == 0 || rows.len() < window_len {
        return Err(RunnerError::NotEnoughSamples {
            window_len,
            rows: rows.len(),
        });
    }
    let period = rows[0].sample_period_us;
    for (idx, row) in rows.iter().enumerate() {
        if row.sample_period_us != period {
            return Err(RunnerError::InconsistentPeriod {
                first: period,
                other: row.sample_period_us,
                row: idx,
            });
        }
    }
    let dropped = rows.len() % window_len;
    if dropped != 0 {
        log::debug!("dropping {dropped} trailing samples short of a window");
    }
    rows.chunks_exact(window_len)
        .map(|chunk| {
            SampleWindow::new(
                chunk.iter().map(|r| r.v_counts).collect(),
                chunk.iter().map(|r| r.i_counts).collect(),
                period,
            )
            .map_err(RunnerError::from)
        })
        .collect()
}

/// One processed window.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub measurements: Measurements,
    /// State after this window.
    pub state: MeterState,
}

/// A full metering pass over a window sequence.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub steps: Vec<StepOutput>,
    pub final_state: MeterState,
}

/// Runs the metering loop over every window, optionally persisting the
/// energy register after each one, mirroring the firmware's store-per-loop.
pub fn run_metering(
    windows: &[SampleWindow],
    cfg: &ChannelConfig,
    converter: &CurrentConverter,
    initial: MeterState,
    mut register: Option<&mut EnergyRegister>,
) -> Result<RunOutput, RunnerError> {
    let mut state = initial;
    let mut steps = Vec::with_capacity(windows.len());
    for window in windows {
        let (measurements, next) = metering_step(window, cfg, converter, state)?;
        state = next;
        if let Some(register) = register.as_deref_mut() {
            register.store(state.energy_wh)?;
        }
        steps.push(StepOutput {
            measurements,
            state,
        });
    }
    Ok(RunOutput {
        steps,
        final_state: state,
    })
}

/// Builds one telemetry frame per processed window. Timestamps advance with
/// the sample clock from `start_timestamp`; the demand-response flag comes
/// from the schedule applied to cumulative kWh, when one is given.
pub fn frames_for_run(
    meter_id: u32,
    start_timestamp: u64,
    run: &RunOutput,
    schedule: Option<&TariffSchedule>,
) -> Result<Vec<MeterFrame>, RunnerError> {
    let mut frames = Vec::with_capacity(run.steps.len());
    for step in &run.steps {
        let dr = match schedule {
            Some(schedule) => dr_status(step.state.energy_wh / 1000.0, schedule)?,
            None => DrStatus::Normal,
        };
        let timestamp = start_timestamp + (step.state.elapsed_hours * 3600.0).round() as u64;
        frames.push(MeterFrame::from_measurements(
            meter_id,
            timestamp,
            &step.measurements,
            step.state.energy_wh,
            &dr,
        ));
    }
    Ok(frames)
}

/// Side-by-side energy accounting for the two current-conversion paths over
/// the same sample windows, with the 31-day projection of each.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonReport {
    pub fixed_energy_wh: f64,
    pub regression_energy_wh: f64,
    /// regression minus fixed, watt-hours over the run.
    pub difference_wh: f64,
    pub fixed_monthly_wh: f64,
    pub regression_monthly_wh: f64,
    /// Scales the per-run difference by the same five-minute projection
    /// factor, so the row stays arithmetically consistent with the others.
    pub monthly_difference_wh: f64,
}

/// Meters the windows twice, with the fixed sensitivity and with the fitted
/// model, and projects both results to a 31-day month.
pub fn compare_runs(
    windows: &[SampleWindow],
    cfg: &ChannelConfig,
    fixed_sensitivity: f64,
    model: crate::calibration::CalibrationModel,
) -> Result<ComparisonReport, RunnerError> {
    let fixed = run_metering(
        windows,
        cfg,
        &CurrentConverter::fixed(fixed_sensitivity)?,
        MeterState::default(),
        None,
    )?;
    let regression = run_metering(
        windows,
        cfg,
        &CurrentConverter::regression(model),
        MeterState::default(),
        None,
    )?;
    let fixed_energy_wh = fixed.final_state.energy_wh;
    let regression_energy_wh = regression.final_state.energy_wh;
    let difference_wh = regression_energy_wh - fixed_energy_wh;
    Ok(ComparisonReport {
        fixed_energy_wh,
        regression_energy_wh,
        difference_wh,
        fixed_monthly_wh: metering::project_monthly(fixed_energy_wh)?,
        regression_monthly_wh: metering::project_monthly(regression_energy_wh)?,
        monthly_difference_wh: metering::FIVE_MINUTE_WINDOWS_PER_31_DAYS * difference_wh,
    })
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<28} {:>18} {:>18} {:>14}",
            "", "fixed-sensitivity", "regression", "difference"
        )?;
        writeln!(
            f,
            "{:<28} {:>18.2} {:>18.2} {:>14.2}",
            "energy (Wh, run)", self.fixed_energy_wh, self.regression_energy_wh, self.difference_wh
        )?;
        write!(
            f,
            "{:<28} {:>18.2} {:>18.2} {:>14.2}",
            "projected 31-day (Wh)",
            self.fixed_monthly_wh,
            self.regression_monthly_wh,
            self.monthly_difference_wh
        )
    }
}
