//! The metering loop: offset removal, RMS, active/apparent power, power
//! factor, and conditional energy accumulation over sample windows.

use std::io::{self, Write};

use thiserror::Error;

use crate::adc::{self, ADC_MAX_COUNT};
use crate::util::{nonneg_finite, positive_finite};
use crate::calibration::CurrentConverter;

/// Default samples per metering window: one 50 Hz period at 100 us/sample.
pub const DEFAULT_WINDOW_LEN: usize = 200;
/// Default mains volts per volt at the ADC pin on the voltage channel.
pub const DEFAULT_VOLTAGE_GAIN: f64 = 150.0;
/// Default current deadband in amps below which energy is not accumulated;
/// quantization noise keeps a truly idle channel slightly above zero.
pub const DEFAULT_ZERO_CURRENT_THRESHOLD: f64 = 0.02;
/// Five-minute windows in a 31-day month: 31 * 24 * 12.
pub const FIVE_MINUTE_WINDOWS_PER_31_DAYS: f64 = 8928.0;

/// Header line of the per-window measurement log CSV.
pub const MEASUREMENT_CSV_HEADER: &str = "t_hours,v_rms,i_rms,p,s,pf,energy_wh";

#[derive(Debug, Error)]
pub enum MeteringError {
    #[error("empty sample series")]
    EmptySeries,
    #[error("mismatched series lengths: {v} vs {i}")]
    MismatchedLengths { v: usize, i: usize },
    #[error("counts {0} above the {ADC_MAX_COUNT} ADC maximum")]
    CountsOutOfRange(u16),
    #[error("sample period must be positive, got {0} us")]
    NonPositivePeriod(f64),
    #[error("voltage gain must be positive, got {0}")]
    NonPositiveGain(f64),
    #[error("zero-current threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),
    #[error("rms inputs must be nonnegative, got ({v_rms}, {i_rms})")]
    NegativeRms { v_rms: f64, i_rms: f64 },
    #[error("power factor undefined: apparent power is zero")]
    UndefinedPowerFactor,
    #[error("time step must be nonnegative, got {0} h")]
    NegativeTimeStep(f64),
    #[error("energy must be nonnegative and finite, got {0} Wh")]
    InvalidEnergy(f64),
}

/// Paired voltage/current ADC counts sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    v_counts: Vec<u16>,
    i_counts: Vec<u16>,
    sample_period_us: f64,
}

impl SampleWindow {
    pub fn new(
        v_counts: Vec<u16>,
        i_counts: Vec<u16>,
        sample_period_us: f64,
    ) -> Result<Self, MeteringError> {
        if v_counts.is_empty() || i_counts.is_empty() {
            return Err(MeteringError::EmptySeries);
        }
        if v_counts.len() != i_counts.len() {
            return Err(MeteringError::MismatchedLengths {
                v: v_counts.len(),
                i: i_counts.len(),
            });
        }
        if let Some(&c) = v_counts.iter().chain(&i_counts).find(|&&c| c > ADC_MAX_COUNT) {
            return Err(MeteringError::CountsOutOfRange(c));
        }
        if !positive_finite(sample_period_us) {
            return Err(MeteringError::NonPositivePeriod(sample_period_us));
        }
        Ok(Self {
            v_counts,
            i_counts,
            sample_period_us,
        })
    }

    pub fn len(&self) -> usize {
        self.v_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn v_counts(&self) -> &[u16] {
        &self.v_counts
    }

    pub fn i_counts(&self) -> &[u16] {
        &self.i_counts
    }

    pub fn sample_period_us(&self) -> f64 {
        self.sample_period_us
    }

    /// Window span in hours: n samples at the sample period.
    pub fn duration_hours(&self) -> f64 {
        self.len() as f64 * self.sample_period_us * 1e-6 / 3600.0
    }
}

/// How to strip the dc bias from a channel before computing RMS values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OffsetMode {
    /// Subtract a configured constant, in ADC volts.
    Fixed(f64),
    /// Subtract the arithmetic mean of each window.
    WindowMean,
}

/// Per-meter channel conditioning and accumulation thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    /// Mains volts per volt at the ADC pin.
    pub v_gain: f64,
    pub v_offset_mode: OffsetMode,
    pub i_offset_mode: OffsetMode,
    /// Reported amps at or below this do not accumulate energy.
    pub zero_current_threshold: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            v_gain: DEFAULT_VOLTAGE_GAIN,
            v_offset_mode: OffsetMode::WindowMean,
            i_offset_mode: OffsetMode::WindowMean,
            zero_current_threshold: DEFAULT_ZERO_CURRENT_THRESHOLD,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), MeteringError> {
        if !positive_finite(self.v_gain) {
            return Err(MeteringError::NonPositiveGain(self.v_gain));
        }
        if !nonneg_finite(self.zero_current_threshold) {
            return Err(MeteringError::NegativeThreshold(self.zero_current_threshold));
        }
        Ok(())
    }
}

/// One window's derived electrical quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    pub v_rms: f64,
    pub i_rms: f64,
    /// Active power in watts, signed as computed.
    pub active_power: f64,
    /// Apparent power in volt-amperes.
    pub apparent_power: f64,
    /// |P|/S clamped to [0, 1]; `None` when S is zero.
    pub power_factor: Option<f64>,
    /// Window span in hours.
    pub dt_hours: f64,
}

/// Cumulative meter state carried across windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterState {
    pub energy_wh: f64,
    pub elapsed_hours: f64,
}

impl MeterState {
    pub fn new(energy_wh: f64) -> Self {
        Self {
            energy_wh,
            elapsed_hours: 0.0,
        }
    }
}

impl Default for MeterState {
    fn default() -> Self {
        Self::new(0.0)
    }
}

/// Removes the dc bias from a series per the offset mode.
pub fn remove_offset(series: &[f64], mode: OffsetMode) -> Result<Vec<f64>, MeteringError> {
    if series.is_empty() {
        return Err(MeteringError::EmptySeries);
    }
    let offset = match mode {
        OffsetMode::Fixed(v) => v,
        // An all-equal window (an idle channel after quantization) must
        // center to exact zeros; summation rounding would leave a residue.
        OffsetMode::WindowMean if series.iter().all(|&x| x == series[0]) => series[0],
        OffsetMode::WindowMean => series.iter().sum::<f64>() / series.len() as f64,
    };
    Ok(series.iter().map(|x| x - offset).collect())
}

/// Root mean square of a series.
pub fn rms(series: &[f64]) -> Result<f64, MeteringError> {
    if series.is_empty() {
        return Err(MeteringError::EmptySeries);
    }
    Ok((series.iter().map(|x| x * x).sum::<f64>() / series.len() as f64).sqrt())
}

/// Mean of instantaneous voltage-current products, in watts.
pub fn active_power(v_series: &[f64], i_series: &[f64]) -> Result<f64, MeteringError> {
    if v_series.is_empty() || i_series.is_empty() {
        return Err(MeteringError::EmptySeries);
    }
    if v_series.len() != i_series.len() {
        return Err(MeteringError::MismatchedLengths {
            v: v_series.len(),
            i: i_series.len(),
        });
    }
    Ok(v_series
        .iter()
        .zip(i_series)
        .map(|(v, i)| v * i)
        .sum::<f64>()
        / v_series.len() as f64)
}

/// Product of RMS voltage and RMS current, in volt-amperes.
pub fn apparent_power(v_rms: f64, i_rms: f64) -> Result<f64, MeteringError> {
    if v_rms < 0.0 || i_rms < 0.0 {
        return Err(MeteringError::NegativeRms { v_rms, i_rms });
    }
    Ok(v_rms * i_rms)
}

/// |P| / S, clamped to [0, 1]. Clamping is logged; a zero S is an error.
pub fn power_factor(p: f64, s: f64) -> Result<f64, MeteringError> {
    if s <= 0.0 {
        return Err(MeteringError::UndefinedPowerFactor);
    }
    let raw = p.abs() / s;
    if raw > 1.0 {
        log::debug!("power factor {raw:.6} clamped to 1.0");
        return Ok(1.0);
    }
    Ok(raw)
}

/// Accumulates `p * dt` into the energy register while current flows.
///
/// Below the deadband the register is left untouched; negative power
/// (export) is clamped to zero and logged, since the meter is
/// consumption-only. Elapsed time always advances.
pub fn accumulate(
    state: MeterState,
    p_watts: f64,
    dt_hours: f64,
    i_rms: f64,
    zero_current_threshold: f64,
) -> Result<MeterState, MeteringError> {
    if !nonneg_finite(dt_hours) {
        return Err(MeteringError::NegativeTimeStep(dt_hours));
    }
    let mut next = state;
    next.elapsed_hours += dt_hours;
    if i_rms > zero_current_threshold {
        let p = if p_watts < 0.0 {
            log::warn!("negative active power {p_watts:.3} W clamped to 0 for accumulation");
            0.0
        } else {
            p_watts
        };
        next.energy_wh += p * dt_hours;
    }
    Ok(next)
}

/// Runs one full metering pass over a window: counts to volts, offset
/// removal, RMS scaling, current conversion (fixed sensitivity or fitted
/// polynomial), power computation, and conditional accumulation.
///
/// Current samples are scaled by the same RMS-level conversion ratio the
/// converter establishes, so sample products and RMS quantities agree.
pub fn metering_step(
    window: &SampleWindow,
    cfg: &ChannelConfig,
    converter: &CurrentConverter,
    state: MeterState,
) -> Result<(Measurements, MeterState), MeteringError> {
    cfg.validate()?;
    let to_volts = |counts: &[u16]| -> Vec<f64> {
        counts
            .iter()
            .map(|&c| adc::to_volts(c).expect("window counts validated"))
            .collect()
    };
    let v_centered = remove_offset(&to_volts(window.v_counts()), cfg.v_offset_mode)?;
    let i_centered = remove_offset(&to_volts(window.i_counts()), cfg.i_offset_mode)?;

    let v_mains: Vec<f64> = v_centered.iter().map(|v| v * cfg.v_gain).collect();
    let v_rms = rms(&v_mains)?;

    let sensor_volts_rms = rms(&i_centered)?;
    let converted = converter.convert(sensor_volts_rms);
    let i_rms = if converted < 0.0 {
        log::debug!("converter produced {converted:.4} A at {sensor_volts_rms:.4} V rms, clamped to 0");
        0.0
    } else {
        converted
    };
    let ratio = if sensor_volts_rms > 0.0 {
        i_rms / sensor_volts_rms
    } else {
        0.0
    };
    let i_amps: Vec<f64> = i_centered.iter().map(|x| x * ratio).collect();

    let p = active_power(&v_mains, &i_amps)?;
    let s = apparent_power(v_rms, i_rms)?;
    let pf = match power_factor(p, s) {
        Ok(pf) => Some(pf),
        Err(MeteringError::UndefinedPowerFactor) => None,
        Err(e) => return Err(e),
    };

    let dt_hours = window.duration_hours();
    let next = accumulate(state, p, dt_hours, i_rms, cfg.zero_current_threshold)?;
    Ok((
        Measurements {
            v_rms,
            i_rms,
            active_power: p,
            apparent_power: s,
            power_factor: pf,
            dt_hours,
        },
        next,
    ))
}

/// Scales one five-minute energy figure to a 31-day month.
pub fn project_monthly(e_5min_wh: f64) -> Result<f64, MeteringError> {
    if !nonneg_finite(e_5min_wh) {
        return Err(MeteringError::InvalidEnergy(e_5min_wh));
    }
    Ok(e_5min_wh * FIVE_MINUTE_WINDOWS_PER_31_DAYS)
}

pub fn write_measurement_header<W: Write>(mut writer: W) -> io::Result<()> {
    writeln!(writer, "{MEASUREMENT_CSV_HEADER}")
}

/// Appends one measurement log row; an undefined power factor logs as `nan`.
pub fn write_measurement_row<W: Write>(
    mut writer: W,
    t_hours: f64,
    m: &Measurements,
    energy_wh: f64,
) -> io::Result<()> {
    let pf = m
        .power_factor
        .map_or_else(|| "nan".to_string(), |pf| pf.to_string());
    writeln!(
        writer,
        "{},{},{},{},{},{},{}",
        t_hours, m.v_rms, m.i_rms, m.active_power, m.apparent_power, pf, energy_wh
    )
}
