//! Analog front end emulation: waveform synthesis, the current-sensor model
//! with dc offset, and 10-bit unipolar ADC quantization.
//!
//! The ADC maps 0 V to count 0 and 4.99 V to count 1023, reading one sample
//! per 100 microseconds. Sensors are biased to half the supply so the
//! unipolar converter sees both half-cycles.

use std::io::{self, BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{self, CalibrationError, REFERENCE_SENSOR_FIT};
use crate::util::{nonneg_finite, positive_finite};

/// Full-scale ADC input in volts (count 1023).
pub const ADC_FULL_SCALE_VOLTS: f64 = 4.99;
/// Largest ADC count.
pub const ADC_MAX_COUNT: u16 = 1023;
/// Default sampling period in microseconds.
pub const DEFAULT_SAMPLE_PERIOD_US: f64 = 100.0;
/// Default sensor dc bias in volts (half supply).
pub const DEFAULT_DC_OFFSET_VOLTS: f64 = 2.5;
/// Sensor-volt interval on which a truth polynomial must be strictly
/// increasing; covers roughly 0-10 A at the nominal 100 mV/A sensitivity.
pub const SENSOR_BRACKET_VOLTS: (f64, f64) = (0.0, 1.0);

/// Header line of the sample CSV produced by [`write_samples_csv`].
pub const SAMPLES_CSV_HEADER: &str = "index,v_counts,i_counts,sample_period_us";

#[derive(Debug, Error)]
pub enum AdcError {
    #[error("fundamental frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),
    #[error("harmonic order must be at least 1")]
    ZeroHarmonicOrder,
    #[error("component amplitude {0} is negative or not finite")]
    InvalidAmplitude(f64),
    #[error("component phase {0} is not finite")]
    InvalidPhase(f64),
    #[error("sample count must be at least 1")]
    ZeroSampleCount,
    #[error("sample period must be positive, got {0} us")]
    NonPositivePeriod(f64),
    #[error("counts {0} above the {ADC_MAX_COUNT} ADC maximum")]
    CountsOutOfRange(u16),
    #[error("sensitivity must be positive, got {0}")]
    NonPositiveSensitivity(f64),
    #[error("dc offset {0} outside [0, {ADC_FULL_SCALE_VOLTS}] volts")]
    OffsetOutOfRange(f64),
    #[error("target rms {0} must be finite and nonnegative")]
    InvalidTargetRms(f64),
    #[error("voltage gain must be positive, got {0}")]
    NonPositiveGain(f64),
    #[error("sensor truth polynomial: {0}")]
    Sensor(#[from] CalibrationError),
    #[error("sample CSV line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error("scenario JSON: {0}")]
    ScenarioJson(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One sinusoidal component of a waveform: an integer multiple of the
/// fundamental with its own amplitude and phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// A periodic waveform as a sum of harmonics of one fundamental.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub fundamental_hz: f64,
    pub components: Vec<Harmonic>,
}

impl Default for WaveformSpec {
    fn default() -> Self {
        Self {
            fundamental_hz: 50.0,
            components: Vec::new(),
        }
    }
}

impl WaveformSpec {
    /// A single fundamental sine of the given peak amplitude, zero phase.
    pub fn sine(fundamental_hz: f64, amplitude: f64) -> Self {
        Self {
            fundamental_hz,
            components: vec![Harmonic {
                order: 1,
                amplitude,
                phase: 0.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), AdcError> {
        if !positive_finite(self.fundamental_hz) {
            return Err(AdcError::NonPositiveFrequency(self.fundamental_hz));
        }
        for c in &self.components {
            if c.order < 1 {
                return Err(AdcError::ZeroHarmonicOrder);
            }
            if !nonneg_finite(c.amplitude) {
                return Err(AdcError::InvalidAmplitude(c.amplitude));
            }
            if !c.phase.is_finite() {
                return Err(AdcError::InvalidPhase(c.phase));
            }
        }
        Ok(())
    }

    /// RMS of the continuous waveform: harmonics of distinct order are
    /// orthogonal, so the squares of per-component RMS values add.
    pub fn analytic_rms(&self) -> f64 {
        // Components sharing an order combine as phasors first.
        let mut by_order: Vec<(u32, f64, f64)> = Vec::new();
        for c in &self.components {
            let re = c.amplitude * c.phase.cos();
            let im = c.amplitude * c.phase.sin();
            match by_order.iter_mut().find(|(o, _, _)| *o == c.order) {
                Some((_, r, i)) => {
                    *r += re;
                    *i += im;
                }
                None => by_order.push((c.order, re, im)),
            }
        }
        (by_order
            .iter()
            .map(|(_, re, im)| (re * re + im * im) / 2.0)
            .sum::<f64>())
        .sqrt()
    }

    /// Same waveshape with amplitudes scaled so the analytic RMS equals
    /// `target_rms`. A zero waveform can only be scaled to zero.
    pub fn scaled_to_rms(&self, target_rms: f64) -> Result<Self, AdcError> {
        if !nonneg_finite(target_rms) {
            return Err(AdcError::InvalidTargetRms(target_rms));
        }
        let rms = self.analytic_rms();
        if rms == 0.0 {
            if target_rms == 0.0 {
                return Ok(self.clone());
            }
            return Err(AdcError::InvalidAmplitude(0.0));
        }
        let k = target_rms / rms;
        let mut scaled = self.clone();
        for c in &mut scaled.components {
            c.amplitude *= k;
        }
        Ok(scaled)
    }
}

/// How the current sensor turns amps into volts around its dc bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SensorKind {
    /// Exactly `nominal_sensitivity` volts per amp.
    Ideal,
    /// Amplitude-dependent gain defined by a ground-truth polynomial mapping
    /// RMS sensor volts to RMS amps (descending powers). The effective gain
    /// is chosen per target RMS so the polynomial is its exact inverse at
    /// steady state.
    PolynomialTruth { volts_to_amps: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    #[serde(flatten)]
    pub kind: SensorKind,
    pub nominal_sensitivity: f64,
    pub dc_offset: f64,
}

impl SensorModel {
    pub fn ideal() -> Self {
        Self {
            kind: SensorKind::Ideal,
            nominal_sensitivity: calibration::NOMINAL_SENSITIVITY,
            dc_offset: DEFAULT_DC_OFFSET_VOLTS,
        }
    }

    pub fn polynomial_truth(volts_to_amps: Vec<f64>) -> Self {
        Self {
            kind: SensorKind::PolynomialTruth { volts_to_amps },
            nominal_sensitivity: calibration::NOMINAL_SENSITIVITY,
            dc_offset: DEFAULT_DC_OFFSET_VOLTS,
        }
    }

    /// The built-in nonlinear sensor, whose truth curve is the reference
    /// cubic fit.
    pub fn reference_nonlinear() -> Self {
        Self::polynomial_truth(REFERENCE_SENSOR_FIT.to_vec())
    }

    pub fn validate(&self) -> Result<(), AdcError> {
        if !positive_finite(self.nominal_sensitivity) {
            return Err(AdcError::NonPositiveSensitivity(self.nominal_sensitivity));
        }
        if !(0.0..=ADC_FULL_SCALE_VOLTS).contains(&self.dc_offset) {
            return Err(AdcError::OffsetOutOfRange(self.dc_offset));
        }
        Ok(())
    }
}

/// One quantized sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdcReading {
    pub counts: u16,
    pub index: usize,
    pub sample_period_us: f64,
}

impl AdcReading {
    pub fn new(counts: u16, index: usize, sample_period_us: f64) -> Result<Self, AdcError> {
        if counts > ADC_MAX_COUNT {
            return Err(AdcError::CountsOutOfRange(counts));
        }
        if !positive_finite(sample_period_us) {
            return Err(AdcError::NonPositivePeriod(sample_period_us));
        }
        Ok(Self {
            counts,
            index,
            sample_period_us,
        })
    }
}

/// Instantaneous waveform values at `sample_count` instants spaced
/// `sample_period_us` apart, starting at t = 0.
pub fn synthesize(
    spec: &WaveformSpec,
    sample_count: usize,
    sample_period_us: f64,
) -> Result<Vec<f64>, AdcError> {
    spec.validate()?;
    if sample_count == 0 {
        return Err(AdcError::ZeroSampleCount);
    }
    if !positive_finite(sample_period_us) {
        return Err(AdcError::NonPositivePeriod(sample_period_us));
    }
    let omega = 2.0 * std::f64::consts::PI * spec.fundamental_hz;
    let dt = sample_period_us * 1e-6;
    let mut out = Vec::with_capacity(sample_count);
    for j in 0..sample_count {
        let t = j as f64 * dt;
        let v = spec
            .components
            .iter()
            .map(|c| c.amplitude * (omega * c.order as f64 * t + c.phase).sin())
            .sum();
        out.push(v);
    }
    Ok(out)
}

/// Runs a current series through the sensor model, producing the biased
/// sensor output in volts.
///
/// For the ideal kind the output is `dc_offset + nominal_sensitivity * i(t)`.
/// For the polynomial-truth kind the effective gain is `x* / target_rms`
/// where `x*` solves `truth(x*) = target_rms` on the operating bracket, so
/// the RMS of the unbiased output is exactly `x*`. `target_rms` must be the
/// RMS of `current_amps`; a zero target short-circuits to a flat dc output.
pub fn sensor_transfer(
    current_amps: &[f64],
    model: &SensorModel,
    target_rms_amps: f64,
) -> Result<Vec<f64>, AdcError> {
    model.validate()?;
    if !nonneg_finite(target_rms_amps) {
        return Err(AdcError::InvalidTargetRms(target_rms_amps));
    }
    let gain = match &model.kind {
        SensorKind::Ideal => model.nominal_sensitivity,
        SensorKind::PolynomialTruth { volts_to_amps } => {
            if target_rms_amps == 0.0 {
                return Ok(vec![model.dc_offset; current_amps.len()]);
            }
            let (lo, hi) = SENSOR_BRACKET_VOLTS;
            let x_star = calibration::invert_poly(volts_to_amps, target_rms_amps, lo, hi)?;
            x_star / target_rms_amps
        }
    };
    Ok(current_amps
        .iter()
        .map(|&i| model.dc_offset + gain * i)
        .collect())
}

/// Quantizes a voltage to a 10-bit count: `round(volts / 4.99 * 1023)`, half
/// away from zero, clamped to the rails. Total over all inputs; NaN maps to 0.
pub fn quantize(volts: f64) -> u16 {
    if volts.is_nan() {
        return 0;
    }
    let scaled = (volts / ADC_FULL_SCALE_VOLTS * ADC_MAX_COUNT as f64).round();
    scaled.clamp(0.0, ADC_MAX_COUNT as f64) as u16
}

/// Converts a count back to its grid voltage: `counts * 4.99 / 1023`.
pub fn to_volts(counts: u16) -> Result<f64, AdcError> {
    if counts > ADC_MAX_COUNT {
        return Err(AdcError::CountsOutOfRange(counts));
    }
    Ok(counts as f64 * ADC_FULL_SCALE_VOLTS / ADC_MAX_COUNT as f64)
}

/// One row of the paired-channel sample CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRow {
    pub index: u64,
    pub v_counts: u16,
    pub i_counts: u16,
    pub sample_period_us: f64,
}

pub fn write_samples_csv<W: Write>(
    mut writer: W,
    rows: impl IntoIterator<Item = SampleRow>,
) -> io::Result<()> {
    writeln!(writer, "{SAMPLES_CSV_HEADER}")?;
    for row in rows {
        writeln!(
            writer,
            "{},{},{},{}",
            row.index, row.v_counts, row.i_counts, row.sample_period_us
        )?;
    }
    Ok(())
}

/// Reads the paired-channel sample CSV, validating the header, count ranges,
/// and per-row sample period.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<SampleRow>, AdcError> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines.next().transpose()?.ok_or(AdcError::MalformedCsv {
        line: 1,
        reason: "empty input, expected header".into(),
    })?;
    if header.trim_end_matches('\r') != SAMPLES_CSV_HEADER {
        return Err(AdcError::MalformedCsv {
            line: 1,
            reason: format!("expected header `{SAMPLES_CSV_HEADER}`, got `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(AdcError::MalformedCsv {
                line: line_no,
                reason: "expected four comma-separated fields".into(),
            });
        }
        let malformed = |reason: String| AdcError::MalformedCsv {
            line: line_no,
            reason,
        };
        let index: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("index `{}` is not an integer", fields[0])))?;
        let parse_counts = |s: &str, channel: &str| -> Result<u16, AdcError> {
            let c: u16 = s
                .trim()
                .parse()
                .map_err(|_| malformed(format!("{channel} `{s}` is not a count")))?;
            if c > ADC_MAX_COUNT {
                return Err(malformed(format!("{channel} {c} exceeds {ADC_MAX_COUNT}")));
            }
            Ok(c)
        };
        let v_counts = parse_counts(fields[1], "v_counts")?;
        let i_counts = parse_counts(fields[2], "i_counts")?;
        let sample_period_us: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("sample_period_us `{}` is not a number", fields[3])))?;
        if !positive_finite(sample_period_us) {
            return Err(malformed(format!(
                "sample_period_us {sample_period_us} must be positive"
            )));
        }
        rows.push(SampleRow {
            index,
            v_counts,
            i_counts,
            sample_period_us,
        });
    }
    Ok(rows)
}

/// A complete load scenario: mains voltage and load current waveforms, the
/// current sensor, and the voltage channel's conditioning into ADC range
/// (`v_adc = v_offset + v_mains / v_gain`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub voltage: WaveformSpec,
    pub current: WaveformSpec,
    pub sensor: SensorModel,
    pub v_gain: f64,
    pub v_offset: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), AdcError> {
        self.voltage.validate()?;
        self.current.validate()?;
        self.sensor.validate()?;
        if !positive_finite(self.v_gain) {
            return Err(AdcError::NonPositiveGain(self.v_gain));
        }
        if !(0.0..=ADC_FULL_SCALE_VOLTS).contains(&self.v_offset) {
            return Err(AdcError::OffsetOutOfRange(self.v_offset));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, AdcError> {
        let scenario: Self = serde_json::from_slice(bytes)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> Result<String, AdcError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Both ADC channel inputs of a simulated scenario, in volts at the converter
/// pin, before quantization.
#[derive(Debug, Clone)]
pub struct AnalogPair {
    pub v_adc_volts: Vec<f64>,
    pub i_adc_volts: Vec<f64>,
    pub sample_period_us: f64,
}

/// Synthesizes a scenario's two channels at the given sampling grid.
pub fn simulate_analog(
    scenario: &Scenario,
    sample_count: usize,
    sample_period_us: f64,
) -> Result<AnalogPair, AdcError> {
    scenario.validate()?;
    let v_mains = synthesize(&scenario.voltage, sample_count, sample_period_us)?;
    let i_amps = synthesize(&scenario.current, sample_count, sample_period_us)?;
    let i_adc_volts = sensor_transfer(&i_amps, &scenario.sensor, scenario.current.analytic_rms())?;
    let v_adc_volts = v_mains
        .iter()
        .map(|&v| scenario.v_offset + v / scenario.v_gain)
        .collect();
    Ok(AnalogPair {
        v_adc_volts,
        i_adc_volts,
        sample_period_us,
    })
}

/// Quantizes both channels of an analog pair into sample rows.
pub fn quantize_pair(analog: &AnalogPair) -> Vec<SampleRow> {
    analog
        .v_adc_volts
        .iter()
        .zip(&analog.i_adc_volts)
        .enumerate()
        .map(|(index, (&v, &i))| SampleRow {
            index: index as u64,
            v_counts: quantize(v),
            i_counts: quantize(i),
            sample_period_us: analog.sample_period_us,
        })
        .collect()
}
