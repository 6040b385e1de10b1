//! Polynomial current calibration.
//!
//! A low-cost Hall-effect current sensor does not hold its datasheet
//! sensitivity across load types, so dividing the sensor's RMS output voltage
//! by a fixed volts-per-amp constant misreads the current. This module fits a
//! polynomial mapping sensor-output volts to load amps by least squares,
//! evaluates and inverts it, and reports conversion errors against the
//! fixed-sensitivity baseline.

use std::io::{self, BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::positive_finite;

/// Reference cubic fit (descending powers) mapping RMS sensor-output volts to
/// RMS load current in amps, measured for a nominally 100 mV/A Hall-effect
/// sensor driving mixed resistive and electronic loads up to 8 A. Used as the
/// built-in nonlinear sensor truth and as the default regression model.
pub const REFERENCE_SENSOR_FIT: [f64; 4] = [0.9188, -1.406, 10.86, -0.08648];

/// Datasheet sensitivity of the modeled sensor, volts per amp.
pub const NOMINAL_SENSITIVITY: f64 = 0.1;

/// Default polynomial degree for fitting.
pub const DEFAULT_DEGREE: usize = 3;

/// Bisection stops once the polynomial value is within this many amps of the
/// inversion target.
pub const INVERT_TOLERANCE_AMPS: f64 = 1e-9;

const INVERT_MAX_ITERATIONS: usize = 200;

/// Header line required at the top of a training CSV.
pub const TRAINING_CSV_HEADER: &str = "sensor_volts,ref_amps";

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("fit degree must be at least 1, got {0}")]
    DegreeTooLow(usize),
    #[error("need at least {needed} training pairs for degree {degree}, got {got}")]
    InsufficientPoints {
        needed: usize,
        degree: usize,
        got: usize,
    },
    #[error("design matrix is rank deficient; training inputs must include {needed} distinct sensor voltages")]
    RankDeficient { needed: usize },
    #[error("training pair ({x}, {i}) is not finite")]
    NonFinitePair { x: f64, i: f64 },
    #[error("coefficient list must be non-empty and finite")]
    InvalidCoefficients,
    #[error("sensitivity must be positive, got {0}")]
    NonPositiveSensitivity(f64),
    #[error("invalid bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },
    #[error("polynomial is not strictly increasing on [{lo}, {hi}]")]
    NotMonotone { lo: f64, hi: f64 },
    #[error("target {target} A outside bracketed range [{f_lo}, {f_hi}] A")]
    TargetNotBracketed { target: f64, f_lo: f64, f_hi: f64 },
    #[error("bisection did not reach {INVERT_TOLERANCE_AMPS} A in {INVERT_MAX_ITERATIONS} iterations")]
    DidNotConverge,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("training CSV line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error("model JSON: {0}")]
    ModelJson(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Measured (sensor output volts RMS, reference current amps RMS) pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub pairs: Vec<(f64, f64)>,
}

impl TrainingSet {
    pub fn from_pairs(pairs: Vec<(f64, f64)>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// A fitted sensor-volts → amps polynomial with its training-set fit
/// statistics. Coefficients are stored in descending power order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub degree: usize,
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub fit_rmse: f64,
    #[serde(default)]
    pub fit_max_error: f64,
}

impl CalibrationModel {
    /// Builds a model directly from descending-power coefficients.
    pub fn from_coefficients(coefficients: Vec<f64>) -> Result<Self, CalibrationError> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(CalibrationError::InvalidCoefficients);
        }
        Ok(Self {
            degree: coefficients.len() - 1,
            coefficients,
            fit_rmse: 0.0,
            fit_max_error: 0.0,
        })
    }

    /// The built-in reference cubic for the modeled 100 mV/A sensor.
    pub fn reference() -> Self {
        Self::from_coefficients(REFERENCE_SENSOR_FIT.to_vec()).expect("reference fit is valid")
    }

    /// Evaluates the polynomial at `x` sensor volts (Horner form).
    pub fn apply(&self, x: f64) -> f64 {
        horner(&self.coefficients, x)
    }

    /// Finds `x` in `[lo, hi]` with `apply(x)` within [`INVERT_TOLERANCE_AMPS`]
    /// of `target_amps`, by bisection. The polynomial must be strictly
    /// increasing on the bracket and the target must lie between the
    /// endpoint values.
    pub fn invert(&self, target_amps: f64, lo: f64, hi: f64) -> Result<f64, CalibrationError> {
        invert_poly(&self.coefficients, target_amps, lo, hi)
    }

    pub fn to_json(&self) -> Result<String, CalibrationError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, CalibrationError> {
        let model: Self = serde_json::from_slice(bytes)?;
        if model.coefficients.len() != model.degree + 1
            || model.coefficients.is_empty()
            || model.coefficients.iter().any(|c| !c.is_finite())
        {
            return Err(CalibrationError::InvalidCoefficients);
        }
        Ok(model)
    }
}

/// Converts a sensor-volts RMS reading to amps, either through a fitted
/// polynomial or by dividing by a fixed sensitivity.
#[derive(Debug, Clone)]
pub enum CurrentConverter {
    Fixed { sensitivity: f64 },
    Regression(CalibrationModel),
}

impl CurrentConverter {
    pub fn fixed(sensitivity: f64) -> Result<Self, CalibrationError> {
        if !positive_finite(sensitivity) {
            return Err(CalibrationError::NonPositiveSensitivity(sensitivity));
        }
        Ok(Self::Fixed { sensitivity })
    }

    pub fn regression(model: CalibrationModel) -> Self {
        Self::Regression(model)
    }

    pub fn convert(&self, sensor_volts: f64) -> f64 {
        match self {
            Self::Fixed { sensitivity } => sensor_volts / sensitivity,
            Self::Regression(model) => model.apply(sensor_volts),
        }
    }
}

/// Per-point absolute conversion errors over a test set, in amps.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub per_point: Vec<f64>,
    pub max_abs_error: f64,
    pub rmse: f64,
}

fn horner(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// Descending-power coefficients of the derivative polynomial.
fn derivative(coefficients: &[f64]) -> Vec<f64> {
    let degree = coefficients.len() - 1;
    coefficients[..degree]
        .iter()
        .enumerate()
        .map(|(k, &c)| c * (degree - k) as f64)
        .collect()
}

fn check_strictly_increasing(
    coefficients: &[f64],
    lo: f64,
    hi: f64,
) -> Result<(), CalibrationError> {
    if coefficients.len() == 1 {
        return Err(CalibrationError::NotMonotone { lo, hi });
    }
    let deriv = derivative(coefficients);
    // Sampling the derivative on a fine grid; fit polynomials here are low
    // degree, so sign changes between grid points cannot hide.
    const GRID: usize = 256;
    for k in 0..=GRID {
        let x = lo + (hi - lo) * k as f64 / GRID as f64;
        if !positive_finite(horner(&deriv, x)) {
            return Err(CalibrationError::NotMonotone { lo, hi });
        }
    }
    Ok(())
}

/// Bisection inverse of a strictly increasing polynomial on `[lo, hi]`.
pub fn invert_poly(
    coefficients: &[f64],
    target_amps: f64,
    lo: f64,
    hi: f64,
) -> Result<f64, CalibrationError> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi || !target_amps.is_finite() {
        return Err(CalibrationError::InvalidBracket { lo, hi });
    }
    check_strictly_increasing(coefficients, lo, hi)?;
    let f_lo = horner(coefficients, lo);
    let f_hi = horner(coefficients, hi);
    if target_amps < f_lo - INVERT_TOLERANCE_AMPS || target_amps > f_hi + INVERT_TOLERANCE_AMPS {
        return Err(CalibrationError::TargetNotBracketed {
            target: target_amps,
            f_lo,
            f_hi,
        });
    }
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..INVERT_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let f_mid = horner(coefficients, mid);
        if (f_mid - target_amps).abs() <= INVERT_TOLERANCE_AMPS {
            return Ok(mid);
        }
        if f_mid < target_amps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Endpoints can satisfy the tolerance when the interval has collapsed.
    for x in [lo, hi] {
        if (horner(coefficients, x) - target_amps).abs() <= INVERT_TOLERANCE_AMPS {
            return Ok(x);
        }
    }
    Err(CalibrationError::DidNotConverge)
}

/// Fits a degree-`degree` polynomial to the training pairs by least squares,
/// minimizing the sum of squared residuals in the current (amps) direction.
///
/// The design matrix uses the raw monomial basis in descending power order so
/// fitted coefficients read directly as the published-style `p1..p(d+1)`.
/// The solve is a Householder QR; on conditioned data the result matches the
/// normal equations to well below 1e-6.
pub fn fit(training: &TrainingSet, degree: usize) -> Result<CalibrationModel, CalibrationError> {
    if degree < 1 {
        return Err(CalibrationError::DegreeTooLow(degree));
    }
    let cols = degree + 1;
    let rows = training.len();
    if rows < cols {
        return Err(CalibrationError::InsufficientPoints {
            needed: cols,
            degree,
            got: rows,
        });
    }
    for &(x, i) in &training.pairs {
        if !x.is_finite() || !i.is_finite() {
            return Err(CalibrationError::NonFinitePair { x, i });
        }
    }

    let mut design: Vec<Vec<f64>> = Vec::with_capacity(rows);
    let mut rhs: Vec<f64> = Vec::with_capacity(rows);
    for &(x, i) in &training.pairs {
        let mut row = vec![0.0; cols];
        let mut pow = 1.0;
        for k in (0..cols).rev() {
            row[k] = pow;
            pow *= x;
        }
        design.push(row);
        rhs.push(i);
    }

    let coefficients = householder_solve(&mut design, &mut rhs, cols)
        .ok_or(CalibrationError::RankDeficient { needed: cols })?;

    let mut model = CalibrationModel {
        degree,
        coefficients,
        fit_rmse: 0.0,
        fit_max_error: 0.0,
    };
    let mut sum_sq = 0.0;
    let mut max_abs = 0.0_f64;
    for &(x, i) in &training.pairs {
        let err = (model.apply(x) - i).abs();
        sum_sq += err * err;
        max_abs = max_abs.max(err);
    }
    model.fit_rmse = (sum_sq / rows as f64).sqrt();
    model.fit_max_error = max_abs;
    Ok(model)
}

/// Householder QR least-squares solve of `a·x = b` for a tall matrix with
/// `cols` columns. Returns `None` when a pivot collapses (rank deficiency).
#[allow(clippy::needless_range_loop)]
fn householder_solve(a: &mut [Vec<f64>], b: &mut [f64], cols: usize) -> Option<Vec<f64>> {
    let rows = a.len();
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let pivot_floor = scale.max(1.0) * 1e-13;

    for k in 0..cols {
        let norm = (k..rows).map(|r| a[r][k] * a[r][k]).sum::<f64>().sqrt();
        if norm <= pivot_floor {
            return None;
        }
        let alpha = if a[k][k] >= 0.0 { -norm } else { norm };
        // Reflector v = column - alpha·e_k, applied as I - 2vvᵀ/(vᵀv).
        let mut v: Vec<f64> = (k..rows).map(|r| a[r][k]).collect();
        v[0] -= alpha;
        let v_dot: f64 = v.iter().map(|x| x * x).sum();
        if v_dot == 0.0 {
            continue;
        }
        for col in k..cols {
            let dot: f64 = (k..rows).map(|r| a[r][col] * v[r - k]).sum();
            let f = 2.0 * dot / v_dot;
            for r in k..rows {
                a[r][col] -= f * v[r - k];
            }
        }
        let dot_b: f64 = (k..rows).map(|r| b[r] * v[r - k]).sum();
        let f = 2.0 * dot_b / v_dot;
        for r in k..rows {
            b[r] -= f * v[r - k];
        }
        a[k][k] = alpha;
    }

    let mut x = vec![0.0; cols];
    for k in (0..cols).rev() {
        if a[k][k].abs() <= pivot_floor {
            return None;
        }
        let mut sum = b[k];
        for j in k + 1..cols {
            sum -= a[k][j] * x[j];
        }
        x[k] = sum / a[k][k];
    }
    Some(x)
}

/// Converts a sensor reading with a fixed sensitivity: `amps = volts / sensitivity`.
pub fn fixed_current(sensor_volts: f64, sensitivity: f64) -> Result<f64, CalibrationError> {
    if !positive_finite(sensitivity) {
        return Err(CalibrationError::NonPositiveSensitivity(sensitivity));
    }
    Ok(sensor_volts / sensitivity)
}

/// Absolute conversion error of `converter` at every test pair.
pub fn error_report(
    converter: &CurrentConverter,
    test: &TrainingSet,
) -> Result<ErrorReport, CalibrationError> {
    if test.is_empty() {
        return Err(CalibrationError::EmptyTestSet);
    }
    let per_point: Vec<f64> = test
        .pairs
        .iter()
        .map(|&(x, i)| (converter.convert(x) - i).abs())
        .collect();
    let max_abs_error = per_point.iter().cloned().fold(0.0, f64::max);
    let rmse = (per_point.iter().map(|e| e * e).sum::<f64>() / per_point.len() as f64).sqrt();
    Ok(ErrorReport {
        per_point,
        max_abs_error,
        rmse,
    })
}

/// Reads a training CSV: required header line `sensor_volts,ref_amps`, then
/// one `x,i` pair per line. Blank lines are ignored.
pub fn read_training_csv<R: Read>(reader: R) -> Result<TrainingSet, CalibrationError> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or(CalibrationError::MalformedCsv {
            line: 1,
            reason: "empty input, expected header".into(),
        })?;
    if header.trim_end_matches('\r') != TRAINING_CSV_HEADER {
        return Err(CalibrationError::MalformedCsv {
            line: 1,
            reason: format!("expected header `{TRAINING_CSV_HEADER}`, got `{header}`"),
        });
    }
    let mut pairs = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (x, i) = match (fields.next(), fields.next(), fields.next()) {
            (Some(x), Some(i), None) => (x, i),
            _ => {
                return Err(CalibrationError::MalformedCsv {
                    line: line_no,
                    reason: "expected exactly two comma-separated fields".into(),
                })
            }
        };
        let parse = |s: &str, what: &str| -> Result<f64, CalibrationError> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| CalibrationError::MalformedCsv {
                    line: line_no,
                    reason: format!("{what} `{s}` is not a number"),
                })?;
            if !v.is_finite() {
                return Err(CalibrationError::MalformedCsv {
                    line: line_no,
                    reason: format!("{what} `{s}` is not finite"),
                });
            }
            Ok(v)
        };
        pairs.push((parse(x, "sensor_volts")?, parse(i, "ref_amps")?));
    }
    Ok(TrainingSet { pairs })
}

pub fn write_training_csv<W: Write>(mut writer: W, set: &TrainingSet) -> io::Result<()> {
    writeln!(writer, "{TRAINING_CSV_HEADER}")?;
    for &(x, i) in &set.pairs {
        writeln!(writer, "{x},{i}")?;
    }
    Ok(())
}
