//! Block-rate tariff billing and demand-response status.
//!
//! A schedule splits monthly consumption into blocks at ascending unit
//! boundaries with ascending per-unit rates. Telescopic billing charges each
//! block's portion at that block's rate; flat-slab billing charges the whole
//! consumption at the landed block's rate. Consumers get a warning once
//! their cumulative units come within a configured margin of the next
//! boundary, and a crossed signal beyond the last one.
//!
//! Money is exact: prices are integer minor units (cents), and consumption
//! quantizes to milli-units, so bills carry no float drift.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::positive_finite;

/// Default warning margin: within 10% of the next block boundary.
pub const DEFAULT_WARNING_MARGIN: f64 = 0.1;

const MILLI_PER_UNIT: i128 = 1000;
/// Largest consumption (units) the milli-unit representation accepts.
const MAX_UNITS: f64 = 1e12;

#[derive(Debug, Error)]
pub enum TariffError {
    #[error("units must be nonnegative and finite, got {0}")]
    InvalidUnits(f64),
    #[error("units {0} beyond representable range")]
    UnitsTooLarge(f64),
    #[error("schedule needs at least one boundary")]
    NoBoundaries,
    #[error("boundaries must be strictly ascending and positive")]
    BadBoundaries,
    #[error("need exactly one more rate than boundaries: {rates} rates for {boundaries} boundaries")]
    RateCountMismatch { rates: usize, boundaries: usize },
    #[error("rates must be strictly ascending")]
    RatesNotAscending,
    #[error("warning margin must lie strictly between 0 and 1, got {0}")]
    BadWarningMargin(f64),
    #[error("money amount `{0}` is not a valid decimal with at most two fraction digits")]
    BadMoney(String),
    #[error("schedule JSON: {0}")]
    ScheduleJson(#[from] serde_json::Error),
}

/// An exact amount in integer minor units (hundredths).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i64);

impl Money {
    pub const fn from_minor(minor: i64) -> Self {
        Self(minor)
    }

    pub const fn minor(self) -> i64 {
        self.0
    }

    /// Parses a plain decimal like `2`, `4.5`, or `0.25`.
    pub fn parse(text: &str) -> Result<Self, TariffError> {
        let bad = || TariffError::BadMoney(text.to_string());
        let (sign, digits) = match text.strip_prefix('-') {
            Some(rest) => (-1i64, rest),
            None => (1i64, text),
        };
        if digits.is_empty() {
            return Err(bad());
        }
        let (whole, frac) = match digits.split_once('.') {
            Some((w, f)) => (w, f),
            None => (digits, ""),
        };
        if whole.is_empty() || frac.len() > 2 {
            return Err(bad());
        }
        if !whole.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let whole: i64 = whole.parse().map_err(|_| bad())?;
        let mut cents: i64 = 0;
        for (k, b) in frac.bytes().enumerate() {
            cents += i64::from(b - b'0') * if k == 0 { 10 } else { 1 };
        }
        whole
            .checked_mul(100)
            .and_then(|w| w.checked_add(cents))
            .and_then(|m| m.checked_mul(sign))
            .map(Self)
            .ok_or_else(bad)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MoneyVisitor;
        impl de::Visitor<'_> for MoneyVisitor {
            type Value = Money;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a decimal amount with at most two fraction digits")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Money, E> {
                Money::parse(v).map_err(E::custom)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Money, E> {
                let minor = (v * 100.0).round();
                if !v.is_finite() || (v * 100.0 - minor).abs() > 1e-6 {
                    return Err(E::custom(TariffError::BadMoney(v.to_string())));
                }
                Ok(Money::from_minor(minor as i64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Money, E> {
                v.checked_mul(100)
                    .map(Money::from_minor)
                    .ok_or_else(|| E::custom(TariffError::BadMoney(v.to_string())))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Money, E> {
                i64::try_from(v)
                    .ok()
                    .and_then(|v| v.checked_mul(100))
                    .map(Money::from_minor)
                    .ok_or_else(|| E::custom(TariffError::BadMoney(v.to_string())))
            }
        }
        deserializer.deserialize_any(MoneyVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BillingMode {
    Telescopic,
    FlatSlab,
}

/// Block boundaries in units with one rate per block (one more rate than
/// boundaries), the billing mode, and the demand-response warning margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffSchedule {
    pub boundaries: Vec<f64>,
    pub rates: Vec<Money>,
    #[serde(default = "default_mode")]
    pub mode: BillingMode,
    #[serde(default = "default_margin")]
    pub warning_margin: f64,
}

fn default_mode() -> BillingMode {
    BillingMode::Telescopic
}

fn default_margin() -> f64 {
    DEFAULT_WARNING_MARGIN
}

impl TariffSchedule {
    pub fn new(
        boundaries: Vec<f64>,
        rates: Vec<Money>,
        mode: BillingMode,
        warning_margin: f64,
    ) -> Result<Self, TariffError> {
        let schedule = Self {
            boundaries,
            rates,
            mode,
            warning_margin,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<(), TariffError> {
        if self.boundaries.is_empty() {
            return Err(TariffError::NoBoundaries);
        }
        let mut prev = 0.0;
        for &b in &self.boundaries {
            if !positive_finite(b) || b <= prev || b > MAX_UNITS {
                return Err(TariffError::BadBoundaries);
            }
            prev = b;
        }
        if self.rates.len() != self.boundaries.len() + 1 {
            return Err(TariffError::RateCountMismatch {
                rates: self.rates.len(),
                boundaries: self.boundaries.len(),
            });
        }
        if self.rates.windows(2).any(|pair| pair[1] <= pair[0]) {
            return Err(TariffError::RatesNotAscending);
        }
        if !positive_finite(self.warning_margin) || self.warning_margin >= 1.0 {
            return Err(TariffError::BadWarningMargin(self.warning_margin));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, TariffError> {
        let schedule: Self = serde_json::from_slice(bytes)?;
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn to_json(&self) -> Result<String, TariffError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn boundaries_milli(&self) -> Vec<i128> {
        self.boundaries.iter().map(|&b| to_milli_lossy(b)).collect()
    }
}

/// Demand-response signal for a cumulative consumption figure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DrStatus {
    Normal,
    /// Within the warning margin of the named (not yet crossed) boundary.
    Warning { boundary: f64 },
    /// Past the last boundary of the schedule.
    Crossed { boundary: f64 },
}

impl DrStatus {
    /// Wire encoding: 0 normal, 1 warning, 2 crossed.
    pub fn flag(&self) -> u8 {
        match self {
            Self::Normal => 0,
            Self::Warning { .. } => 1,
            Self::Crossed { .. } => 2,
        }
    }
}

impl fmt::Display for DrStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Normal => write!(f, "normal"),
            Self::Warning { boundary } => write!(f, "warning({boundary})"),
            Self::Crossed { boundary } => write!(f, "crossed({boundary})"),
        }
    }
}

/// One block's portion of an itemized bill.
#[derive(Debug, Clone, PartialEq)]
pub struct BillLine {
    pub block_start: f64,
    /// `None` for the open-ended last block.
    pub block_end: Option<f64>,
    pub units: f64,
    pub rate: Money,
    pub charge: Money,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bill {
    pub lines: Vec<BillLine>,
    pub total: Money,
}

fn to_milli(units: f64) -> Result<i128, TariffError> {
    if !units.is_finite() || units < 0.0 {
        return Err(TariffError::InvalidUnits(units));
    }
    if units > MAX_UNITS {
        return Err(TariffError::UnitsTooLarge(units));
    }
    Ok(to_milli_lossy(units))
}

fn to_milli_lossy(units: f64) -> i128 {
    (units * MILLI_PER_UNIT as f64).round() as i128
}

/// Rounds milli-minor-units to minor units, half away from zero.
fn milli_minor_to_money(milli_minor: i128) -> Money {
    let half = MILLI_PER_UNIT / 2;
    let rounded = if milli_minor >= 0 {
        (milli_minor + half) / MILLI_PER_UNIT
    } else {
        (milli_minor - half) / MILLI_PER_UNIT
    };
    Money::from_minor(rounded as i64)
}

/// Prices a period's consumption against a schedule, itemized per block.
pub fn bill_itemized(units: f64, schedule: &TariffSchedule) -> Result<Bill, TariffError> {
    schedule.validate()?;
    let units_milli = to_milli(units)?;
    let boundaries = schedule.boundaries_milli();

    let mut lines = Vec::new();
    match schedule.mode {
        BillingMode::Telescopic => {
            let mut consumed: i128 = 0;
            for (idx, rate) in schedule.rates.iter().enumerate() {
                let block_start = consumed;
                let block_end = boundaries.get(idx).copied();
                let upper = block_end.unwrap_or(units_milli).min(units_milli);
                let portion = (upper - block_start).max(0);
                let include = portion > 0 || (idx == 0 && units_milli == 0);
                if include {
                    lines.push(BillLine {
                        block_start: block_start as f64 / MILLI_PER_UNIT as f64,
                        block_end: schedule.boundaries.get(idx).copied(),
                        units: portion as f64 / MILLI_PER_UNIT as f64,
                        rate: *rate,
                        charge: milli_minor_to_money(portion * i128::from(rate.minor())),
                    });
                }
                consumed = block_end.unwrap_or(units_milli).max(block_start);
                if consumed >= units_milli {
                    break;
                }
            }
        }
        BillingMode::FlatSlab => {
            // Blocks are half-open: a consumption exactly on a boundary has
            // entered the next block.
            let idx = boundaries
                .iter()
                .position(|&b| units_milli < b)
                .unwrap_or(boundaries.len());
            let rate = schedule.rates[idx];
            lines.push(BillLine {
                block_start: if idx == 0 {
                    0.0
                } else {
                    schedule.boundaries[idx - 1]
                },
                block_end: schedule.boundaries.get(idx).copied(),
                units,
                rate,
                charge: milli_minor_to_money(units_milli * i128::from(rate.minor())),
            });
        }
    }
    let total = Money::from_minor(lines.iter().map(|l| l.charge.minor()).sum());
    Ok(Bill { lines, total })
}

/// Total price for a period's consumption.
pub fn bill(units: f64, schedule: &TariffSchedule) -> Result<Money, TariffError> {
    Ok(bill_itemized(units, schedule)?.total)
}

/// Classifies cumulative consumption against the schedule's boundaries.
///
/// The nearest boundary strictly above the consumption drives the result:
/// none left means the last boundary is crossed; within the warning margin
/// of it means a warning; otherwise normal.
pub fn dr_status(cumulative_units: f64, schedule: &TariffSchedule) -> Result<DrStatus, TariffError> {
    schedule.validate()?;
    let units_milli = to_milli(cumulative_units)?;
    let boundaries = schedule.boundaries_milli();
    match boundaries.iter().position(|&b| b > units_milli) {
        None => Ok(DrStatus::Crossed {
            boundary: *schedule.boundaries.last().expect("validated non-empty"),
        }),
        Some(idx) => {
            let warn_from =
                (boundaries[idx] as f64 * (1.0 - schedule.warning_margin)).round() as i128;
            if units_milli >= warn_from {
                Ok(DrStatus::Warning {
                    boundary: schedule.boundaries[idx],
                })
            } else {
                Ok(DrStatus::Normal)
            }
        }
    }
}
