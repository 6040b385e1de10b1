//! Small shared validation helpers.

/// Finite and strictly positive; rejects NaN and infinities.
pub(crate) fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Finite and nonnegative; rejects NaN and infinities.
pub(crate) fn nonneg_finite(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}
