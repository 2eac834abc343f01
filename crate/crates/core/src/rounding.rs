//! Decimal rounding shared by every module that produces grams.

/// Rounds to one decimal place, half away from zero.
///
/// The value is nudged by a few ulps before rounding so that decimal ties
/// like `0.25` (stored as `0.2499999...`) still round away from zero.
pub fn round_tenths(x: f64) -> f64 {
    round_to(x, 10.0)
}

/// Rounds to two decimal places, half away from zero.
pub fn round_hundredths(x: f64) -> f64 {
    round_to(x, 100.0)
}

fn round_to(x: f64, scale: f64) -> f64 {
    let scaled = x * scale;
    let nudged = scaled + scaled.signum() * scaled.abs() * 4.0 * f64::EPSILON;
    nudged.round() / scale
}

/// Nearest integer, half away from zero.
pub fn round_half_away(x: f64) -> i64 {
    x.round() as i64
}
