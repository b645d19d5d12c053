//! Shared report formatting.

/// 17 significant digits, scientific notation; round-trips every `f64`.
/// Negative zero prints as zero.
pub fn fmt_f64(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}
