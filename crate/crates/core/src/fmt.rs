//! Deterministic 12-significant-digit float formatting for reports.

/// Format with 12 significant digits, exponent notation.
///
/// Identical configs must produce byte-identical reports, so every float
/// that reaches a CSV or a console summary goes through here.
pub fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}
