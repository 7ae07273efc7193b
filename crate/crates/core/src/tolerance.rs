//! Numerical tolerances shared across the crate.
//!
//! Statistical tolerances (sigma multiples, chi-square significance) are not
//! here; they belong to each experiment's configuration.

/// Algebraic identities: normalization, unitarity, round trips.
pub const ALGEBRAIC: f64 = 1e-12;

/// A branch density within this distance of 0 or 1 counts as absorbed.
pub const ABSORPTION: f64 = 1e-9;

/// Amplitudes with modulus at or below this are treated as zero.
pub const ZERO_AMPLITUDE: f64 = 1e-12;

/// Largest dense amplitude vector the state type will allocate.
pub const MAX_AMPLITUDES: usize = 1 << 24;
