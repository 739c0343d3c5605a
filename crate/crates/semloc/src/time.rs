//! Integer-nanosecond timestamps.
//!
//! All synchronization arithmetic is exact; floating-point time only appears
//! at the TUM-format boundary.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Sub};

/// Nanoseconds since epoch. Non-negative by construction.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn from_nanos(ns: i64) -> Self {
        assert!(ns >= 0, "timestamp must be non-negative, got {ns}");
        Timestamp(ns)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Self::from_nanos((secs * 1e9).round() as i64)
    }

    pub fn as_nanos(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    /// TUM stamp field: decimal seconds with 9 fractional digits.
    pub fn to_tum_string(self) -> String {
        format!("{}.{:09}", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

impl Sub for Timestamp {
    type Output = i64;

    /// Signed duration in nanoseconds.
    fn sub(self, rhs: Timestamp) -> i64 {
        self.0 - rhs.0
    }
}

impl Add<i64> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: i64) -> Timestamp {
        Timestamp::from_nanos(self.0 + rhs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subtraction_is_signed() {
        let a = Timestamp::from_nanos(100);
        let b = Timestamp::from_nanos(250);
        assert_eq!(b - a, 150);
        assert_eq!(a - b, -150);
    }

    #[test]
    fn tum_string_pads_fractional_digits() {
        let t = Timestamp::from_nanos(1_500_000_001);
        assert_eq!(t.to_tum_string(), "1.500000001");
        let t = Timestamp::from_nanos(42);
        assert_eq!(t.to_tum_string(), "0.000000042");
    }

    #[test]
    #[should_panic]
    fn negative_rejected() {
        let _ = Timestamp::from_nanos(-1);
    }
}
