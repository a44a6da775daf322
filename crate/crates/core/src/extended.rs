//! Extended reals `[-inf, +inf]` as a tagged value.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    NegInf,
    Finite(f64),
    PosInf,
}

impl Extended {
    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(x) => Some(x),
            _ => None,
        }
    }

    /// Lossy conversion for printing and plotting only.
    pub fn to_f64(self) -> f64 {
        match self {
            Extended::NegInf => f64::NEG_INFINITY,
            Extended::Finite(x) => x,
            Extended::PosInf => f64::INFINITY,
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == f64::INFINITY {
            Extended::PosInf
        } else if x == f64::NEG_INFINITY {
            Extended::NegInf
        } else {
            Extended::Finite(x)
        }
    }

    /// Multiply by a positive factor.
    pub fn scale(self, alpha: f64) -> Self {
        debug_assert!(alpha > 0.0);
        match self {
            Extended::Finite(x) => Extended::Finite(alpha * x),
            other => other,
        }
    }

    /// `x < self` for a finite `x`.
    pub fn exceeds(self, x: f64) -> bool {
        match self {
            Extended::NegInf => false,
            Extended::Finite(y) => x < y,
            Extended::PosInf => true,
        }
    }

    /// `x > self` for a finite `x`.
    pub fn below(self, x: f64) -> bool {
        match self {
            Extended::NegInf => true,
            Extended::Finite(y) => x > y,
            Extended::PosInf => false,
        }
    }
}

impl PartialOrd for Extended {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        use Extended::*;
        match (self, other) {
            (NegInf, NegInf) | (PosInf, PosInf) => Some(Ordering::Equal),
            (NegInf, _) | (_, PosInf) => Some(Ordering::Less),
            (_, NegInf) | (PosInf, _) => Some(Ordering::Greater),
            (Finite(a), Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extended::NegInf => write!(f, "-inf"),
            Extended::Finite(x) => write!(f, "{x}"),
            Extended::PosInf => write!(f, "+inf"),
        }
    }
}

// JSON has no infinities: finite values are numbers, the others the strings "-inf"/"+inf".
impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Extended::Finite(x) => s.serialize_f64(*x),
            Extended::NegInf => s.serialize_str("-inf"),
            Extended::PosInf => s.serialize_str("+inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Extended {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(Extended::Finite(x)),
            Repr::Str(s) => match s.as_str() {
                "-inf" => Ok(Extended::NegInf),
                "+inf" | "inf" => Ok(Extended::PosInf),
                other => Err(serde::de::Error::custom(format!(
                    "invalid extended real {other:?}"
                ))),
            },
        }
    }
}
