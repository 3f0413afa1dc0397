//! Scalar values carried by model variables: numbers or symbolic labels.

use std::cmp::Ordering;
use std::fmt;

/// A single variable value. Numbers cover booleans (0/1), integers, and
/// reals; labels cover symbolic finite-domain values such as the regime
/// sentinel `obs`.
#[derive(Debug, Clone)]
pub enum Value {
    Num(f64),
    Label(String),
}

impl Value {
    pub fn num(x: f64) -> Self {
        Value::Num(x)
    }

    pub fn label(s: impl Into<String>) -> Self {
        Value::Label(s.into())
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Label(_) => None,
        }
    }

    pub fn is_label(&self, s: &str) -> bool {
        matches!(self, Value::Label(l) if l == s)
    }

    /// Truthiness for boolean operators: any nonzero number is true.
    pub fn truthy(&self) -> Option<bool> {
        self.as_num().map(|x| x != 0.0)
    }

    fn norm_bits(x: f64) -> u64 {
        // collapse -0.0 and 0.0 so equality and hashing agree
        if x == 0.0 {
            0.0f64.to_bits()
        } else {
            x.to_bits()
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => Self::norm_bits(*a) == Self::norm_bits(*b),
            (Value::Label(a), Value::Label(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            Value::Num(x) => {
                state.write_u8(0);
                state.write_u64(Self::norm_bits(*x));
            }
            Value::Label(s) => {
                state.write_u8(1);
                s.hash(state);
            }
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => a.total_cmp(b),
            (Value::Num(_), Value::Label(_)) => Ordering::Less,
            (Value::Label(_), Value::Num(_)) => Ordering::Greater,
            (Value::Label(a), Value::Label(b)) => a.cmp(b),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{}", crate::io::fmt_num(*x)),
            Value::Label(s) => write!(f, "{s}"),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<i64> for Value {
    fn from(x: i64) -> Self {
        Value::Num(x as f64)
    }
}
