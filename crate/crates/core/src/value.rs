use serde::{Deserialize, Serialize};

/// Declared kind of a node's values. All values are stored as `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    #[default]
    Real,
    Binary,
    Integer,
}

impl ValueKind {
    pub fn admits(self, v: f64) -> bool {
        match self {
            ValueKind::Real => !v.is_nan(),
            ValueKind::Binary => v == 0.0 || v == 1.0,
            ValueKind::Integer => v.is_finite() && v.fract() == 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Real => "real",
            ValueKind::Binary => "binary",
            ValueKind::Integer => "integer",
        }
    }
}
