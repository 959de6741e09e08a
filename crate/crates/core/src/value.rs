use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCode {
    #[serde(rename = "#VALUE!")]
    Value,
    #[serde(rename = "#DIV/0!")]
    Div0,
    #[serde(rename = "#N/A")]
    NA,
    #[serde(rename = "#REF!")]
    Ref,
    #[serde(rename = "#CYCLE!")]
    Cycle,
}

impl ErrorCode {
    pub fn code(self) -> &'static str {
        match self {
            ErrorCode::Value => "#VALUE!",
            ErrorCode::Div0 => "#DIV/0!",
            ErrorCode::NA => "#N/A",
            ErrorCode::Ref => "#REF!",
            ErrorCode::Cycle => "#CYCLE!",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Index of a window store inside one engine instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowId(pub u32);

/// Cell value. `Number` always holds a finite value other than `-0.0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Value {
    Number(f64),
    Text(String),
    Bool(bool),
    #[default]
    Blank,
    Error(ErrorCode),
    Window(WindowId),
}

impl Value {
    /// Wraps an arithmetic result: non-finite results become `#VALUE!`.
    pub fn number(n: f64) -> Value {
        if n.is_finite() {
            Value::Number(if n == 0.0 { 0.0 } else { n })
        } else {
            Value::Error(ErrorCode::Value)
        }
    }

    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Value::Error(_))
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }
}

impl From<f64> for Value {
    fn from(n: f64) -> Self {
        Value::number(n)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<ErrorCode> for Value {
    fn from(e: ErrorCode) -> Self {
        Value::Error(e)
    }
}

/// Shortest decimal text that round-trips to the same double, never in
/// exponent notation. Negative zero prints as `0`.
pub fn format_number(n: f64) -> String {
    if n == 0.0 {
        "0".to_string()
    } else {
        format!("{n}")
    }
}

/// Output rendering: numbers in shortest form, `TRUE`/`FALSE`, error codes
/// verbatim, blank as the empty string.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(n) => f.write_str(&format_number(*n)),
            Value::Text(s) => f.write_str(s),
            Value::Bool(true) => f.write_str("TRUE"),
            Value::Bool(false) => f.write_str("FALSE"),
            Value::Blank => Ok(()),
            Value::Error(e) => f.write_str(e.code()),
            Value::Window(_) => f.write_str(ErrorCode::Value.code()),
        }
    }
}
