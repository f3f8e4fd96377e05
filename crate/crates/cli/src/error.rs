use std::fmt;

use serde_json::json;

/// A failed run. Schema failures exit with 2, everything else with 1.
#[derive(Debug)]
pub enum Failure {
    Schema {
        field: String,
        message: String,
        line: Option<usize>,
        column: Option<usize>,
    },
    Io {
        context: String,
        message: String,
    },
    Engine {
        context: String,
        source: scmdyn_core::Error,
    },
}

impl Failure {
    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Failure::Schema {
            field: field.into(),
            message: message.into(),
            line: None,
            column: None,
        }
    }

    pub fn io(context: impl Into<String>, e: impl fmt::Display) -> Self {
        Failure::Io {
            context: context.into(),
            message: e.to_string(),
        }
    }

    pub fn engine(context: impl Into<String>) -> impl FnOnce(scmdyn_core::Error) -> Self {
        let context = context.into();
        move |source| Failure::Engine { context, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Schema { .. } => 2,
            _ => 1,
        }
    }

    /// One JSON object for stderr.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Failure::Schema {
                field,
                message,
                line,
                column,
            } => json!({"error": "config_schema", "field": field, "message": message, "line": line, "column": column}),
            Failure::Io { context, message } => json!({"error": "io", "context": context, "message": message}),
            Failure::Engine { context, source } => {
                json!({"error": "engine", "context": context, "message": source.to_string()})
            }
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Schema { field, message, .. } if field.is_empty() => write!(f, "config: {message}"),
            Failure::Schema { field, message, .. } => write!(f, "config field `{field}`: {message}"),
            Failure::Io { context, message } => write!(f, "{context}: {message}"),
            Failure::Engine { context, source } => write!(f, "{context}: {source}"),
        }
    }
}

impl std::error::Error for Failure {}
