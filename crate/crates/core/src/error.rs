//! Error type shared by every evaluation module.

use thiserror::Error;

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    /// A trace line could not be decoded.
    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    /// A record decoded but violates a domain invariant.
    #[error("{}field `{field}`: {message}", line_prefix(*.line))]
    Validation {
        line: Option<usize>,
        field: String,
        message: String,
    },

    /// A statistic has no defined value for the given input (empty window, zero norm, ...).
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("insufficient trace: {0}")]
    InsufficientTrace(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("probe failed on feature `{feature}`: {message}")]
    Probe { feature: String, message: String },

    #[error("embedding provider failed on pair {pair}: {message}")]
    Provider { pair: usize, message: String },

    #[error("no evaluable records")]
    NoEvaluableRecords,

    #[error("no line of the trace could be parsed (first error: {0})")]
    Unparseable(String),

    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },
}

fn line_prefix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}: "),
        None => String::new(),
    }
}

impl EvalError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        EvalError::Validation {
            line: None,
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn undefined(message: impl Into<String>) -> Self {
        EvalError::UndefinedStatistic(message.into())
    }

    /// Attach a trace line number to a validation error.
    pub fn at_line(self, line: usize) -> Self {
        match self {
            EvalError::Validation { field, message, .. } => EvalError::Validation {
                line: Some(line),
                field,
                message,
            },
            other => other,
        }
    }
}
