use std::fmt;

/// One precise problem found while validating input data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    /// Dotted path to the offending field, e.g. `faults[2].bus`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation failed: {}", join_issues(.0))]
    Validation(Vec<Issue>),

    #[error("network matrix is singular near bus {bus} ({detail})")]
    SingularNetwork { bus: u32, detail: String },

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:e})")]
    PowerFlow { iterations: usize, mismatch: f64 },

    #[error("illegal control mode transition {from} -> {to}")]
    IllegalTransition { from: String, to: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation(vec![Issue {
            path: path.into(),
            message: message.into(),
        }])
    }

    pub fn issues(&self) -> &[Issue] {
        match self {
            Error::Validation(v) => v,
            _ => &[],
        }
    }
}

fn join_issues(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(Issue::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
