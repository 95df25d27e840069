use thiserror::Error;

/// Errors raised by the estimation and testing routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a precondition (bad argument, malformed schema, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// The long-format input does not pivot into a balanced panel.
    #[error("unbalanced: {}", describe_missing(.missing))]
    Unbalanced { missing: Vec<(String, String)> },

    /// The demeaned design is singular.
    #[error("rank deficient design: {0}")]
    Rank(String),

    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A threshold search found a rejection region that is not an upper interval.
    #[error("non-monotone rejection region near threshold {at}: {hint}")]
    NonMonotone { at: f64, hint: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn describe_missing(missing: &[(String, String)]) -> String {
    const SHOWN: usize = 10;
    let mut parts: Vec<String> =
        missing.iter().take(SHOWN).map(|(unit, time)| format!("unit {unit} missing time {time}")).collect();
    if missing.len() > SHOWN {
        parts.push(format!("... and {} more", missing.len() - SHOWN));
    }
    parts.join(", ")
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
