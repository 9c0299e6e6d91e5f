use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error: missing column `{column}`")]
    MissingColumn { column: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column `{column}`: cannot read `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("vocabulary error: `{value}` is not one of {allowed:?}")]
    Vocabulary { value: String, allowed: Vec<String> },

    #[error("invalid label value `{0}`; expected -1 or +1")]
    InvalidLabel(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("{n} features exceeds the exact Shapley limit of {max_n}; use lime_explain for wide inputs")]
    TooManyFeatures { n: usize, max_n: usize },

    #[error("degenerate design matrix: ridge system stayed singular after {attempts} escalations")]
    DegenerateDesign { attempts: usize },

    #[error("optimization error: {0}")]
    Optimization(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing artifact {path}: run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Fails with a contract error unless `got == want`.
pub(crate) fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "{what}: dimension {got} does not match expected {want}"
        )))
    }
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::contract(format!(
            "{what}: non-finite value {} at index {i}",
            values[i]
        ))),
    }
}
