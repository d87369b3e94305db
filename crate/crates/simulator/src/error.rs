use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Core(#[from] stvs_core::Error),
    #[error("non-finite state at t = {t:.6} s ({detail})")]
    NonFinite { t: f64, detail: String, last_good: Vec<f64> },
    #[error("network solve failed at t = {t:.6} s during {context}: {source}")]
    Network {
        t: f64,
        context: String,
        #[source]
        source: stvs_core::Error,
    },
    #[error("invalid simulation setup: {0}")]
    Setup(String),
}

pub type SimResult<T> = std::result::Result<T, SimError>;
