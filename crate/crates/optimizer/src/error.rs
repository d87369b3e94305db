use thiserror::Error;

use crate::ipm::SolveStatus;

#[derive(Debug, Error)]
pub enum OptError {
    #[error(transparent)]
    Core(#[from] stvs_core::Error),
    #[error("solver finished with status {status}; refusing to extract tunings ({detail})")]
    NotOptimal { status: SolveStatus, detail: String },
    #[error("grid oracle supports at most {max} devices, scenario has {found}")]
    OracleTooLarge { max: usize, found: usize },
}

pub type OptResult<T> = std::result::Result<T, OptError>;
