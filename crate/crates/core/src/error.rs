use thiserror::Error;

use crate::types::StatusCode;

pub type Result<T, E = HaloError> = std::result::Result<T, E>;

/// Failure of a HALO operation. Every variant maps onto exactly one
/// [`StatusCode`] so results can cross process boundaries as a single byte.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum HaloError {
    #[error("no resource: {0}")]
    NoResource(String),
    #[error("bad handle: {0:#x}")]
    BadHandle(u64),
    #[error("bad argument: {0}")]
    BadArgument(String),
    #[error("serialization: {0}")]
    Serialization(String),
    #[error("timed out")]
    Timeout,
    #[error("kernel fault: {0}")]
    KernelFault(String),
    #[error("context finalized")]
    Finalized,
}

impl HaloError {
    pub fn status(&self) -> StatusCode {
        match self {
            HaloError::NoResource(_) => StatusCode::ErrNoResource,
            HaloError::BadHandle(_) => StatusCode::ErrBadHandle,
            HaloError::BadArgument(_) => StatusCode::ErrBadArgument,
            HaloError::Serialization(_) => StatusCode::ErrSerialization,
            HaloError::Timeout => StatusCode::ErrTimeout,
            HaloError::KernelFault(_) => StatusCode::ErrKernelFault,
            HaloError::Finalized => StatusCode::ErrFinalized,
        }
    }

    /// Rebuilds an error from a status received over the wire. Returns `None`
    /// for the success-class codes.
    pub fn from_status(status: StatusCode, detail: impl Into<String>) -> Option<HaloError> {
        let detail = detail.into();
        Some(match status {
            StatusCode::Ok | StatusCode::FailsafeExecuted => return None,
            StatusCode::ErrNoResource => HaloError::NoResource(detail),
            StatusCode::ErrBadHandle => HaloError::BadHandle(0),
            StatusCode::ErrBadArgument => HaloError::BadArgument(detail),
            StatusCode::ErrSerialization => HaloError::Serialization(detail),
            StatusCode::ErrTimeout => HaloError::Timeout,
            StatusCode::ErrKernelFault => HaloError::KernelFault(detail),
            StatusCode::ErrFinalized => HaloError::Finalized,
        })
    }

    pub(crate) fn ser(msg: impl Into<String>) -> HaloError {
        HaloError::Serialization(msg.into())
    }
}

impl From<std::io::Error> for HaloError {
    fn from(e: std::io::Error) -> Self {
        HaloError::NoResource(format!("io: {e}"))
    }
}
