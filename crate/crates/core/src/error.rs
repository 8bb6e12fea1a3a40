use std::fmt;

use serde::{Deserialize, Serialize};

/// Machine-readable error codes shared by every tier.
///
/// They travel over the wire as `SCREAMING_SNAKE_CASE` strings inside
/// `{"error": {"code": ..., "message": ...}}` bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    ParamError,
    NoRoute,
    UnknownAddress,
    CapabilityMissing,
    Busy,
    UnknownTask,
    NotReady,
    AuthFailed,
    UnsupportedFormat,
    UnknownSession,
    UnknownProcess,
    UnknownNode,
    SecurityRejected,
    NodeUnavailable,
    Quota,
    AsyncForbidden,
    EstimationFailed,
    DuplicateKey,
    IoError,
    AgentError,
    Timeout,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::ParamError => "PARAM_ERROR",
            ErrorCode::NoRoute => "NO_ROUTE",
            ErrorCode::UnknownAddress => "UNKNOWN_ADDRESS",
            ErrorCode::CapabilityMissing => "CAPABILITY_MISSING",
            ErrorCode::Busy => "BUSY",
            ErrorCode::UnknownTask => "UNKNOWN_TASK",
            ErrorCode::NotReady => "NOT_READY",
            ErrorCode::AuthFailed => "AUTH_FAILED",
            ErrorCode::UnsupportedFormat => "UNSUPPORTED_FORMAT",
            ErrorCode::UnknownSession => "UNKNOWN_SESSION",
            ErrorCode::UnknownProcess => "UNKNOWN_PROCESS",
            ErrorCode::UnknownNode => "UNKNOWN_NODE",
            ErrorCode::SecurityRejected => "SECURITY_REJECTED",
            ErrorCode::NodeUnavailable => "NODE_UNAVAILABLE",
            ErrorCode::Quota => "QUOTA",
            ErrorCode::AsyncForbidden => "ASYNC_FORBIDDEN",
            ErrorCode::EstimationFailed => "ESTIMATION_FAILED",
            ErrorCode::DuplicateKey => "DUPLICATE_KEY",
            ErrorCode::IoError => "IO_ERROR",
            ErrorCode::AgentError => "AGENT_ERROR",
            ErrorCode::Timeout => "TIMEOUT",
            ErrorCode::Internal => "INTERNAL",
        }
    }

    /// HTTP status used when this code is returned by a server.
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::ParamError | ErrorCode::UnsupportedFormat => 400,
            ErrorCode::AuthFailed => 401,
            ErrorCode::AsyncForbidden | ErrorCode::SecurityRejected => 403,
            ErrorCode::UnknownTask
            | ErrorCode::UnknownSession
            | ErrorCode::UnknownProcess
            | ErrorCode::UnknownNode
            | ErrorCode::UnknownAddress => 404,
            ErrorCode::Busy | ErrorCode::NotReady | ErrorCode::DuplicateKey => 409,
            ErrorCode::CapabilityMissing | ErrorCode::NoRoute | ErrorCode::EstimationFailed => 422,
            ErrorCode::Quota => 429,
            ErrorCode::NodeUnavailable | ErrorCode::AgentError => 503,
            ErrorCode::Timeout => 504,
            ErrorCode::IoError | ErrorCode::Internal => 500,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct Error {
    pub code: ErrorCode,
    pub message: String,
}

impl Error {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn param(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::ParamError, message)
    }

    pub fn io(err: std::io::Error) -> Self {
        Self::new(ErrorCode::IoError, err.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::io(err)
    }
}

/// Body of every error response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: Error,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
