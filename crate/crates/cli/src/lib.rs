//! Client library behind the `sonoma` command and helpers shared by the
//! daemon launchers.

pub mod client;
pub mod commands;
pub mod daemon;

use sonoma_core::{Error, ErrorCode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARAM: i32 = 2;
pub const EXIT_AUTH: i32 = 3;
pub const EXIT_MEASUREMENT: i32 = 4;
pub const EXIT_TIMEOUT: i32 = 5;

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    use ErrorCode::*;
    match e.code {
        ParamError | UnsupportedFormat | CapabilityMissing | UnknownNode | UnknownAddress | UnknownSession
        | UnknownProcess | UnknownTask | SecurityRejected => EXIT_PARAM,
        AuthFailed | Quota | AsyncForbidden => EXIT_AUTH,
        Timeout => EXIT_TIMEOUT,
        NoRoute | Busy | NotReady | NodeUnavailable | EstimationFailed | DuplicateKey | IoError | AgentError
        | Internal => EXIT_MEASUREMENT,
    }
}
