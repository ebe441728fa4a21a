//! Process exit codes derived from the error chain.

use modah_core::ErrorKind;

pub const SUCCESS: i32 = 0;
pub const VALIDATION: i32 = 2;
pub const NUMERIC: i32 = 3;
pub const IO: i32 = 4;

/// The first classifiable cause decides; anything unrecognized counts as a
/// validation failure.
pub fn code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<modah_core::Error>() {
            return match e.kind() {
                ErrorKind::Validation => VALIDATION,
                ErrorKind::Numeric => NUMERIC,
                ErrorKind::Io => IO,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return IO;
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if e.is_io_error() { IO } else { VALIDATION };
        }
        if let Some(e) = cause.downcast_ref::<serde_json::Error>() {
            return if e.is_io() { IO } else { VALIDATION };
        }
    }
    VALIDATION
}
