//! Command implementations behind the `modah` binary.

pub mod bench;
pub mod eval;
pub mod exit;
pub mod fit;
pub mod manifest;
pub mod simulate;
pub mod snr;
