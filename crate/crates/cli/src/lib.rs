//! Command-line entry points for sheetstream.

pub mod commands;
pub mod protocol;
pub mod serve;
