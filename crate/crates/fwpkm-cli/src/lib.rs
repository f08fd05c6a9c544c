//! Command implementations for the fast-weight product-key memory CLI.
//!
//! The binary in `main.rs` is a thin argument layer over this library so
//! the config and probe parsers stay directly testable and fuzzable.

pub mod commands;
pub mod config_file;
pub mod output;
pub mod probes;

/// Process exit codes shared by all subcommands.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
}
