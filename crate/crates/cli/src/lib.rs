//! Library surface of the `fh` command-line tool: dataset CSV I/O,
//! scenario config parsing, and table rendering. The binary in `main.rs`
//! is a thin layer over these modules.

pub mod config;
pub mod ingest;
pub mod render;
