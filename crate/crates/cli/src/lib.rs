//! Command-line front end: benchmark runs and the live session server.

pub mod args;
pub mod server;
