//! Command-line entry points and the HTTP prediction service.

pub mod api;
pub mod cli;
pub mod server;
