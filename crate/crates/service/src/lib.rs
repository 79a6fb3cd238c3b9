//! Command-line entry points and the HTTP service for design runs.

pub mod cli;
pub mod http;
pub mod registry;
