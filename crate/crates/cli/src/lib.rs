//! Command-line and HTTP front ends for the `benchroute` library.

pub mod commands;
pub mod config;
pub mod service;
