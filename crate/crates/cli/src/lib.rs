//! Command-line pipeline and completion web service.

pub mod commands;
pub mod service;
