//! Command-line tool and HTTP job service for the sketchforge engine.

pub mod cli;
pub mod config;
pub mod error;
pub mod ops;
pub mod server;
pub mod service;
pub mod store;
