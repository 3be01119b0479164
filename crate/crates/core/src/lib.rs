//! Aggregation levels for location traces, re-identification attacks against
//! them, and task-based utility metrics, combined into an empirical
//! risk-utility curve.

pub mod aggregate;
pub mod config;
pub mod curve;
pub mod error;
pub mod io;
pub mod model;
pub mod risk;
pub mod seeding;
pub mod synth;
pub mod utility;

pub use error::{Error, Result};
