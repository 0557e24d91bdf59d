//! Event-driven frame sampling, Top-K tube token selection, affective
//! reasoning metrics and instruction-data generation for video MLLMs.

pub mod client;
pub mod config;
pub mod error;
pub mod flow;
pub mod instructgen;
mod kernel;
pub mod metrics;
pub mod sampler;
pub mod tensorio;
pub mod tubes;
pub mod viz;

pub use error::{Error, Result};
