//! Command-line driver, scenario simulator and HTTP service for the sax pipeline.

pub mod cli;
pub mod error;
pub mod http;
pub mod llm;
pub mod parking;
pub mod pipeline;
pub mod simulate;
pub mod workspace;

pub use error::ServiceError;
