//! Session service, report generation and CLI for the topology optimization
//! agent pipeline.

pub mod cli;
pub mod http;
pub mod report;
pub mod session;
