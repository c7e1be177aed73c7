//! Live side of the gauntlet testbed: the intercepting gateway, the local
//! test-site server, subject drivers and the run orchestrator.

pub mod ca;
pub mod config;
pub mod error;
pub mod gateway;
pub mod http1;
pub mod orchestrator;
pub mod site_server;
pub mod subjects;
pub mod tls;

pub use error::{Error, Result};
