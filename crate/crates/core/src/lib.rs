//! Analysis core of the gauntlet web-client privacy testbed.
//!
//! Everything in this crate is a pure function over recorded session
//! archives: the intercepting gateway, the site server and the subject
//! drivers live in `gauntlet-testbed` and only produce the inputs consumed
//! here.
//!
//! - [`flow`]: the captured request/response record shared by every stage.
//! - [`psl`]: eTLD+1 computation from a bundled public-suffix snapshot.
//! - [`filter`]: Adblock-syntax filter list parsing and matching.
//! - [`dom`]: tripwire snapshots, baseline diffs and injection detection.
//! - [`leak`]: PII and browsing-history exfiltration, request attribution.
//! - [`connsec`]: connection-security verdicts.
//! - [`score`]: the multidimensional privacy score and ranking.
//! - [`analysis`]: the end-to-end offline pipeline over a session archive.

pub mod analysis;
pub mod archive;
pub mod body;
pub mod connsec;
pub mod digest;
pub mod dom;
pub mod error;
pub mod filter;
pub mod flow;
pub mod leak;
pub mod profile;
pub mod psl;
pub mod score;
pub mod subject;

pub use error::{Error, Result};

/// Reserved hostname of the tripwire collector. Never resolvable on a real network.
pub const COLLECTOR_HOST: &str = "collector.gauntlet.invalid";
