//! Learned graph-network dynamics for cable-driven tensegrity robots.
//!
//! The crate bundles an analytical reference simulator ([`refsim`]), the graph
//! builder ([`graphgen`]), a small reverse-mode neural substrate ([`net`]), the
//! encode-process-decode model ([`gnn`]), multi-step integration
//! ([`integrate`]), training ([`train`]), MPPI control ([`mppi`]) and the error
//! metrics ([`eval`]).

pub mod error;
pub mod eval;
pub mod gnn;
pub mod graphgen;
pub mod integrate;
pub mod mppi;
pub mod net;
pub mod refsim;
pub mod scenario;
pub mod topology;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
