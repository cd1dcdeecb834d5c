//! Worst-case delay analysis and selective Credit-Based Shaper deployment
//! for Ethernet/TSN networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`rational`] exact scalars,
//! * [`curves`] piecewise-linear min-plus curves,
//! * [`model`] the network configuration and its document format,
//! * [`nc`] the network-calculus engine (fixed-point TFA with line shaping),
//! * [`verify`] schedulability verdicts,
//! * [`deploy`] the partial CBS placement heuristic and the full-CBS baseline,
//! * [`simcheck`] a packet-level simulator used as an independent oracle.

#![allow(clippy::result_large_err, clippy::large_enum_variant)]

pub mod curves;
pub mod deploy;
pub mod model;
pub mod nc;
pub mod rational;
pub mod simcheck;
pub mod verify;

pub use curves::{Deviation, PwlCurve};
pub use model::{load_configuration, CbsAssignment, ConfigError, Flow, FlowId, NetworkConfiguration, PortId};
pub use rational::Q;
