//! Simulator for synchronous federated-learning rounds over a TDM passive
//! optical network, comparing a reserved bandwidth slice for training
//! traffic against first-come-first-served upstream sharing.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod planner;
pub mod pon;
pub mod scenario;
pub mod sim;
pub mod traffic;
pub mod uplink;
