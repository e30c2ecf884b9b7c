//! Partitioning and scheduling core for layered inference workloads on
//! heterogeneous edge nodes.
//!
//! The crate is `no_std` (it needs `alloc`) and does no IO. It covers:
//!
//! * [`manifest`]: framework-free sequential model descriptions.
//! * [`cost`]: per-layer cost units and their prefix sums.
//! * [`partitioner`]: greedy and capability-weighted contiguous partitioning
//!   with boundary-shift refinement.
//! * [`scheduler`]: weighted-score node selection with execution history and a
//!   placement cache.
//! * [`sim`]: a deterministic discrete-event edge-cluster simulator.
//! * [`metrics`]: aggregation and comparison of run reports.
//!
//! File formats and the command line live in the `edgepart` crate.

#![no_std]

extern crate alloc;

pub mod cost;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod partitioner;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};
