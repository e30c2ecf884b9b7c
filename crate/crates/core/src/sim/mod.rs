//! Deterministic discrete-event simulation of an edge cluster.
//!
//! Nodes are single FIFO servers whose speed follows [`ExecModel`]. Requests
//! run their partitions as a chain of stage tasks, each placed by the
//! [`Scheduler`](crate::scheduler::Scheduler). Node load is the busy fraction
//! of the trailing second; monitor samples are taken once per simulated
//! second over the trailing 100 ms.

mod engine;
mod monitor;
mod profile;
mod scenario;

pub use engine::{ActiveTask, EventKind, SAMPLE_WINDOW_MS, SimOutput, Simulation, TraceEntry, run_scenario};
pub use monitor::{NodeRuntime, ResourceSample, monitor_sample};
pub use profile::{ExecModel, NodeProfile, ProfileName, exec_time};
pub use scenario::{Arrival, MembershipAction, MembershipEvent, NetworkModel, NodeSpec, Scenario, Strategy, Workload};
