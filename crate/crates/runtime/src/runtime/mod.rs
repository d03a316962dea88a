//! The runtime agent: the parent rank's side of the framework.

pub mod context;
pub mod launch;
pub mod mailbox;
pub mod proactor;
pub mod rr;

pub use context::{
    failsafe, AgentInfo, Binding, Comm, Failsafe, FinalizeReport, MemRegion, ParentContext, Payload, Received,
};
pub use launch::{InitOptions, Transport};
pub use proactor::ProtocolStats;
pub use rr::{recommend_backend, RoundRobin};
