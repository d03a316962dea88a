//! Runtime agent and virtualization agents.
//!
//! An application creates a [`ParentContext`], claims child ranks by
//! function alias and exchanges compute objects with them. The context
//! brings up the virtualization agents named in the configuration, either
//! as threads in the same process or as `halo-vagent` processes.

pub mod runtime;
pub mod vagent;

pub use halo_core::{
    Argument, ChildRank, ComputeObject, HaloConfig, HaloError, KernelAttributes, MpixType, ParentRank, Result,
    Scalar, StatusCode, ANY_TAG,
};
pub use runtime::{
    failsafe, recommend_backend, AgentInfo, Binding, Comm, Failsafe, FinalizeReport, InitOptions, MemRegion,
    ParentContext, Payload, ProtocolStats, Received, RoundRobin, Transport,
};
