//! Core vocabulary shared by the HALO runtime, agents and tools.

pub mod config;
pub mod error;
pub mod ipc;
pub mod object;
pub mod spsc;
pub mod types;

pub use config::{parse_config, resolve_alias, HaloConfig, Launch, PlatformEntry};
pub use error::{HaloError, Result};
pub use object::{ArgPayload, Argument, ComputeObject};
pub use types::{
    ChildRank, KernelAttributes, MpixType, ParentRank, Scalar, StatusCode, TimingRecord, ANY_TAG,
};
