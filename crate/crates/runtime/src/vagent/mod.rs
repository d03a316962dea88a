//! Virtualization agents: kernel packages, repositories and the request
//! pipeline that serves them.

pub mod backend;
pub mod library;
pub mod package;
pub mod pipeline;
pub mod repository;

pub use backend::{Backend, BackendKind};
pub use library::{library, KernelFn, Staged};
pub use package::{HaPackage, KernelManifest, ModuleDescriptor};
pub use pipeline::{parent_address, AgentHandle, MetricsSnapshot, TransactionChain};
pub use repository::{KernelRepository, RegisteredKernel};
