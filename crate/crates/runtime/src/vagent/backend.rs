use std::time::Duration;

use halo_core::{HaloError, Result};
use halo_kernels::Variant;

/// The compute backends an agent can encapsulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    CpuNaive,
    CpuOpt,
    /// Naive kernels plus injected offload and kernel delays.
    SimAccel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backend {
    pub kind: BackendKind,
    pub sim_t2: Duration,
    pub sim_t3: Duration,
}

impl Backend {
    pub const IDS: [&'static str; 3] = ["cpu_naive", "cpu_opt", "sim_accel"];

    pub fn parse(id: &str) -> Result<Backend> {
        let kind = match id {
            "cpu_naive" => BackendKind::CpuNaive,
            "cpu_opt" => BackendKind::CpuOpt,
            "sim_accel" => BackendKind::SimAccel,
            other => {
                return Err(HaloError::BadArgument(format!(
                    "unknown backend {other:?} (expected one of {:?})",
                    Backend::IDS
                )))
            }
        };
        Ok(Backend {
            kind,
            sim_t2: Duration::ZERO,
            sim_t3: Duration::ZERO,
        })
    }

    pub fn with_delays(mut self, t2: Duration, t3: Duration) -> Backend {
        self.sim_t2 = t2;
        self.sim_t3 = t3;
        self
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            BackendKind::CpuNaive => "cpu_naive",
            BackendKind::CpuOpt => "cpu_opt",
            BackendKind::SimAccel => "sim_accel",
        }
    }

    /// Which kernel implementations this backend runs.
    pub fn variant(&self) -> Variant {
        match self.kind {
            BackendKind::CpuOpt => Variant::Opt,
            BackendKind::CpuNaive | BackendKind::SimAccel => Variant::Naive,
        }
    }

    /// Synthetic hardware vendor id.
    pub fn vid(&self) -> u32 {
        match self.kind {
            BackendKind::CpuNaive | BackendKind::CpuOpt => 0x1000,
            BackendKind::SimAccel => 0x2000,
        }
    }

    /// Synthetic hardware product id.
    pub fn pid(&self) -> u32 {
        match self.kind {
            BackendKind::CpuNaive => 1,
            BackendKind::CpuOpt => 2,
            BackendKind::SimAccel => 1,
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}
