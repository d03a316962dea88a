//! Enumerations, handles and attribute tuples shared by every agent.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{HaloError, Result};

/// Status of a HALO operation. The numeric assignments are frozen; they are
/// what travels in envelope headers and serialized compute objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum StatusCode {
    Ok = 0,
    ErrNoResource = 1,
    ErrBadHandle = 2,
    ErrBadArgument = 3,
    ErrSerialization = 4,
    ErrTimeout = 5,
    ErrKernelFault = 6,
    ErrFinalized = 7,
    FailsafeExecuted = 8,
}

impl StatusCode {
    pub const ALL: [StatusCode; 9] = [
        StatusCode::Ok,
        StatusCode::ErrNoResource,
        StatusCode::ErrBadHandle,
        StatusCode::ErrBadArgument,
        StatusCode::ErrSerialization,
        StatusCode::ErrTimeout,
        StatusCode::ErrKernelFault,
        StatusCode::ErrFinalized,
        StatusCode::FailsafeExecuted,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<StatusCode> {
        StatusCode::ALL.get(code as usize).copied()
    }

    /// `Ok` and `FailsafeExecuted` are the only success-class codes.
    pub fn is_success(self) -> bool {
        matches!(self, StatusCode::Ok | StatusCode::FailsafeExecuted)
    }
}

impl fmt::Display for StatusCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StatusCode::Ok => "OK",
            StatusCode::ErrNoResource => "ERR_NO_RESOURCE",
            StatusCode::ErrBadHandle => "ERR_BAD_HANDLE",
            StatusCode::ErrBadArgument => "ERR_BAD_ARGUMENT",
            StatusCode::ErrSerialization => "ERR_SERIALIZATION",
            StatusCode::ErrTimeout => "ERR_TIMEOUT",
            StatusCode::ErrKernelFault => "ERR_KERNEL_FAULT",
            StatusCode::ErrFinalized => "ERR_FINALIZED",
            StatusCode::FailsafeExecuted => "FAILSAFE_EXECUTED",
        };
        f.write_str(s)
    }
}

/// Element type of a scalar or buffer argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scalar {
    I8,
    I16,
    I32,
    I64,
    U8,
    U16,
    U32,
    U64,
    F32,
    F64,
}

impl Scalar {
    pub const ALL: [Scalar; 10] = [
        Scalar::I8,
        Scalar::I16,
        Scalar::I32,
        Scalar::I64,
        Scalar::U8,
        Scalar::U16,
        Scalar::U32,
        Scalar::U64,
        Scalar::F32,
        Scalar::F64,
    ];

    fn index(self) -> u8 {
        Scalar::ALL.iter().position(|s| *s == self).unwrap() as u8
    }

    pub fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    pub fn is_signed(self) -> bool {
        !matches!(self, Scalar::U8 | Scalar::U16 | Scalar::U32 | Scalar::U64)
    }

    pub fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::I64 | Scalar::U64 | Scalar::F64 => 8,
        }
    }

    /// Inverse of the trait triple. Floats are always signed, so `is_signed`
    /// is ignored when `is_float` is set.
    pub fn from_traits(is_signed: bool, is_float: bool, size: usize) -> Option<Scalar> {
        Some(match (is_float, is_signed, size) {
            (true, _, 4) => Scalar::F32,
            (true, _, 8) => Scalar::F64,
            (false, true, 1) => Scalar::I8,
            (false, true, 2) => Scalar::I16,
            (false, true, 4) => Scalar::I32,
            (false, true, 8) => Scalar::I64,
            (false, false, 1) => Scalar::U8,
            (false, false, 2) => Scalar::U16,
            (false, false, 4) => Scalar::U32,
            (false, false, 8) => Scalar::U64,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Scalar::I8 => "i8",
            Scalar::I16 => "i16",
            Scalar::I32 => "i32",
            Scalar::I64 => "i64",
            Scalar::U8 => "u8",
            Scalar::U16 => "u16",
            Scalar::U32 => "u32",
            Scalar::U64 => "u64",
            Scalar::F32 => "f32",
            Scalar::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Scalar> {
        Scalar::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// The `MPIX_TYPES` enumeration: scalar families, PR-managed (external)
/// buffers, framework-managed (internal) buffers, and compute objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MpixType {
    Scalar(Scalar),
    ExternalBuffer(Scalar),
    InternalBuffer(Scalar),
    ComputeObject,
}

impl MpixType {
    pub const F64: MpixType = MpixType::Scalar(Scalar::F64);
    pub const U64: MpixType = MpixType::Scalar(Scalar::U64);
    pub const COMPUTE_OBJECT: MpixType = MpixType::ComputeObject;

    /// `(is_float, is_signed, element_size)`; buffer variants report their
    /// element type.
    pub fn traits(self) -> Result<(bool, bool, usize)> {
        match self.element() {
            Some(s) => Ok((s.is_float(), s.is_signed(), s.size())),
            None => Err(HaloError::BadArgument(
                "COMPUTE_OBJECT has no element traits".into(),
            )),
        }
    }

    pub fn element(self) -> Option<Scalar> {
        match self {
            MpixType::Scalar(s) | MpixType::ExternalBuffer(s) | MpixType::InternalBuffer(s) => {
                Some(s)
            }
            MpixType::ComputeObject => None,
        }
    }

    /// One-byte wire tag: scalars `0x01..`, external `0x11..`, internal
    /// `0x21..`, compute object `0x30`.
    pub fn code(self) -> u8 {
        match self {
            MpixType::Scalar(s) => 0x01 + s.index(),
            MpixType::ExternalBuffer(s) => 0x11 + s.index(),
            MpixType::InternalBuffer(s) => 0x21 + s.index(),
            MpixType::ComputeObject => 0x30,
        }
    }

    pub fn from_code(code: u8) -> Option<MpixType> {
        let scalar = |base: u8| Scalar::ALL.get(code.wrapping_sub(base) as usize).copied();
        match code {
            0x01..=0x0a => scalar(0x01).map(MpixType::Scalar),
            0x11..=0x1a => scalar(0x11).map(MpixType::ExternalBuffer),
            0x21..=0x2a => scalar(0x21).map(MpixType::InternalBuffer),
            0x30 => Some(MpixType::ComputeObject),
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = MpixType> {
        Scalar::ALL
            .into_iter()
            .flat_map(|s| {
                [
                    MpixType::Scalar(s),
                    MpixType::ExternalBuffer(s),
                    MpixType::InternalBuffer(s),
                ]
            })
            .chain(std::iter::once(MpixType::ComputeObject))
    }
}

/// Opaque child-rank handle. Zero names the framework itself and is never
/// handed out by a successful claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChildRank(pub u64);

impl ChildRank {
    pub const FRAMEWORK: ChildRank = ChildRank(0);
    /// Receive-side wildcard: matches results from any source.
    pub const ANY: ChildRank = ChildRank(u64::MAX);

    pub fn is_framework(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ChildRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cr:{:#x}", self.0)
    }
}

/// Identifier of a parent rank (application process context) within a job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParentRank(pub u32);

impl fmt::Display for ParentRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pr:{}", self.0)
    }
}

/// Receive-side wildcard tag.
pub const ANY_TAG: i32 = i32::MIN;

pub const WILDCARD32: u32 = u32::MAX;
pub const WILDCARD64: u64 = u64::MAX;

/// The eight-field kernel attribute tuple used for kernel lookup. Any field
/// may hold the all-ones wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelAttributes {
    pub vid: u32,
    pub pid: u32,
    pub ss_vid: u32,
    pub ss_pid: u32,
    pub sw_pid: u64,
    pub sw_vid: u64,
    pub sw_fid: u64,
    pub sw_verid: u64,
}

impl Default for KernelAttributes {
    fn default() -> Self {
        KernelAttributes::WILDCARD
    }
}

impl KernelAttributes {
    pub const WILDCARD: KernelAttributes = KernelAttributes {
        vid: WILDCARD32,
        pid: WILDCARD32,
        ss_vid: WILDCARD32,
        ss_pid: WILDCARD32,
        sw_pid: WILDCARD64,
        sw_vid: WILDCARD64,
        sw_fid: WILDCARD64,
        sw_verid: WILDCARD64,
    };

    pub const ENCODED_LEN: usize = 48;

    pub fn with_fid(sw_fid: u64) -> KernelAttributes {
        KernelAttributes {
            sw_fid,
            ..KernelAttributes::WILDCARD
        }
    }

    /// Field-wise: every non-wildcard field of `query` must equal the field of
    /// `self`. Wildcards on either side match anything.
    pub fn matches(&self, query: &KernelAttributes) -> bool {
        fn m32(a: u32, b: u32) -> bool {
            a == WILDCARD32 || b == WILDCARD32 || a == b
        }
        fn m64(a: u64, b: u64) -> bool {
            a == WILDCARD64 || b == WILDCARD64 || a == b
        }
        m32(self.vid, query.vid)
            && m32(self.pid, query.pid)
            && m32(self.ss_vid, query.ss_vid)
            && m32(self.ss_pid, query.ss_pid)
            && m64(self.sw_pid, query.sw_pid)
            && m64(self.sw_vid, query.sw_vid)
            && m64(self.sw_fid, query.sw_fid)
            && m64(self.sw_verid, query.sw_verid)
    }

    /// Returns `self` with every non-wildcard field of `overrides` applied.
    pub fn overridden_by(&self, overrides: &KernelAttributes) -> KernelAttributes {
        fn o32(base: u32, o: u32) -> u32 {
            if o == WILDCARD32 {
                base
            } else {
                o
            }
        }
        fn o64(base: u64, o: u64) -> u64 {
            if o == WILDCARD64 {
                base
            } else {
                o
            }
        }
        KernelAttributes {
            vid: o32(self.vid, overrides.vid),
            pid: o32(self.pid, overrides.pid),
            ss_vid: o32(self.ss_vid, overrides.ss_vid),
            ss_pid: o32(self.ss_pid, overrides.ss_pid),
            sw_pid: o64(self.sw_pid, overrides.sw_pid),
            sw_vid: o64(self.sw_vid, overrides.sw_vid),
            sw_fid: o64(self.sw_fid, overrides.sw_fid),
            sw_verid: o64(self.sw_verid, overrides.sw_verid),
        }
    }

    pub fn encode(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0u8; Self::ENCODED_LEN];
        out[0..4].copy_from_slice(&self.vid.to_le_bytes());
        out[4..8].copy_from_slice(&self.pid.to_le_bytes());
        out[8..12].copy_from_slice(&self.ss_vid.to_le_bytes());
        out[12..16].copy_from_slice(&self.ss_pid.to_le_bytes());
        out[16..24].copy_from_slice(&self.sw_pid.to_le_bytes());
        out[24..32].copy_from_slice(&self.sw_vid.to_le_bytes());
        out[32..40].copy_from_slice(&self.sw_fid.to_le_bytes());
        out[40..48].copy_from_slice(&self.sw_verid.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<KernelAttributes> {
        if bytes.len() != Self::ENCODED_LEN {
            return Err(HaloError::ser(format!(
                "attribute record is {} bytes, expected {}",
                bytes.len(),
                Self::ENCODED_LEN
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        Ok(KernelAttributes {
            vid: u32_at(0),
            pid: u32_at(4),
            ss_vid: u32_at(8),
            ss_pid: u32_at(12),
            sw_pid: u64_at(16),
            sw_vid: u64_at(24),
            sw_fid: u64_at(32),
            sw_verid: u64_at(40),
        })
    }
}

/// Per-invocation time decomposition, in seconds.
///
/// `t1` is framework overhead, `t2` the offload (staging) time, `t3` the
/// kernel proper and `t4` the host-observed round trip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
}

impl TimingRecord {
    /// Derives `t1` as the round trip minus agent-reported offload and kernel
    /// time. `t1` is clamped at zero; `t4` is then `t1 + t2 + t3`.
    pub fn from_round_trip(round_trip: Duration, t2: Duration, t3: Duration) -> TimingRecord {
        let t2 = t2.as_secs_f64();
        let t3 = t3.as_secs_f64();
        let t1 = (round_trip.as_secs_f64() - t2 - t3).max(0.0);
        TimingRecord {
            t1,
            t2,
            t3,
            t4: t1 + t2 + t3,
        }
    }
}
