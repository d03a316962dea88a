//! The unified compute object: a type-erased RPC payload that bundles a
//! function id, ordered arguments and a tag.
//!
//! Wire layout (little-endian):
//!
//! ```text
//! 0   4  magic "HCO1"
//! 4   1  status code
//! 5   3  reserved (zero)
//! 8   8  function id (0 = the child rank's bound function)
//! 16  8  application id
//! 24  4  tag (i32)
//! 28  4  argument count
//! 32  .. one TLV record per argument:
//!        kind u8 | length u64 | payload[length]
//! ```
//!
//! Argument payloads start with the element count (u64) followed by the
//! variant body: raw element bytes for inline arguments, `region_id, offset,
//! length` (3 × u64) for external buffers, and the 64-bit handle for internal
//! buffers. Records whose kind tag is unknown are skipped using their length.

use crate::error::{HaloError, Result};
use crate::types::{MpixType, Scalar, StatusCode};

const MAGIC: &[u8; 4] = b"HCO1";
const HEADER_LEN: usize = 32;

/// Where an argument's data lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgPayload {
    /// Element bytes carried inside the object itself.
    Inline(Vec<u8>),
    /// PR-managed memory: a window into a content-store allocation.
    External {
        region_id: u64,
        offset: u64,
        length: u64,
    },
    /// Framework-managed memory referenced by handle.
    Internal(u64),
}

/// One ordered argument of a compute object.
///
/// Construction validates that the payload size agrees with
/// `element_size × element_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Argument {
    kind: MpixType,
    element_count: u64,
    payload: ArgPayload,
}

impl Argument {
    pub fn inline(scalar: Scalar, bytes: Vec<u8>) -> Result<Argument> {
        if bytes.len() % scalar.size() != 0 {
            return Err(HaloError::BadArgument(format!(
                "{} inline bytes is not a whole number of {} elements",
                bytes.len(),
                scalar.name()
            )));
        }
        Ok(Argument {
            kind: MpixType::Scalar(scalar),
            element_count: (bytes.len() / scalar.size()) as u64,
            payload: ArgPayload::Inline(bytes),
        })
    }

    pub fn from_f64(values: &[f64]) -> Argument {
        Argument {
            kind: MpixType::F64,
            element_count: values.len() as u64,
            payload: ArgPayload::Inline(bytemuck::cast_slice(values).to_vec()),
        }
    }

    pub fn from_u64(values: &[u64]) -> Argument {
        Argument {
            kind: MpixType::U64,
            element_count: values.len() as u64,
            payload: ArgPayload::Inline(bytemuck::cast_slice(values).to_vec()),
        }
    }

    pub fn external(scalar: Scalar, region_id: u64, offset: u64, length: u64) -> Result<Argument> {
        if length % scalar.size() as u64 != 0 {
            return Err(HaloError::BadArgument(format!(
                "external length {length} is not a whole number of {} elements",
                scalar.name()
            )));
        }
        if region_id == 0 {
            return Err(HaloError::BadArgument("external region id 0".into()));
        }
        Ok(Argument {
            kind: MpixType::ExternalBuffer(scalar),
            element_count: length / scalar.size() as u64,
            payload: ArgPayload::External {
                region_id,
                offset,
                length,
            },
        })
    }

    pub fn internal(scalar: Scalar, handle: u64, element_count: u64) -> Result<Argument> {
        if handle == 0 {
            return Err(HaloError::BadArgument(
                "internal buffer handle must be nonzero".into(),
            ));
        }
        Ok(Argument {
            kind: MpixType::InternalBuffer(scalar),
            element_count,
            payload: ArgPayload::Internal(handle),
        })
    }

    pub fn kind(&self) -> MpixType {
        self.kind
    }

    pub fn scalar(&self) -> Scalar {
        // Construction never produces a COMPUTE_OBJECT argument.
        self.kind.element().expect("argument kinds carry an element type")
    }

    pub fn is_signed(&self) -> bool {
        self.scalar().is_signed()
    }

    pub fn is_float(&self) -> bool {
        self.scalar().is_float()
    }

    pub fn element_size(&self) -> usize {
        self.scalar().size()
    }

    pub fn element_count(&self) -> u64 {
        self.element_count
    }

    pub fn byte_len(&self) -> u64 {
        self.element_count * self.element_size() as u64
    }

    pub fn payload(&self) -> &ArgPayload {
        &self.payload
    }

    pub fn is_internal(&self) -> bool {
        matches!(self.payload, ArgPayload::Internal(_))
    }

    /// Inline data reinterpreted as `f64`, if this is an inline f64 argument.
    pub fn inline_f64(&self) -> Option<Vec<f64>> {
        match (&self.payload, self.scalar()) {
            (ArgPayload::Inline(b), Scalar::F64) => Some(
                b.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn inline_u64(&self) -> Option<Vec<u64>> {
        match (&self.payload, self.scalar()) {
            (ArgPayload::Inline(b), Scalar::U64) => Some(
                b.chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => None,
        }
    }

    fn encoded_payload_len(&self) -> usize {
        8 + match &self.payload {
            ArgPayload::Inline(b) => b.len(),
            ArgPayload::External { .. } => 24,
            ArgPayload::Internal(_) => 8,
        }
    }
}

/// The type-erased RPC payload exchanged between parent ranks and agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputeObject {
    pub function_id: u64,
    pub args: Vec<Argument>,
    pub tag: i32,
    pub status: StatusCode,
    pub app_id: u64,
}

impl Default for ComputeObject {
    fn default() -> Self {
        ComputeObject {
            function_id: 0,
            args: Vec::new(),
            tag: 0,
            status: StatusCode::Ok,
            app_id: 0,
        }
    }
}

impl ComputeObject {
    pub fn new(args: Vec<Argument>) -> ComputeObject {
        ComputeObject {
            args,
            ..ComputeObject::default()
        }
    }

    pub fn with_tag(mut self, tag: i32) -> ComputeObject {
        self.tag = tag;
        self
    }

    pub fn with_function(mut self, function_id: u64) -> ComputeObject {
        self.function_id = function_id;
        self
    }

    /// Any internal-buffer argument makes an invocation stateful.
    pub fn is_stateful(&self) -> bool {
        self.args.iter().any(Argument::is_internal)
    }

    /// Total inline payload bytes; what the framework copies when the object
    /// is placed in the content store.
    pub fn inline_bytes(&self) -> u64 {
        self.args
            .iter()
            .map(|a| match &a.payload {
                ArgPayload::Inline(b) => b.len() as u64,
                _ => 0,
            })
            .sum()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .args
                .iter()
                .map(|a| 9 + a.encoded_payload_len())
                .sum::<usize>()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(self.status.code());
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&self.function_id.to_le_bytes());
        out.extend_from_slice(&self.app_id.to_le_bytes());
        out.extend_from_slice(&self.tag.to_le_bytes());
        out.extend_from_slice(&(self.args.len() as u32).to_le_bytes());
        for a in &self.args {
            out.push(a.kind.code());
            out.extend_from_slice(&(a.encoded_payload_len() as u64).to_le_bytes());
            out.extend_from_slice(&a.element_count.to_le_bytes());
            match &a.payload {
                ArgPayload::Inline(b) => out.extend_from_slice(b),
                ArgPayload::External {
                    region_id,
                    offset,
                    length,
                } => {
                    out.extend_from_slice(&region_id.to_le_bytes());
                    out.extend_from_slice(&offset.to_le_bytes());
                    out.extend_from_slice(&length.to_le_bytes());
                }
                ArgPayload::Internal(h) => out.extend_from_slice(&h.to_le_bytes()),
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<ComputeObject> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(HaloError::ser("compute object magic mismatch"));
        }
        let status = StatusCode::from_code(r.u8()?)
            .ok_or_else(|| HaloError::ser("unknown status code"))?;
        r.take(3)?;
        let function_id = r.u64()?;
        let app_id = r.u64()?;
        let tag = r.u32()? as i32;
        let argc = r.u32()? as usize;
        let mut args = Vec::with_capacity(argc.min(1024));
        for i in 0..argc {
            let code = r.u8()?;
            let len = r.u64()?;
            let len = usize::try_from(len)
                .ok()
                .filter(|l| *l <= r.remaining())
                .ok_or_else(|| HaloError::ser(format!("argument {i}: length exceeds input")))?;
            let body = r.take(len)?;
            let Some(kind) = MpixType::from_code(code) else {
                continue;
            };
            args.push(decode_argument(kind, body).map_err(|e| match e {
                HaloError::Serialization(m) => HaloError::ser(format!("argument {i}: {m}")),
                other => other,
            })?);
        }
        if r.remaining() != 0 {
            return Err(HaloError::ser(format!(
                "{} trailing bytes after compute object",
                r.remaining()
            )));
        }
        Ok(ComputeObject {
            function_id,
            args,
            tag,
            status,
            app_id,
        })
    }
}

fn decode_argument(kind: MpixType, body: &[u8]) -> Result<Argument> {
    let mut r = Reader { buf: body, pos: 0 };
    let element_count = r.u64()?;
    let scalar = kind
        .element()
        .ok_or_else(|| HaloError::ser("nested compute objects are not supported"))?;
    let payload = match kind {
        MpixType::Scalar(_) => {
            let bytes = r.take(r.remaining())?.to_vec();
            if bytes.len() as u64 != element_count * scalar.size() as u64 {
                return Err(HaloError::ser("inline length disagrees with element count"));
            }
            ArgPayload::Inline(bytes)
        }
        MpixType::ExternalBuffer(_) => {
            let region_id = r.u64()?;
            let offset = r.u64()?;
            let length = r.u64()?;
            if length != element_count * scalar.size() as u64 {
                return Err(HaloError::ser("external length disagrees with element count"));
            }
            ArgPayload::External {
                region_id,
                offset,
                length,
            }
        }
        MpixType::InternalBuffer(_) => {
            let h = r.u64()?;
            if h == 0 {
                return Err(HaloError::ser("internal handle 0"));
            }
            ArgPayload::Internal(h)
        }
        MpixType::ComputeObject => unreachable!(),
    };
    if r.remaining() != 0 {
        return Err(HaloError::ser("argument record has trailing bytes"));
    }
    Ok(Argument {
        kind,
        element_count,
        payload,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(HaloError::ser(format!(
                "truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
