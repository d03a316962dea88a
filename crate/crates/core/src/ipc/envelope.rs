//! Fixed 48-byte message header of the agent protocol.
//!
//! ```text
//! off size field
//! 0   4    magic "HALO"
//! 4   2    version (1)
//! 6   1    message type
//! 7   1    status code
//! 8   8    transaction id
//! 16  8    application id
//! 24  4    source rank
//! 28  4    destination rank
//! 32  4    tag (i32)
//! 36  4    body length in bytes
//! 40  8    body handle in the application's content store (0 = no body)
//! ```

use crate::error::{HaloError, Result};
use crate::types::StatusCode;

pub const ENVELOPE_LEN: usize = 48;
pub const ENVELOPE_MAGIC: [u8; 4] = *b"HALO";
pub const PROTOCOL_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    ClaimReq = 1,
    ClaimRsp = 2,
    ExecReq = 3,
    ExecRsp = 4,
    BufCreateReq = 5,
    BufCreateRsp = 6,
    FreeReq = 7,
    FreeRsp = 8,
    ManifestQuery = 9,
    ManifestRsp = 10,
    Shutdown = 11,
    MetricsQuery = 12,
    MetricsRsp = 13,
    /// Reply to a frame the receiver could not decode.
    ErrorRsp = 14,
    /// Local wake-up of a proactor blocked in receive; never routed.
    Wake = 15,
}

impl MsgType {
    pub fn from_code(c: u8) -> Option<MsgType> {
        use MsgType::*;
        Some(match c {
            1 => ClaimReq,
            2 => ClaimRsp,
            3 => ExecReq,
            4 => ExecRsp,
            5 => BufCreateReq,
            6 => BufCreateRsp,
            7 => FreeReq,
            8 => FreeRsp,
            9 => ManifestQuery,
            10 => ManifestRsp,
            11 => Shutdown,
            12 => MetricsQuery,
            13 => MetricsRsp,
            14 => ErrorRsp,
            15 => Wake,
            _ => return None,
        })
    }

    pub fn is_request(self) -> bool {
        self.response().is_some()
    }

    /// The response type paired with a request type.
    pub fn response(self) -> Option<MsgType> {
        use MsgType::*;
        match self {
            ClaimReq => Some(ClaimRsp),
            ExecReq => Some(ExecRsp),
            BufCreateReq => Some(BufCreateRsp),
            FreeReq => Some(FreeRsp),
            ManifestQuery => Some(ManifestRsp),
            MetricsQuery => Some(MetricsRsp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Envelope {
    pub msg_type: MsgType,
    pub status: StatusCode,
    pub transaction_id: u64,
    pub app_id: u64,
    pub src: u32,
    pub dst: u32,
    pub tag: i32,
    pub body_len: u32,
    pub body: u64,
}

impl Envelope {
    pub fn new(msg_type: MsgType, transaction_id: u64, app_id: u64) -> Envelope {
        Envelope {
            msg_type,
            status: StatusCode::Ok,
            transaction_id,
            app_id,
            src: 0,
            dst: 0,
            tag: 0,
            body_len: 0,
            body: 0,
        }
    }

    /// The response header for this request: same transaction, ranks swapped.
    pub fn reply(&self, status: StatusCode) -> Envelope {
        Envelope {
            msg_type: self.msg_type.response().unwrap_or(MsgType::ErrorRsp),
            status,
            transaction_id: self.transaction_id,
            app_id: self.app_id,
            src: self.dst,
            dst: self.src,
            tag: self.tag,
            body_len: 0,
            body: 0,
        }
    }

    pub fn with_body(mut self, handle: u64, len: usize) -> Envelope {
        self.body = handle;
        self.body_len = len as u32;
        self
    }

    pub fn encode(&self) -> [u8; ENVELOPE_LEN] {
        let mut b = [0u8; ENVELOPE_LEN];
        b[0..4].copy_from_slice(&ENVELOPE_MAGIC);
        b[4..6].copy_from_slice(&PROTOCOL_VERSION.to_le_bytes());
        b[6] = self.msg_type as u8;
        b[7] = self.status.code();
        b[8..16].copy_from_slice(&self.transaction_id.to_le_bytes());
        b[16..24].copy_from_slice(&self.app_id.to_le_bytes());
        b[24..28].copy_from_slice(&self.src.to_le_bytes());
        b[28..32].copy_from_slice(&self.dst.to_le_bytes());
        b[32..36].copy_from_slice(&self.tag.to_le_bytes());
        b[36..40].copy_from_slice(&self.body_len.to_le_bytes());
        b[40..48].copy_from_slice(&self.body.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<Envelope> {
        if b.len() != ENVELOPE_LEN {
            return Err(HaloError::Serialization(format!(
                "frame is {} bytes, expected {ENVELOPE_LEN}",
                b.len()
            )));
        }
        if b[0..4] != ENVELOPE_MAGIC {
            return Err(HaloError::Serialization("bad envelope magic".into()));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != PROTOCOL_VERSION {
            return Err(HaloError::Serialization(format!(
                "unsupported protocol version {version}"
            )));
        }
        let msg_type = MsgType::from_code(b[6])
            .ok_or_else(|| HaloError::Serialization(format!("unknown message type {}", b[6])))?;
        let status = StatusCode::from_code(b[7])
            .ok_or_else(|| HaloError::Serialization(format!("unknown status {}", b[7])))?;
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        Ok(Envelope {
            msg_type,
            status,
            transaction_id: u64_at(8),
            app_id: u64_at(16),
            src: u32_at(24),
            dst: u32_at(28),
            tag: u32_at(32) as i32,
            body_len: u32_at(36),
            body: u64_at(40),
        })
    }
}
