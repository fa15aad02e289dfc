//! `ECS1` sample datagram: 28 bytes, little-endian.
//!
//! ```text
//! 0      4   5    6        8     12          20          28
//! | magic | v | kind | loop_id | seq | timestamp | value |
//! ```

use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::time::TickTime;

pub const SAMPLE_MAGIC: u32 = 0x4543_5331;
pub const SAMPLE_VERSION: u8 = 1;
pub const SAMPLE_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum MessageKind {
    SensorSample = 0,
    ActuatorCmd = 1,
    Setpoint = 2,
}

impl TryFrom<u8> for MessageKind {
    type Error = CodecError;

    fn try_from(v: u8) -> Result<Self, CodecError> {
        match v {
            0 => Ok(MessageKind::SensorSample),
            1 => Ok(MessageKind::ActuatorCmd),
            2 => Ok(MessageKind::Setpoint),
            other => Err(CodecError::BadKind(other)),
        }
    }
}

/// One sensor reading, actuator command or setpoint crossing a channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMessage {
    pub kind: MessageKind,
    pub loop_id: u16,
    pub seq: u32,
    pub timestamp: TickTime,
    pub value: f64,
}

impl SampleMessage {
    pub fn new(kind: MessageKind, loop_id: u16, seq: u32, timestamp: TickTime, value: f64) -> Self {
        SampleMessage {
            kind,
            loop_id,
            seq,
            timestamp,
            value,
        }
    }
}

pub fn encode_sample(msg: &SampleMessage) -> [u8; SAMPLE_LEN] {
    let mut out = [0u8; SAMPLE_LEN];
    out[0..4].copy_from_slice(&SAMPLE_MAGIC.to_le_bytes());
    out[4] = SAMPLE_VERSION;
    out[5] = msg.kind as u8;
    out[6..8].copy_from_slice(&msg.loop_id.to_le_bytes());
    out[8..12].copy_from_slice(&msg.seq.to_le_bytes());
    out[12..20].copy_from_slice(&msg.timestamp.0.to_le_bytes());
    out[20..28].copy_from_slice(&msg.value.to_le_bytes());
    out
}

/// Decodes the first [`SAMPLE_LEN`] bytes of `bytes`.
pub fn decode_sample(bytes: &[u8]) -> Result<SampleMessage, CodecError> {
    if bytes.len() < SAMPLE_LEN {
        return Err(CodecError::ShortRead {
            needed: SAMPLE_LEN,
            got: bytes.len(),
        });
    }
    let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != SAMPLE_MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    if bytes[4] != SAMPLE_VERSION {
        return Err(CodecError::BadVersion(bytes[4]));
    }
    let kind = MessageKind::try_from(bytes[5])?;
    Ok(SampleMessage {
        kind,
        loop_id: u16::from_le_bytes(bytes[6..8].try_into().unwrap()),
        seq: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
        timestamp: TickTime(u64::from_le_bytes(bytes[12..20].try_into().unwrap())),
        value: f64::from_le_bytes(bytes[20..28].try_into().unwrap()),
    })
}
