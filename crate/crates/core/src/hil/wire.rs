//! Frame codec: a 4-byte big-endian body length followed by a UTF-8 JSON body.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{HilError, PlatformKind};
use crate::domain::{ControlVector, EgoState, ScenePayload};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_CYCLE_S: f64 = 0.5;
pub const DEFAULT_MAX_FRAME: usize = 8 * 1024 * 1024;
const PREFIX: usize = 4;

/// What the vehicle reports each cycle besides frame index and time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleReport {
    pub ego: EgoState,
    pub route_progress: f64,
    pub scene: ScenePayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Applied,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByeReason {
    Finished,
    Boundary,
    Collision,
    Timeout,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum WireMessage {
    Hello {
        platform: PlatformKind,
        protocol_version: u32,
    },
    Observation {
        frame_index: u64,
        timestamp: f64,
        payload: VehicleReport,
    },
    Control {
        frame_index: u64,
        control: ControlVector,
        duration_s: f64,
    },
    Result {
        frame_index: u64,
        status: ResultStatus,
    },
    Bye {
        reason: ByeReason,
    },
}

impl WireMessage {
    pub fn name(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "HELLO",
            WireMessage::Observation { .. } => "OBSERVATION",
            WireMessage::Control { .. } => "CONTROL",
            WireMessage::Result { .. } => "RESULT",
            WireMessage::Bye { .. } => "BYE",
        }
    }

    pub fn frame_index(&self) -> Option<u64> {
        match self {
            WireMessage::Observation { frame_index, .. }
            | WireMessage::Control { frame_index, .. }
            | WireMessage::Result { frame_index, .. } => Some(*frame_index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeError {
    /// The buffer holds an incomplete frame; at least `needed` bytes in total are required.
    NeedMore { needed: usize },
    TooLarge { len: usize, cap: usize },
    /// A complete frame was given with trailing bytes.
    LengthMismatch { declared: usize, actual: usize },
    Malformed(String),
}

impl std::fmt::Display for DecodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeError::NeedMore { needed } => write!(f, "incomplete frame, need {needed} bytes"),
            DecodeError::TooLarge { len, cap } => write!(f, "frame of {len} bytes exceeds cap {cap}"),
            DecodeError::LengthMismatch { declared, actual } => {
                write!(f, "frame declares {declared} body bytes, got {actual}")
            }
            DecodeError::Malformed(m) => write!(f, "malformed frame: {m}"),
        }
    }
}

impl std::error::Error for DecodeError {}

pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("message serialization is infallible");
    let mut out = Vec::with_capacity(PREFIX + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

fn declared_len(buf: &[u8], cap: usize) -> Result<usize, DecodeError> {
    if buf.len() < PREFIX {
        return Err(DecodeError::NeedMore { needed: PREFIX });
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > cap {
        return Err(DecodeError::TooLarge { len, cap });
    }
    Ok(len)
}

fn parse_body(body: &[u8]) -> Result<WireMessage, DecodeError> {
    serde_json::from_slice(body).map_err(|e| DecodeError::Malformed(e.to_string()))
}

/// Decode the frame at the start of `buf`, returning it with the bytes consumed.
pub fn decode_prefix(buf: &[u8], cap: usize) -> Result<(WireMessage, usize), DecodeError> {
    let len = declared_len(buf, cap)?;
    let total = PREFIX + len;
    if buf.len() < total {
        return Err(DecodeError::NeedMore { needed: total });
    }
    Ok((parse_body(&buf[PREFIX..total])?, total))
}

/// Decode exactly one frame; trailing bytes are a length mismatch.
pub fn decode(buf: &[u8]) -> Result<WireMessage, DecodeError> {
    let len = declared_len(buf, DEFAULT_MAX_FRAME)?;
    let actual = buf.len() - PREFIX;
    if actual < len {
        return Err(DecodeError::NeedMore { needed: PREFIX + len });
    }
    if actual > len {
        return Err(DecodeError::LengthMismatch { declared: len, actual });
    }
    parse_body(&buf[PREFIX..])
}

pub fn write_message<W: Write>(w: &mut W, msg: &WireMessage) -> Result<(), HilError> {
    w.write_all(&encode(msg)).map_err(HilError::from_io)?;
    w.flush().map_err(HilError::from_io)
}

/// Blocking read of one frame.
pub fn read_message<R: Read>(r: &mut R, cap: usize) -> Result<WireMessage, HilError> {
    let mut prefix = [0u8; PREFIX];
    r.read_exact(&mut prefix).map_err(HilError::from_io)?;
    let len = declared_len(&prefix, cap).map_err(HilError::Decode)?;
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(HilError::from_io)?;
    parse_body(&body).map_err(HilError::Decode)
}
