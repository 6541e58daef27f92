//! Binary wire frame shared by the in-process bus and the WebSocket bridge.
//!
//! ```text
//! magic "IMTW" (4) | version u8 (1) | topic_len u16 (2) | topic | schema_id u8 (1)
//!   | timestamp_ns u64 (8) | payload_len u32 (4) | payload
//! ```
//!
//! All integers are little-endian. The fixed overhead is 20 bytes.

use bytes::Bytes;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"IMTW";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;
pub const MAX_TOPIC_LEN: usize = 255;

/// Payload schema carried in a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SchemaId {
    Pose = 1,
    JointState = 2,
    PointCloud = 3,
    Event = 4,
    DepthFrame = 5,
    ColorFrame = 6,
    GripperCmd = 7,
    TwinState = 8,
}

impl SchemaId {
    pub const ALL: [SchemaId; 8] = [
        SchemaId::Pose,
        SchemaId::JointState,
        SchemaId::PointCloud,
        SchemaId::Event,
        SchemaId::DepthFrame,
        SchemaId::ColorFrame,
        SchemaId::GripperCmd,
        SchemaId::TwinState,
    ];
}

impl TryFrom<u8> for SchemaId {
    type Error = FrameError;

    fn try_from(v: u8) -> Result<Self, FrameError> {
        match v {
            1..=8 => Ok(Self::ALL[v as usize - 1]),
            other => Err(FrameError::UnknownSchema(other)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("topic is empty")]
    EmptyTopic,
    #[error("topic is {0} bytes, limit is 255")]
    TopicTooLong(usize),
    #[error("topic contains whitespace")]
    TopicWhitespace,
    #[error("topic is not valid UTF-8")]
    TopicEncoding,
    #[error("unknown schema id {0}")]
    UnknownSchema(u8),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("declared length mismatch: {0}")]
    LengthMismatch(String),
}

/// One message on the bus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub topic: String,
    pub schema: SchemaId,
    /// Nanoseconds since session start.
    pub timestamp_ns: u64,
    pub payload: Bytes,
}

pub fn validate_topic(topic: &str) -> Result<(), FrameError> {
    if topic.is_empty() {
        return Err(FrameError::EmptyTopic);
    }
    if topic.len() > MAX_TOPIC_LEN {
        return Err(FrameError::TopicTooLong(topic.len()));
    }
    if topic.chars().any(char::is_whitespace) {
        return Err(FrameError::TopicWhitespace);
    }
    Ok(())
}

impl Envelope {
    pub fn new(
        topic: impl Into<String>,
        schema: SchemaId,
        timestamp_ns: u64,
        payload: impl Into<Bytes>,
    ) -> Result<Self, FrameError> {
        let topic = topic.into();
        validate_topic(&topic)?;
        Ok(Self {
            topic,
            schema,
            timestamp_ns,
            payload: payload.into(),
        })
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.topic.len() + self.payload.len()
    }
}

pub fn encode_frame(e: &Envelope) -> Result<Vec<u8>, FrameError> {
    validate_topic(&e.topic)?;
    if e.payload.len() > u32::MAX as usize {
        return Err(FrameError::LengthMismatch(format!(
            "payload of {} bytes exceeds u32",
            e.payload.len()
        )));
    }
    let mut out = Vec::with_capacity(e.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(e.topic.len() as u16).to_le_bytes());
    out.extend_from_slice(e.topic.as_bytes());
    out.push(e.schema as u8);
    out.extend_from_slice(&e.timestamp_ns.to_le_bytes());
    out.extend_from_slice(&(e.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&e.payload);
    Ok(out)
}

fn need(buf: &[u8], n: usize) -> Result<(), FrameError> {
    if buf.len() < n {
        Err(FrameError::Truncated {
            needed: n,
            available: buf.len(),
        })
    } else {
        Ok(())
    }
}

/// Parses one frame from the front of `buf`; returns the envelope and the unconsumed tail.
pub fn decode_frame(buf: &[u8]) -> Result<(Envelope, &[u8]), FrameError> {
    if buf.len() >= 4 && buf[..4] != MAGIC {
        return Err(FrameError::BadMagic);
    }
    if buf.len() < 4 && !MAGIC.starts_with(buf) {
        return Err(FrameError::BadMagic);
    }
    need(buf, 7)?;
    if buf[4] != VERSION {
        return Err(FrameError::BadVersion(buf[4]));
    }
    let topic_len = u16::from_le_bytes([buf[5], buf[6]]) as usize;
    if topic_len == 0 || topic_len > MAX_TOPIC_LEN {
        return Err(FrameError::LengthMismatch(format!(
            "declared topic length {topic_len} outside 1..=255"
        )));
    }
    let fixed_end = 7 + topic_len + 13;
    need(buf, fixed_end)?;
    let topic = std::str::from_utf8(&buf[7..7 + topic_len]).map_err(|_| FrameError::TopicEncoding)?;
    validate_topic(topic)?;
    let mut at = 7 + topic_len;
    let schema = SchemaId::try_from(buf[at])?;
    at += 1;
    let timestamp_ns = u64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
    at += 8;
    let payload_len = u32::from_le_bytes(buf[at..at + 4].try_into().unwrap()) as usize;
    at += 4;
    need(buf, at + payload_len)?;
    let payload = Bytes::copy_from_slice(&buf[at..at + payload_len]);
    Ok((
        Envelope {
            topic: topic.to_owned(),
            schema,
            timestamp_ns,
            payload,
        },
        &buf[at + payload_len..],
    ))
}

/// Decodes a buffer that must hold exactly one frame.
pub fn decode_exact(buf: &[u8]) -> Result<Envelope, FrameError> {
    let (env, rest) = decode_frame(buf)?;
    if !rest.is_empty() {
        return Err(FrameError::LengthMismatch(format!(
            "{} bytes after declared payload",
            rest.len()
        )));
    }
    Ok(env)
}
