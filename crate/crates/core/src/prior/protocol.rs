//! USDP framing: `"USDP" | version u8 | type u8 | payload_len u32 LE | payload`.
//!
//! | type | payload                                 |
//! |------|-----------------------------------------|
//! | 1    | sigma f64 LE, L u32 LE, L x f32 LE      |
//! | 2    | L u32 LE, L x f32 LE                    |
//! | 3    | UTF-8 error message                     |

use std::io::{Read, Write};

use super::PriorError;

pub const MAGIC: [u8; 4] = *b"USDP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Upper bound on accepted payloads (1 GiB).
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Request = 1,
    Response = 2,
    Error = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request { sigma: f64, samples: Vec<f32> },
    Response { score: Vec<f32> },
    Error(String),
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Request { .. } => MessageType::Request,
            Message::Response { .. } => MessageType::Response,
            Message::Error(_) => MessageType::Error,
        }
    }
}

fn protocol(offset: usize, msg: impl Into<String>) -> PriorError {
    PriorError::Protocol {
        offset,
        msg: msg.into(),
    }
}

fn push_f32s(out: &mut Vec<u8>, v: &[f32]) {
    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut payload = Vec::new();
    match msg {
        Message::Request { sigma, samples } => {
            payload.extend_from_slice(&sigma.to_le_bytes());
            push_f32s(&mut payload, samples);
        }
        Message::Response { score } => push_f32s(&mut payload, score),
        Message::Error(text) => payload.extend_from_slice(text.as_bytes()),
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.kind() as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Validates a header and returns the message type and payload length.
/// Offsets in errors are relative to the start of the frame.
pub fn decode_header(h: &[u8; HEADER_LEN]) -> Result<(MessageType, u32), PriorError> {
    if h[..4] != MAGIC {
        let at = h.iter().zip(&MAGIC).position(|(a, b)| a != b).unwrap_or(0);
        return Err(protocol(at, format!("bad magic {:02x?}", &h[..4])));
    }
    if h[4] != VERSION {
        return Err(protocol(4, format!("unsupported version {}", h[4])));
    }
    let kind = match h[5] {
        1 => MessageType::Request,
        2 => MessageType::Response,
        3 => MessageType::Error,
        t => return Err(protocol(5, format!("unknown message type {t}"))),
    };
    let len = u32::from_le_bytes([h[6], h[7], h[8], h[9]]);
    if len > MAX_PAYLOAD {
        return Err(protocol(6, format!("payload length {len} exceeds limit")));
    }
    Ok((kind, len))
}

fn read_f32s(p: &[u8], at: usize) -> Result<Vec<f32>, PriorError> {
    let base = HEADER_LEN + at;
    let head = p
        .get(at..at + 4)
        .ok_or_else(|| protocol(base, "payload too short for sample count"))?;
    let n = u32::from_le_bytes(head.try_into().unwrap()) as usize;
    let body = &p[at + 4..];
    if body.len() != 4 * n {
        return Err(protocol(
            base + 4,
            format!("declared {n} samples but {} payload bytes follow", body.len()),
        ));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn decode_payload(kind: MessageType, p: &[u8]) -> Result<Message, PriorError> {
    match kind {
        MessageType::Request => {
            let s = p
                .get(..8)
                .ok_or_else(|| protocol(HEADER_LEN, "payload too short for sigma"))?;
            let sigma = f64::from_le_bytes(s.try_into().unwrap());
            Ok(Message::Request {
                sigma,
                samples: read_f32s(p, 8)?,
            })
        }
        MessageType::Response => Ok(Message::Response {
            score: read_f32s(p, 0)?,
        }),
        MessageType::Error => String::from_utf8(p.to_vec())
            .map(Message::Error)
            .map_err(|e| protocol(HEADER_LEN + e.utf8_error().valid_up_to(), "error text is not UTF-8")),
    }
}

/// Decodes one complete frame from a byte slice, returning the message and
/// the number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), PriorError> {
    let header: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| protocol(bytes.len(), "truncated header"))?;
    let (kind, len) = decode_header(header)?;
    let end = HEADER_LEN + len as usize;
    let payload = bytes
        .get(HEADER_LEN..end)
        .ok_or_else(|| protocol(bytes.len(), format!("truncated payload, expected {len} bytes")))?;
    Ok((decode_payload(kind, payload)?, end))
}

/// Outcome of reading from a stream: transport failures stay `io::Error` so
/// the caller can classify and retry them.
#[derive(Debug)]
pub enum ReadError {
    Io(std::io::Error),
    Protocol(PriorError),
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Message, ReadError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(ReadError::Io)?;
    let (kind, len) = decode_header(&header).map_err(ReadError::Protocol)?;
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(ReadError::Io)?;
    decode_payload(kind, &payload).map_err(ReadError::Protocol)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> std::io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}
