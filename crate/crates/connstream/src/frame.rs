//! Length-prefixed TCP frames.
//!
//! A frame is a 4-byte big-endian length, one type byte and a UTF-8 JSON
//! payload. The length counts the type byte and the payload.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

/// Largest accepted frame body (type byte plus payload).
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameType {
    Network = 0x01,
    Timing = 0x02,
    Ack = 0x03,
    Control = 0x04,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(FrameType::Network),
            0x02 => Some(FrameType::Timing),
            0x03 => Some(FrameType::Ack),
            0x04 => Some(FrameType::Control),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameType,
    pub payload: String,
}

impl Frame {
    pub fn new(kind: FrameType, payload: impl Into<String>) -> Self {
        Self {
            kind,
            payload: payload.into(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let body = self.payload.len() + 1;
        if body > MAX_FRAME {
            return Err(Error::Protocol(format!("frame of {body} bytes exceeds the {MAX_FRAME} byte limit")));
        }
        let mut out = Vec::with_capacity(4 + body);
        out.extend_from_slice(&(body as u32).to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(self.payload.as_bytes());
        Ok(out)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let bytes = self.encode()?;
        w.write_all(&bytes).map_err(|e| Error::Protocol(e.to_string()))
    }

    /// Reads one frame. `Ok(None)` on a clean end of stream before a frame
    /// starts.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Frame>> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(Error::Protocol(e.to_string())),
        }
        let body = check_len(u32::from_be_bytes(len) as usize)?;
        let mut buf = vec![0; body];
        r.read_exact(&mut buf).map_err(|e| Error::Protocol(format!("truncated frame: {e}")))?;
        parse_body(buf).map(Some)
    }
}

fn check_len(body: usize) -> Result<usize> {
    if body == 0 || body > MAX_FRAME {
        return Err(Error::Protocol(format!("invalid frame length {body}")));
    }
    Ok(body)
}

fn parse_body(mut buf: Vec<u8>) -> Result<Frame> {
    let kind = FrameType::from_byte(buf[0]).ok_or_else(|| Error::Protocol(format!("unknown frame type {:#04x}", buf[0])))?;
    buf.remove(0);
    let payload = String::from_utf8(buf).map_err(|_| Error::Protocol("frame payload is not UTF-8".into()))?;
    Ok(Frame { kind, payload })
}

/// Reassembles frames from arbitrarily split byte chunks.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame, if one is buffered.
    pub fn next_frame(&mut self) -> Result<Option<Frame>> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let body = check_len(u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize)?;
        if self.buf.len() < 4 + body {
            return Ok(None);
        }
        let rest = self.buf.split_off(4 + body);
        let frame = std::mem::replace(&mut self.buf, rest);
        parse_body(frame[4..].to_vec()).map(Some)
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}
