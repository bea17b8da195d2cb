//! Wire protocol: length-prefixed JSON frames over one bidirectional TCP stream.
//!
//! Each frame is a 4-byte big-endian payload length followed by a UTF-8 JSON document. The
//! client opens with [`Hello`]; the server answers [`Outbound::Welcome`] or
//! [`Outbound::Error`] and closes. After that the client sends
//! [`bodylink::session::InboundMessage`] frames and receives [`Outbound`] frames.

use std::io::{self, Read, Write};

use bodylink::log::{EventRecord, Snapshot};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Frames above this size are refused.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "hello")]
pub struct Hello {
    pub version: u32,
    /// When set, the server refuses the connection unless its config hash matches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Welcome {
        version: u32,
        config_hash: String,
        session_id: String,
        tick_rate_control: u32,
        tick_rate_telemetry: u32,
        /// `true` when the stream is a log replay; inputs are ignored.
        replay: bool,
    },
    Error {
        message: String,
    },
    Snapshot(Box<Snapshot>),
    Event(EventRecord),
    HeartbeatAck {
        t: f64,
    },
    Rejected {
        reason: String,
    },
    TrialFinished {
        trial_id: u32,
        completed: bool,
        reason: Option<String>,
    },
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    if body.len() > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    let mut buf = Vec::with_capacity(4 + body.len());
    buf.extend_from_slice(&(body.len() as u32).to_be_bytes());
    buf.extend_from_slice(&body);
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one frame's payload; `Ok(None)` on a clean end of stream.
pub fn read_frame_bytes<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds the {MAX_FRAME} byte limit"),
        ));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn read_frame<R: Read, T: DeserializeOwned>(r: &mut R) -> io::Result<Option<T>> {
    match read_frame_bytes(r)? {
        None => Ok(None),
        Some(body) => serde_json::from_slice(&body)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
    }
}
