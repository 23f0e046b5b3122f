//! Model-server wire protocol.
//!
//! ```text
//! magic "FSNV" | version u8 = 1 | msg_type u8 | seq_id u32 LE
//! | header_len u32 LE | header (UTF-8 JSON) | payload_len u64 LE | payload
//! ```
//!
//! | type | message           | payload                 |
//! |------|-------------------|-------------------------|
//! | 1    | ImagineRequest    | `H·W·(D+1)` f32 LE      |
//! | 2    | ImagineResponse   | `H·W·(D+2)` f32 LE      |
//! | 3    | EmbedTextRequest  | empty, header `{query}` |
//! | 4    | EmbedTextResponse | `D` f32 LE              |
//! | 255  | Error             | empty, header `{code, message}` |
//!
//! Responses echo the request's `seq_id`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"FSNV";
pub const VERSION: u8 = 1;
pub const DTYPE: &str = "f32le";
pub const LAYOUT: &str = "row-major-channel-last";
pub const MAX_HEADER_LEN: u32 = 1 << 20;
pub const DEFAULT_MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    ImagineRequest = 1,
    ImagineResponse = 2,
    EmbedTextRequest = 3,
    EmbedTextResponse = 4,
    Error = 255,
}

impl TryFrom<u8> for MsgType {
    type Error = FrameError;

    fn try_from(v: u8) -> Result<Self, FrameError> {
        Ok(match v {
            1 => Self::ImagineRequest,
            2 => Self::ImagineResponse,
            3 => Self::EmbedTextRequest,
            4 => Self::EmbedTextResponse,
            255 => Self::Error,
            other => return Err(FrameError::UnknownType(other)),
        })
    }
}

/// One protocol message. The header is kept as raw bytes so frames round
/// trip bit-exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub seq: u32,
    pub header: Vec<u8>,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub dtype: String,
    pub layout: String,
}

impl TensorHeader {
    pub fn new(h: usize, w: usize, d: usize) -> Self {
        Self {
            h,
            w,
            d,
            dtype: DTYPE.into(),
            layout: LAYOUT.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextHeader {
    pub query: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorHeader {
    pub code: String,
    pub message: String,
}

/// Framing-level failure.
#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("stream ended inside the {0}")]
    Truncated(&'static str),
    #[error("connection closed")]
    Closed,
    #[error("{what} of {len} bytes exceeds the limit of {limit}")]
    TooLarge { what: &'static str, len: u64, limit: u64 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload of {0} bytes is not a whole number of f32 values")]
    Misaligned(usize),
    #[error("timed out")]
    Timeout,
    #[error(transparent)]
    Io(io::Error),
}

impl FrameError {
    fn from_read(e: io::Error, part: &'static str) -> Self {
        match e.kind() {
            io::ErrorKind::UnexpectedEof => Self::Truncated(part),
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => Self::Timeout,
            _ => Self::Io(e),
        }
    }
}

/// What went wrong talking to a model server.
#[derive(Debug, Error)]
pub enum RemoteErrorKind {
    #[error("cannot connect to {endpoint}: {source}")]
    Connect { endpoint: String, source: io::Error },
    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("server speaks protocol version {0}, expected {VERSION}")]
    Version(u8),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("server error {code}: {message}")]
    Server { code: String, message: String },
    #[error("transport error: {0}")]
    Transport(FrameError),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// A remote failure tagged with the episode that triggered it.
#[derive(Debug, Error)]
#[error("episode {episode}: {kind}")]
pub struct RemoteError {
    pub episode: String,
    pub kind: RemoteErrorKind,
}

impl Frame {
    pub fn new(msg_type: MsgType, seq: u32, header: &impl Serialize, payload: Vec<u8>) -> Self {
        Self {
            msg_type,
            seq,
            header: serde_json::to_vec(header).expect("headers serialize"),
            payload,
        }
    }

    pub fn error(seq: u32, code: &str, message: &str) -> Self {
        Self::new(
            MsgType::Error,
            seq,
            &ErrorHeader {
                code: code.into(),
                message: message.into(),
            },
            Vec::new(),
        )
    }

    pub fn header_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T, FrameError> {
        serde_json::from_slice(&self.header).map_err(|e| FrameError::Header(e.to_string()))
    }

    pub fn payload_f32(&self) -> Result<Vec<f32>, FrameError> {
        if self.payload.len() % 4 != 0 {
            return Err(FrameError::Misaligned(self.payload.len()));
        }
        Ok(crate::scene::io::le_bytes_to_f32(&self.payload))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(22 + self.header.len() + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.header);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

/// Reads one frame. A clean end of stream before the first byte is
/// [`FrameError::Closed`]; anywhere later it is [`FrameError::Truncated`].
pub fn read_frame(r: &mut impl Read, max_payload: u64) -> Result<Frame, FrameError> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::Truncated("magic")),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(FrameError::from_read(e, "magic")),
        }
    }
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    let mut fixed = [0u8; 10];
    r.read_exact(&mut fixed).map_err(|e| FrameError::from_read(e, "fixed header"))?;
    if fixed[0] != VERSION {
        return Err(FrameError::Version(fixed[0]));
    }
    let msg_type = MsgType::try_from(fixed[1])?;
    let seq = u32::from_le_bytes(fixed[2..6].try_into().unwrap());
    let header_len = u32::from_le_bytes(fixed[6..10].try_into().unwrap());
    if header_len > MAX_HEADER_LEN {
        return Err(FrameError::TooLarge {
            what: "header",
            len: header_len as u64,
            limit: MAX_HEADER_LEN as u64,
        });
    }
    let mut header = vec![0u8; header_len as usize];
    r.read_exact(&mut header).map_err(|e| FrameError::from_read(e, "header"))?;
    if std::str::from_utf8(&header).is_err() {
        return Err(FrameError::Header("header is not UTF-8".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| FrameError::from_read(e, "payload length"))?;
    let payload_len = u64::from_le_bytes(len);
    if payload_len > max_payload {
        return Err(FrameError::TooLarge {
            what: "payload",
            len: payload_len,
            limit: max_payload,
        });
    }
    let mut payload = Vec::new();
    r.take(payload_len)
        .read_to_end(&mut payload)
        .map_err(|e| FrameError::from_read(e, "payload"))?;
    if (payload.len() as u64) < payload_len {
        return Err(FrameError::Truncated("payload"));
    }
    Ok(Frame {
        msg_type,
        seq,
        header,
        payload,
    })
}
