//! Client side of the model-server protocol.

use std::fmt;
use std::io::{self, Read, Write};
use std::net::TcpStream;
#[cfg(unix)]
use std::os::unix::net::UnixStream;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::protocol::{
    read_frame, write_frame, ErrorHeader, Frame, FrameError, MsgType, RemoteError, RemoteErrorKind, TensorHeader,
    TextHeader, DEFAULT_MAX_PAYLOAD,
};
use super::{ImaginationBackend, ImaginedMap};
use crate::error::{Error, Result};
use crate::geosem::embedding::RgbImage;
use crate::geosem::{EmbeddingProvider, GeoSemMap};
use crate::scene::io::f32_to_le_bytes;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// `host:port`, `tcp://host:port` or `unix:/path/to/socket`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Unix(PathBuf),
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("unix:") {
            if path.is_empty() {
                return Err(Error::InvalidArgument("empty unix socket path".into()));
            }
            return Ok(Self::Unix(PathBuf::from(path)));
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        match addr.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Self::Tcp(addr.to_string())),
            _ => Err(Error::InvalidArgument(format!("cannot parse endpoint {s:?}"))),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tcp(a) => write!(f, "tcp://{a}"),
            Self::Unix(p) => write!(f, "unix:{}", p.display()),
        }
    }
}

enum Conn {
    Tcp(TcpStream),
    #[cfg(unix)]
    Unix(UnixStream),
}

impl Conn {
    fn open(endpoint: &Endpoint, timeout: Duration) -> io::Result<Self> {
        let conn = match endpoint {
            Endpoint::Tcp(addr) => {
                use std::net::ToSocketAddrs;
                let mut last = io::Error::new(io::ErrorKind::NotFound, "no addresses");
                let mut stream = None;
                for a in addr.to_socket_addrs()? {
                    match TcpStream::connect_timeout(&a, timeout) {
                        Ok(s) => {
                            stream = Some(s);
                            break;
                        }
                        Err(e) => last = e,
                    }
                }
                let s = stream.ok_or(last)?;
                s.set_nodelay(true)?;
                Self::Tcp(s)
            }
            #[cfg(unix)]
            Endpoint::Unix(path) => Self::Unix(UnixStream::connect(path)?),
            #[cfg(not(unix))]
            Endpoint::Unix(_) => return Err(io::Error::new(io::ErrorKind::Unsupported, "unix sockets")),
        };
        conn.set_timeout(timeout)?;
        Ok(conn)
    }

    fn set_timeout(&self, t: Duration) -> io::Result<()> {
        match self {
            Self::Tcp(s) => {
                s.set_read_timeout(Some(t))?;
                s.set_write_timeout(Some(t))
            }
            #[cfg(unix)]
            Self::Unix(s) => {
                s.set_read_timeout(Some(t))?;
                s.set_write_timeout(Some(t))
            }
        }
    }
}

impl Read for Conn {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Self::Tcp(s) => s.read(buf),
            #[cfg(unix)]
            Self::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Conn {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Self::Tcp(s) => s.write(buf),
            #[cfg(unix)]
            Self::Unix(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Self::Tcp(s) => s.flush(),
            #[cfg(unix)]
            Self::Unix(s) => s.flush(),
        }
    }
}

/// Request/response client with a pool of idle connections. Each connection
/// carries one request at a time.
pub struct RemoteClient {
    endpoint: Endpoint,
    timeout: Duration,
    max_payload: u64,
    seq: AtomicU32,
    idle: Mutex<Vec<Conn>>,
}

impl fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteClient")
            .field("endpoint", &self.endpoint)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl RemoteClient {
    pub fn new(endpoint: Endpoint) -> Self {
        Self {
            endpoint,
            timeout: DEFAULT_TIMEOUT,
            max_payload: DEFAULT_MAX_PAYLOAD,
            seq: AtomicU32::new(1),
            idle: Mutex::new(Vec::new()),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn next_seq(&self) -> u32 {
        self.seq.fetch_add(1, Ordering::Relaxed)
    }

    /// Sends `frame` and waits for the response carrying the same sequence
    /// id. Error frames become [`RemoteErrorKind::Server`]. A connection is
    /// returned to the pool only after a clean exchange.
    pub fn call(&self, frame: &Frame, episode: &str) -> std::result::Result<Frame, RemoteError> {
        let fail = |kind| RemoteError {
            episode: episode.to_string(),
            kind,
        };
        let pooled = self.idle.lock().expect("pool lock").pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => Conn::open(&self.endpoint, self.timeout).map_err(|source| {
                if matches!(source.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) {
                    fail(RemoteErrorKind::Timeout(self.timeout))
                } else {
                    fail(RemoteErrorKind::Connect {
                        endpoint: self.endpoint.to_string(),
                        source,
                    })
                }
            })?,
        };
        write_frame(&mut conn, frame).map_err(|e| match e.kind() {
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => fail(RemoteErrorKind::Timeout(self.timeout)),
            _ => fail(RemoteErrorKind::Transport(FrameError::Io(e))),
        })?;
        let resp = read_frame(&mut conn, self.max_payload).map_err(|e| {
            fail(match e {
                FrameError::Timeout => RemoteErrorKind::Timeout(self.timeout),
                FrameError::Version(v) => RemoteErrorKind::Version(v),
                other => RemoteErrorKind::Transport(other),
            })
        })?;
        if resp.seq != frame.seq {
            return Err(fail(RemoteErrorKind::Protocol(format!(
                "response seq {} does not match request seq {}",
                resp.seq, frame.seq
            ))));
        }
        if resp.msg_type == MsgType::Error {
            let h: ErrorHeader = resp.header_as().unwrap_or_else(|e| ErrorHeader {
                code: "unparseable".into(),
                message: e.to_string(),
            });
            // The exchange itself completed, so the connection stays usable.
            self.idle.lock().expect("pool lock").push(conn);
            return Err(fail(RemoteErrorKind::Server {
                code: h.code,
                message: h.message,
            }));
        }
        self.idle.lock().expect("pool lock").push(conn);
        Ok(resp)
    }
}

/// Imagination served by an external model over the wire protocol.
#[derive(Debug)]
pub struct RemoteBackend {
    client: RemoteClient,
}

impl RemoteBackend {
    pub fn new(client: RemoteClient) -> Self {
        Self { client }
    }

    pub fn connect(endpoint: &str) -> Result<Self> {
        Ok(Self::new(RemoteClient::new(endpoint.parse()?)))
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }
}

impl ImaginationBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn imagine(&self, map: &GeoSemMap, episode: &str) -> Result<ImaginedMap> {
        let (h, w) = map.shape();
        let d = map.dim();
        let seq = self.client.next_seq();
        let req = Frame::new(
            MsgType::ImagineRequest,
            seq,
            &TensorHeader::new(h, w, d),
            f32_to_le_bytes(&map.to_tensor()),
        );
        let resp = self.client.call(&req, episode)?;
        let fail = |kind| {
            Error::Remote(RemoteError {
                episode: episode.to_string(),
                kind,
            })
        };
        if resp.msg_type != MsgType::ImagineResponse {
            return Err(fail(RemoteErrorKind::Protocol(format!(
                "expected ImagineResponse, got {:?}",
                resp.msg_type
            ))));
        }
        let header: TensorHeader = resp
            .header_as()
            .map_err(|e| fail(RemoteErrorKind::Transport(e)))?;
        if (header.h, header.w, header.d) != (h, w, d) {
            return Err(fail(RemoteErrorKind::Dimension(format!(
                "response header {}x{}x{}, request {h}x{w}x{d}",
                header.h, header.w, header.d
            ))));
        }
        let values = resp.payload_f32().map_err(|e| fail(RemoteErrorKind::Transport(e)))?;
        if values.len() != h * w * (d + 2) {
            return Err(fail(RemoteErrorKind::Dimension(format!(
                "response payload has {} values, expected {}",
                values.len(),
                h * w * (d + 2)
            ))));
        }
        ImaginedMap::from_tensor(h, w, d, &values)
            .map_err(|e| fail(RemoteErrorKind::Protocol(format!("invalid imagined map: {e}"))))
    }
}

/// Text embeddings from a model server. Image embedding is not part of the
/// protocol and always fails.
#[derive(Debug)]
pub struct RemoteEmbeddingProvider {
    client: RemoteClient,
    dim: usize,
}

impl RemoteEmbeddingProvider {
    pub fn new(client: RemoteClient, dim: usize) -> Self {
        Self { client, dim }
    }
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, query: &str) -> Result<Vec<f32>> {
        let req = Frame::new(
            MsgType::EmbedTextRequest,
            self.client.next_seq(),
            &TextHeader { query: query.into() },
            Vec::new(),
        );
        let resp = self.client.call(&req, "-")?;
        let fail = |kind| {
            Error::Remote(RemoteError {
                episode: "-".into(),
                kind,
            })
        };
        if resp.msg_type != MsgType::EmbedTextResponse {
            return Err(fail(RemoteErrorKind::Protocol(format!(
                "expected EmbedTextResponse, got {:?}",
                resp.msg_type
            ))));
        }
        let v = resp.payload_f32().map_err(|e| fail(RemoteErrorKind::Transport(e)))?;
        if v.len() != self.dim {
            return Err(fail(RemoteErrorKind::Dimension(format!(
                "text embedding has {} values, expected {}",
                v.len(),
                self.dim
            ))));
        }
        Ok(v)
    }

    fn embed_image(&self, _image: &RgbImage) -> Result<Vec<f32>> {
        Err(Error::Provider("the model-server protocol has no image embedding message".into()))
    }
}
