//! Reflecting model-server stub for protocol tests.
#![allow(dead_code)]

use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use foresight::imagination::protocol::{
    read_frame, Frame, MsgType, TensorHeader, TextHeader, DEFAULT_MAX_PAYLOAD,
};

/// How the stub answers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Echo the D+1 channels and append interior = 1 on known cells, 0 on unknown.
    Reflect,
    BadMagic,
    CloseMidPayload,
    ErrorFrame,
    WrongSeq,
    WrongDims,
    ShortPayload,
    OutOfRange,
    WrongType,
    Version2,
    Delay(Duration),
}

pub struct Stub {
    pub endpoint: String,
}

/// Starts a stub on an ephemeral localhost port. The listener thread lives
/// until the test process exits.
pub fn spawn(mode: Mode, embed_dim: usize) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { return };
            thread::spawn(move || serve(stream, mode, embed_dim));
        }
    });
    Stub { endpoint }
}

/// Reflected response for an imagine request payload.
pub fn reflect(values: &[f32], d: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(values.len() / (d + 1) * (d + 2));
    for cell in values.chunks_exact(d + 1) {
        out.extend_from_slice(cell);
        out.push(if cell[d] == 0.5 { 0.0 } else { 1.0 });
    }
    out
}

fn le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn text_embedding(query: &str, d: usize) -> Vec<f32> {
    (0..d).map(|i| (query.len() + i) as f32).collect()
}

fn serve(mut stream: TcpStream, mode: Mode, embed_dim: usize) {
    loop {
        let Ok(req) = read_frame(&mut stream, DEFAULT_MAX_PAYLOAD) else { return };
        let resp = match req.msg_type {
            MsgType::ImagineRequest => {
                let h: TensorHeader = req.header_as().unwrap();
                let values = req.payload_f32().unwrap();
                let mut out = reflect(&values, h.d);
                let mut header = TensorHeader::new(h.h, h.w, h.d);
                match mode {
                    Mode::WrongDims => header.w += 1,
                    Mode::ShortPayload => {
                        out.pop();
                    }
                    Mode::OutOfRange => out[h.d] = 2.0,
                    _ => {}
                }
                let ty = if mode == Mode::WrongType { MsgType::EmbedTextResponse } else { MsgType::ImagineResponse };
                Frame::new(ty, req.seq, &header, le(&out))
            }
            MsgType::EmbedTextRequest => {
                let t: TextHeader = req.header_as().unwrap();
                Frame::new(
                    MsgType::EmbedTextResponse,
                    req.seq,
                    &serde_json::json!({}),
                    le(&text_embedding(&t.query, embed_dim)),
                )
            }
            _ => Frame::error(req.seq, "unsupported", "stub only answers requests"),
        };
        let mut bytes = resp.encode();
        match mode {
            Mode::BadMagic => bytes[..4].copy_from_slice(b"JUNK"),
            Mode::Version2 => bytes[4] = 2,
            Mode::WrongSeq => bytes[6..10].copy_from_slice(&req.seq.wrapping_add(1).to_le_bytes()),
            Mode::ErrorFrame => bytes = Frame::error(req.seq, "E_MODEL", "model exploded").encode(),
            Mode::CloseMidPayload => {
                let cut = bytes.len() - resp.payload.len() / 2;
                let _ = stream.write_all(&bytes[..cut]);
                return;
            }
            Mode::Delay(d) => thread::sleep(d),
            _ => {}
        }
        if stream.write_all(&bytes).and_then(|_| stream.flush()).is_err() {
            return;
        }
    }
}
