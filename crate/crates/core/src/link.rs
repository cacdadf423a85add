//! Sensor -> edge-server datagram link.
//!
//! Wire frame (little-endian):
//!
//! ```text
//! magic u32 = 0x53434149 | version u8 = 1 | type u8 | task_id u16 |
//! payload_len u32 | payload | crc32 u32 (over payload)
//! ```
//!
//! SEMANTIC and IMAGE payloads start with a u16 sequence number. Delivery is
//! stop-and-wait: every accepted frame is acknowledged, the sender retries
//! on timeout, and the receiver processes each sequence number once.

use std::fs::{File, OpenOptions};
use std::io::ErrorKind;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::channel::ChannelConfig;
use crate::codec::BlockStream;
use crate::dataset::Image;
use crate::kb::{sync_bytes, KnowledgeBase};
use crate::nn::{fingerprint, Model};
use crate::pipeline::{
    baseline_classify, baseline_encode, channel_for_image, impair_blockstream, impair_frame, semantic_classify,
    semantic_encode,
};
use crate::semantic::{select_maps, CompressionRatio, SemanticFrame};
use crate::{Error, Result};

pub const WIRE_MAGIC: u32 = 0x5343_4149;
pub const WIRE_VERSION: u8 = 1;
pub const WIRE_HEADER_BYTES: usize = 12;
pub const WIRE_OVERHEAD_BYTES: usize = WIRE_HEADER_BYTES + 4;
/// Largest payload that still fits one UDP datagram.
pub const MAX_PAYLOAD: usize = 65507 - WIRE_OVERHEAD_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameType {
    KbSync = 1,
    Semantic = 2,
    Image = 3,
    Ack = 4,
}

impl FrameType {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(FrameType::KbSync),
            2 => Some(FrameType::Semantic),
            3 => Some(FrameType::Image),
            4 => Some(FrameType::Ack),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameType::KbSync => "kb_sync",
            FrameType::Semantic => "semantic",
            FrameType::Image => "image",
            FrameType::Ack => "ack",
        }
    }

    fn sequenced(self) -> bool {
        matches!(self, FrameType::Semantic | FrameType::Image)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub frame_type: FrameType,
    pub task_id: u16,
    pub payload: Vec<u8>,
}

pub fn encode_wire(frame: &WireFrame) -> Result<Vec<u8>> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(Error::Wire(format!(
            "payload of {} bytes exceeds the {MAX_PAYLOAD}-byte datagram limit",
            frame.payload.len()
        )));
    }
    let mut out = Vec::with_capacity(WIRE_OVERHEAD_BYTES + frame.payload.len());
    out.extend(WIRE_MAGIC.to_le_bytes());
    out.push(WIRE_VERSION);
    out.push(frame.frame_type as u8);
    out.extend(frame.task_id.to_le_bytes());
    out.extend((frame.payload.len() as u32).to_le_bytes());
    out.extend(&frame.payload);
    out.extend(crc32fast::hash(&frame.payload).to_le_bytes());
    Ok(out)
}

pub fn decode_wire(bytes: &[u8]) -> Result<WireFrame> {
    if bytes.len() < WIRE_OVERHEAD_BYTES {
        return Err(Error::Wire(format!("{} bytes is shorter than a frame", bytes.len())));
    }
    let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != WIRE_MAGIC {
        return Err(Error::Wire(format!("bad magic {magic:#010x}")));
    }
    if bytes[4] != WIRE_VERSION {
        return Err(Error::Wire(format!("unsupported version {}", bytes[4])));
    }
    let frame_type = FrameType::from_u8(bytes[5]).ok_or_else(|| Error::Wire(format!("unknown frame type {}", bytes[5])))?;
    let task_id = u16::from_le_bytes([bytes[6], bytes[7]]);
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != WIRE_OVERHEAD_BYTES + len {
        return Err(Error::Wire(format!(
            "declared payload {len} bytes, datagram carries {}",
            bytes.len() - WIRE_OVERHEAD_BYTES
        )));
    }
    let payload = &bytes[WIRE_HEADER_BYTES..WIRE_HEADER_BYTES + len];
    let expected = u32::from_le_bytes(bytes[WIRE_HEADER_BYTES + len..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if expected != computed {
        return Err(Error::Crc { expected, computed });
    }
    Ok(WireFrame {
        frame_type,
        task_id,
        payload: payload.to_vec(),
    })
}

fn with_seq(seq: u16, body: &[u8]) -> Vec<u8> {
    let mut p = Vec::with_capacity(2 + body.len());
    p.extend(seq.to_le_bytes());
    p.extend(body);
    p
}

fn split_seq(payload: &[u8]) -> Result<(u16, &[u8])> {
    if payload.len() < 2 {
        return Err(Error::Wire("sequenced payload shorter than its sequence number".into()));
    }
    Ok((u16::from_le_bytes([payload[0], payload[1]]), &payload[2..]))
}

fn resolve(endpoint: &str) -> Result<SocketAddr> {
    endpoint
        .to_socket_addrs()
        .map_err(|e| Error::Transport(format!("cannot resolve {endpoint}: {e}")))?
        .next()
        .ok_or_else(|| Error::Transport(format!("{endpoint} resolves to no address")))
}

/// What the transmitter puts on the wire for each image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TxMode {
    /// KB-ranked feature maps at the given compression ratio.
    Semantic(CompressionRatio),
    /// The whole image through the block-DCT codec.
    Baseline { quality: u8 },
}

#[derive(Debug, Clone)]
pub struct TransmitterConfig {
    pub mode: TxMode,
    /// In-process payload impairment; `None` sends the payload untouched.
    pub channel: Option<ChannelConfig>,
    pub task_id: u16,
    pub ack_timeout: Duration,
    pub retries: u32,
}

impl TransmitterConfig {
    pub fn new(mode: TxMode, channel: Option<ChannelConfig>) -> Self {
        TransmitterConfig {
            mode,
            channel,
            task_id: 1,
            ack_timeout: Duration::from_millis(500),
            retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SendRecord {
    pub seq: u16,
    pub frame_type: FrameType,
    pub bytes: usize,
    pub attempts: u32,
    pub acked: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SendLog {
    pub records: Vec<SendRecord>,
}

impl SendLog {
    pub fn dropped(&self) -> usize {
        self.records.iter().filter(|r| !r.acked).count()
    }
}

struct Sender {
    socket: UdpSocket,
    config: TransmitterConfig,
}

impl Sender {
    /// Sends and waits for the matching ACK. `Ok(None)` after exhausting the
    /// retries without one.
    fn send_reliable(&self, frame: &WireFrame, seq: Option<u16>) -> Result<Option<u32>> {
        let bytes = encode_wire(frame)?;
        let mut buf = vec![0u8; 65536];
        for attempt in 1..=self.config.retries + 1 {
            self.socket
                .send(&bytes)
                .map_err(|e| Error::Transport(format!("send failed: {e}")))?;
            let deadline = Instant::now() + self.config.ack_timeout;
            loop {
                let left = deadline.saturating_duration_since(Instant::now());
                if left.is_zero() {
                    break;
                }
                self.socket.set_read_timeout(Some(left))?;
                match self.socket.recv(&mut buf) {
                    Ok(n) => {
                        let Ok(ack) = decode_wire(&buf[..n]) else { continue };
                        if ack.frame_type != FrameType::Ack {
                            continue;
                        }
                        let acked_seq = split_seq(&ack.payload).ok().map(|(s, _)| s);
                        if acked_seq == seq || (seq.is_none() && ack.payload.is_empty()) {
                            return Ok(Some(attempt));
                        }
                    }
                    Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => break,
                    Err(e) if e.kind() == ErrorKind::ConnectionRefused => {
                        return Err(Error::Transport(format!("endpoint unreachable: {e}")))
                    }
                    Err(e) => return Err(Error::Transport(e.to_string())),
                }
            }
        }
        Ok(None)
    }
}

/// Sensor side: synchronizes the KB, then sends one frame per image.
pub fn run_transmitter<'a>(
    endpoint: &str,
    model: &Model,
    kb: &KnowledgeBase,
    images: impl IntoIterator<Item = &'a Image>,
    config: &TransmitterConfig,
) -> Result<SendLog> {
    if kb.fingerprint() != fingerprint(model) {
        return Err(Error::Setup(
            "knowledge base was not built from this checkpoint; refusing to transmit".into(),
        ));
    }
    let addr = resolve(endpoint)?;
    let local: SocketAddr = if addr.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().unwrap();
    let socket = UdpSocket::bind(local)?;
    socket
        .connect(addr)
        .map_err(|e| Error::Transport(format!("cannot reach {endpoint}: {e}")))?;
    let sender = Sender {
        socket,
        config: config.clone(),
    };
    let k = model.spec().cut_maps();
    let indices = match config.mode {
        TxMode::Semantic(cr) => select_maps(&kb.ranking(), cr, k),
        TxMode::Baseline { .. } => Vec::new(),
    };

    let mut log = SendLog::default();
    let kb_frame = WireFrame {
        frame_type: FrameType::KbSync,
        task_id: config.task_id,
        payload: kb.to_text().into_bytes(),
    };
    match sender.send_reliable(&kb_frame, None)? {
        Some(attempts) => log.records.push(SendRecord {
            seq: 0,
            frame_type: FrameType::KbSync,
            bytes: kb_frame.payload.len(),
            attempts,
            acked: true,
        }),
        None => return Err(Error::Transport(format!("no acknowledgement from {endpoint} for knowledge sync"))),
    }

    for (i, image) in images.into_iter().enumerate() {
        let seq = i as u16;
        let channel = config.channel.map(|c| channel_for_image(&c, i));
        let (frame_type, body) = match config.mode {
            TxMode::Semantic(_) => {
                let frame = semantic_encode(model, image, &indices)?;
                let frame = match channel {
                    Some(c) => impair_frame(&frame, &c).0,
                    None => frame,
                };
                (FrameType::Semantic, frame.to_bytes())
            }
            TxMode::Baseline { quality } => {
                let stream = baseline_encode(image, quality)?;
                let stream = match channel {
                    Some(c) => impair_blockstream(&stream, &c).0,
                    None => stream,
                };
                (FrameType::Image, stream.to_bytes())
            }
        };
        let frame = WireFrame {
            frame_type,
            task_id: config.task_id,
            payload: with_seq(seq, &body),
        };
        let outcome = sender.send_reliable(&frame, Some(seq))?;
        log.records.push(SendRecord {
            seq,
            frame_type,
            bytes: body.len(),
            attempts: outcome.unwrap_or(config.retries + 1),
            acked: outcome.is_some(),
        });
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReceiveRecord {
    pub seq: u16,
    pub frame_type: &'static str,
    pub bytes: usize,
    pub predicted_class: Option<usize>,
    pub latency_ms: f64,
}

#[derive(Debug, Default)]
pub struct ReceiverConfig {
    /// Where KB_SYNC frames are written.
    pub kb_path: Option<PathBuf>,
    /// Clean-trained full model for IMAGE frames.
    pub baseline_model: Option<Model>,
    /// Stop after this many SEMANTIC/IMAGE frames have been classified.
    pub max_frames: Option<usize>,
    /// Stop after this long without any datagram.
    pub idle_timeout: Option<Duration>,
    /// Append-only CSV log, flushed per frame.
    pub log_path: Option<PathBuf>,
}

pub struct Receiver {
    socket: UdpSocket,
}

impl Receiver {
    pub fn bind(endpoint: &str) -> Result<Self> {
        let addr = resolve(endpoint)?;
        let socket = UdpSocket::bind(addr).map_err(|e| Error::Transport(format!("cannot listen on {endpoint}: {e}")))?;
        Ok(Receiver { socket })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.local_addr()?)
    }

    /// Edge-server loop. Returns the classification log.
    pub fn run(&self, decoder_model: &Model, config: &ReceiverConfig) -> Result<Vec<ReceiveRecord>> {
        let mut writer = match &config.log_path {
            Some(p) => {
                let fresh = !p.exists() || std::fs::metadata(p)?.len() == 0;
                let file: File = OpenOptions::new().create(true).append(true).open(p)?;
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
                if fresh {
                    w.write_record(["seq", "frame_type", "bytes", "predicted_class", "latency_ms"])?;
                    w.flush()?;
                }
                Some(w)
            }
            None => None,
        };
        self.socket.set_read_timeout(config.idle_timeout)?;
        let mut log = Vec::new();
        let mut last_seq: Option<(FrameType, u16)> = None;
        let mut classified = 0usize;
        let mut buf = vec![0u8; 65536];
        while config.max_frames.is_none_or(|m| classified < m) {
            let (n, peer) = match self.socket.recv_from(&mut buf) {
                Ok(r) => r,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => break,
                Err(e) => return Err(Error::Transport(e.to_string())),
            };
            let started = Instant::now();
            // damaged or foreign datagrams get no ACK; the sender retries
            let Ok(frame) = decode_wire(&buf[..n]) else { continue };
            let ack_payload;
            let record = match frame.frame_type {
                FrameType::Ack => continue,
                FrameType::KbSync => {
                    let Ok(text) = std::str::from_utf8(&frame.payload) else { continue };
                    if KnowledgeBase::from_text(text).is_err() {
                        continue;
                    }
                    if let Some(path) = &config.kb_path {
                        sync_bytes(&frame.payload, path)?;
                    }
                    ack_payload = Vec::new();
                    ReceiveRecord {
                        seq: 0,
                        frame_type: FrameType::KbSync.name(),
                        bytes: frame.payload.len(),
                        predicted_class: None,
                        latency_ms: 0.0,
                    }
                }
                ft => {
                    let Ok((seq, body)) = split_seq(&frame.payload) else { continue };
                    ack_payload = seq.to_le_bytes().to_vec();
                    if last_seq == Some((ft, seq)) {
                        self.ack(&frame, ack_payload, peer)?;
                        continue;
                    }
                    let predicted = match ft {
                        FrameType::Semantic => SemanticFrame::from_bytes(body)
                            .and_then(|f| semantic_classify(decoder_model, &f))
                            .ok(),
                        _ => match &config.baseline_model {
                            Some(m) => BlockStream::from_bytes(body).and_then(|s| baseline_classify(m, &s)).ok(),
                            None => None,
                        },
                    };
                    let Some(predicted) = predicted else { continue };
                    debug_assert!(ft.sequenced());
                    last_seq = Some((ft, seq));
                    classified += 1;
                    ReceiveRecord {
                        seq,
                        frame_type: ft.name(),
                        bytes: body.len(),
                        predicted_class: Some(predicted),
                        latency_ms: started.elapsed().as_secs_f64() * 1e3,
                    }
                }
            };
            if let Some(w) = writer.as_mut() {
                w.serialize(&record)?;
                w.flush()?;
            }
            log.push(record);
            self.ack(&frame, ack_payload, peer)?;
        }
        Ok(log)
    }

    fn ack(&self, frame: &WireFrame, payload: Vec<u8>, peer: SocketAddr) -> Result<()> {
        let ack = WireFrame {
            frame_type: FrameType::Ack,
            task_id: frame.task_id,
            payload,
        };
        self.socket.send_to(&encode_wire(&ack)?, peer)?;
        Ok(())
    }
}

/// Binds `endpoint` and serves until a stop condition in `config` is met.
pub fn run_receiver(endpoint: &str, decoder_model: &Model, config: &ReceiverConfig) -> Result<Vec<ReceiveRecord>> {
    Receiver::bind(endpoint)?.run(decoder_model, config)
}
