//! Best-effort UDP probing. No raw sockets: ping is a UDP echo against a
//! peer agent's probe port, and captures only see packets sent by peer agents.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sonoma_core::estimator::{CapturedPacket, SentPacket};
use sonoma_core::model::{now_us, Capability, ChirpParams, TaskSpec, TrainParams};
use sonoma_core::rows::{to_rows, PingRow, TrainCapturedRow, TrainSentRow};
use sonoma_core::simnet::{chirp_send_offsets, MAX_PACKET_BYTES, MIN_PACKET_BYTES};
use sonoma_core::{Error, ErrorCode, Result};
use tokio::net::UdpSocket;
use tokio::sync::mpsc;
use tokio::time::{sleep_until, timeout, Instant};
use tokio_util::sync::CancellationToken;

use crate::config::RealSettings;
use crate::state::TaskSink;

pub const SUPPORTED: [Capability; 3] = [Capability::Ping, Capability::Chirp, Capability::Train];

const MAGIC: &[u8; 4] = b"SNMA";
const HEADER_LEN: usize = 17;
/// IPv4 + UDP header bytes counted in a probe's nominal size.
const IP_UDP_OVERHEAD: u32 = 28;
const ECHO_TIMEOUT: Duration = Duration::from_secs(1);
const CAPTURE_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum PacketType {
    EchoRequest = 1,
    EchoReply = 2,
    Chirp = 3,
    Train = 4,
}

impl PacketType {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => PacketType::EchoRequest,
            2 => PacketType::EchoReply,
            3 => PacketType::Chirp,
            4 => PacketType::Train,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    kind: PacketType,
    index: u32,
    sent_us: i64,
}

fn encode(h: Header, size_bytes: u32) -> Vec<u8> {
    let len = (size_bytes.saturating_sub(IP_UDP_OVERHEAD) as usize).max(HEADER_LEN);
    let mut buf = vec![0u8; len];
    buf[..4].copy_from_slice(MAGIC);
    buf[4] = h.kind as u8;
    buf[5..9].copy_from_slice(&h.index.to_be_bytes());
    buf[9..17].copy_from_slice(&h.sent_us.to_be_bytes());
    buf
}

fn decode(buf: &[u8]) -> Option<Header> {
    if buf.len() < HEADER_LEN || &buf[..4] != MAGIC {
        return None;
    }
    Some(Header {
        kind: PacketType::from_u8(buf[4])?,
        index: u32::from_be_bytes(buf[5..9].try_into().ok()?),
        sent_us: i64::from_be_bytes(buf[9..17].try_into().ok()?),
    })
}

type CaptureSlot = Option<(PacketType, mpsc::UnboundedSender<(u32, i64)>)>;

pub struct RealBackend {
    settings: RealSettings,
    capture: Arc<Mutex<CaptureSlot>>,
    listener: CancellationToken,
}

impl Drop for RealBackend {
    fn drop(&mut self) {
        self.listener.cancel();
    }
}

impl RealBackend {
    /// Binds the probe port and starts answering echoes.
    pub async fn bind(settings: RealSettings) -> Result<Self> {
        let sock = UdpSocket::bind((settings.address.as_str(), settings.probe_port)).await?;
        let capture: Arc<Mutex<CaptureSlot>> = Arc::default();
        let listener = CancellationToken::new();
        tokio::spawn(listen(sock, capture.clone(), listener.clone()));
        Ok(Self {
            settings,
            capture,
            listener,
        })
    }

    pub fn address(&self) -> &str {
        &self.settings.address
    }

    pub fn line_rate_mbps(&self) -> f64 {
        self.settings.line_rate_mbps
    }

    /// `host` or `host:port`; a bare host uses this agent's probe port.
    fn peer(&self, target: &str) -> Result<SocketAddr> {
        if let Ok(sa) = target.parse::<SocketAddr>() {
            return Ok(sa);
        }
        format!("{target}:{}", self.settings.probe_port)
            .parse()
            .map_err(|_| Error::new(ErrorCode::UnknownAddress, format!("cannot probe {target}")))
    }

    pub fn prepare(&self, spec: &TaskSpec) -> Result<()> {
        let size = spec.packet_bytes();
        if !(MIN_PACKET_BYTES..=MAX_PACKET_BYTES).contains(&size) {
            return Err(Error::param(format!("packet size {size} out of range")));
        }
        match spec {
            TaskSpec::Ping(p) => {
                if p.count == 0 || !(p.interval_sec >= 0.0) {
                    return Err(Error::param("ping needs count >= 1 and a non-negative interval"));
                }
                self.peer(&p.target).map(drop)
            }
            TaskSpec::Traceroute(_) => Err(Error::new(
                ErrorCode::CapabilityMissing,
                "traceroute needs raw sockets",
            )),
            TaskSpec::ChirpSend(c) => {
                check_chirp(c)?;
                self.peer(&c.destination).map(drop)
            }
            TaskSpec::Capture(c) => check_chirp(&c.chirp),
            TaskSpec::TrainSend(t) => {
                check_train(t)?;
                t.destinations.iter().try_for_each(|d| self.peer(d).map(drop))
            }
            TaskSpec::TrainRecv(t) => check_train(&t.train),
        }
    }

    pub async fn run(&self, spec: TaskSpec, sink: &TaskSink, cancel: &CancellationToken) -> Result<()> {
        match spec {
            TaskSpec::Ping(p) => {
                let peer = self.peer(&p.target)?;
                let sock = self.ephemeral().await?;
                let start = Instant::now();
                let mut buf = vec![0u8; 65536];
                for seq in 0..p.count {
                    let due = start + Duration::from_secs_f64(f64::from(seq) * p.interval_sec);
                    tokio::select! {
                        _ = cancel.cancelled() => return Ok(()),
                        _ = sleep_until(due) => {}
                    }
                    let sent = Instant::now();
                    let h = Header { kind: PacketType::EchoRequest, index: seq, sent_us: now_us() };
                    sock.send_to(&encode(h, p.size_bytes), peer).await?;
                    let reply = timeout(ECHO_TIMEOUT, async {
                        loop {
                            let (n, _) = sock.recv_from(&mut buf).await?;
                            if let Some(r) = decode(&buf[..n]) {
                                if r.kind == PacketType::EchoReply && r.index == seq {
                                    return Ok::<_, std::io::Error>(());
                                }
                            }
                        }
                    });
                    let rtt_ms = tokio::select! {
                        _ = cancel.cancelled() => return Ok(()),
                        r = reply => match r {
                            Ok(io) => io.map(|()| Some(sent.elapsed().as_secs_f64() * 1000.0))?,
                            Err(_) => None,
                        },
                    };
                    let row = PingRow {
                        source: self.settings.address.clone(),
                        target: p.target.clone(),
                        seq,
                        size_bytes: p.size_bytes,
                        rtt_ms,
                    };
                    if !sink.push(to_rows(&[row]).remove(0)) {
                        return Ok(());
                    }
                }
                Ok(())
            }
            TaskSpec::ChirpSend(c) => {
                let peer = self.peer(&c.destination)?;
                let sock = self.ephemeral().await?;
                let start = Instant::now();
                for (i, off) in chirp_send_offsets(c.n_packets, c.initial_gap_us, c.gap_ratio).into_iter().enumerate() {
                    tokio::select! {
                        _ = cancel.cancelled() => return Ok(()),
                        _ = sleep_until(start + Duration::from_micros(off as u64)) => {}
                    }
                    let h = Header { kind: PacketType::Chirp, index: i as u32, sent_us: now_us() };
                    sock.send_to(&encode(h, c.size_bytes), peer).await?;
                    let row = SentPacket { packet_index: h.index, send_timestamp_us: h.sent_us, size_bytes: c.size_bytes };
                    if !sink.push(to_rows(&[row]).remove(0)) {
                        return Ok(());
                    }
                }
                Ok(())
            }
            TaskSpec::Capture(c) => {
                let span = chirp_send_offsets(c.chirp.n_packets, c.chirp.initial_gap_us, c.chirp.gap_ratio)
                    .last()
                    .copied()
                    .unwrap_or_default();
                let deadline = Instant::now() + Duration::from_micros(span as u64) + CAPTURE_GRACE;
                self.capture_until(PacketType::Chirp, c.chirp.n_packets, deadline, cancel, |index, recv| {
                    sink.push(to_rows(&[CapturedPacket { packet_index: index, recv_timestamp_us: recv }]).remove(0))
                })
                .await
            }
            TaskSpec::TrainSend(t) => {
                let peers = t.destinations.iter().map(|d| self.peer(d)).collect::<Result<Vec<_>>>()?;
                let sock = self.ephemeral().await?;
                let gap_us = f64::from(t.size_bytes) * 8.0 / self.settings.line_rate_mbps;
                let start = Instant::now();
                for k in 0..t.n_packets {
                    if cancel.is_cancelled() {
                        return Ok(());
                    }
                    // timer resolution is far coarser than the gap; late packets go out at once
                    let due = start + Duration::from_secs_f64(f64::from(k) * gap_us / 1e6);
                    if due > Instant::now() + Duration::from_millis(1) {
                        sleep_until(due).await;
                    }
                    let which = k as usize % peers.len();
                    let h = Header { kind: PacketType::Train, index: k, sent_us: now_us() };
                    sock.send_to(&encode(h, t.size_bytes), peers[which]).await?;
                    let row = TrainSentRow {
                        packet_index: k,
                        send_timestamp_us: h.sent_us,
                        size_bytes: t.size_bytes,
                        destination: t.destinations[which].clone(),
                    };
                    if !sink.push(to_rows(&[row]).remove(0)) {
                        return Ok(());
                    }
                }
                Ok(())
            }
            TaskSpec::TrainRecv(t) => {
                let gap_us = f64::from(t.train.size_bytes) * 8.0 / self.settings.line_rate_mbps;
                let span = Duration::from_secs_f64(f64::from(t.train.n_packets) * gap_us / 1e6);
                let deadline = Instant::now() + span + CAPTURE_GRACE;
                let expected = t.train.n_packets.div_ceil(t.train.destinations.len() as u32);
                let me = self.settings.address.clone();
                self.capture_until(PacketType::Train, expected, deadline, cancel, |index, recv| {
                    let row = TrainCapturedRow { packet_index: index, recv_timestamp_us: recv, destination: me.clone() };
                    sink.push(to_rows(&[row]).remove(0))
                })
                .await
            }
            TaskSpec::Traceroute(_) => Err(Error::new(ErrorCode::CapabilityMissing, "traceroute needs raw sockets")),
        }
    }

    async fn ephemeral(&self) -> Result<UdpSocket> {
        Ok(UdpSocket::bind((self.settings.address.as_str(), 0)).await?)
    }

    async fn capture_until(
        &self,
        kind: PacketType,
        expected: u32,
        deadline: Instant,
        cancel: &CancellationToken,
        mut on_packet: impl FnMut(u32, i64) -> bool,
    ) -> Result<()> {
        let (tx, mut rx) = mpsc::unbounded_channel();
        *self.capture.lock().unwrap() = Some((kind, tx));
        let mut seen = 0;
        while seen < expected {
            tokio::select! {
                _ = cancel.cancelled() => break,
                _ = sleep_until(deadline) => break,
                got = rx.recv() => match got {
                    Some((index, recv)) => {
                        seen += 1;
                        if !on_packet(index, recv) {
                            break;
                        }
                    }
                    None => break,
                },
            }
        }
        *self.capture.lock().unwrap() = None;
        Ok(())
    }
}

fn check_chirp(c: &ChirpParams) -> Result<()> {
    if c.n_packets < 2 || !(c.gap_ratio > 0.0 && c.gap_ratio < 1.0) || !(c.initial_gap_us > 0.0) {
        return Err(Error::param("a chirp needs >= 2 packets, a ratio in (0, 1) and a positive gap"));
    }
    Ok(())
}

fn check_train(t: &TrainParams) -> Result<()> {
    if t.destinations.is_empty() || t.n_packets < 2 {
        return Err(Error::param("a train needs a destination and >= 2 packets"));
    }
    Ok(())
}

async fn listen(sock: UdpSocket, capture: Arc<Mutex<CaptureSlot>>, stop: CancellationToken) {
    let mut buf = vec![0u8; 65536];
    loop {
        let (n, from) = tokio::select! {
            _ = stop.cancelled() => return,
            r = sock.recv_from(&mut buf) => match r {
                Ok(x) => x,
                Err(e) => {
                    tracing::debug!("probe socket: {e}");
                    continue;
                }
            },
        };
        let recv = now_us();
        let Some(h) = decode(&buf[..n]) else { continue };
        match h.kind {
            PacketType::EchoRequest => {
                buf[4] = PacketType::EchoReply as u8;
                let _ = sock.send_to(&buf[..n], from).await;
            }
            PacketType::EchoReply => {}
            PacketType::Chirp | PacketType::Train => {
                if let Some((kind, tx)) = capture.lock().unwrap().as_ref() {
                    if *kind == h.kind {
                        let _ = tx.send((h.index, recv));
                    }
                }
            }
        }
    }
}
