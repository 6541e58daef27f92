//! WebSocket bridge between remote clients and the in-process bus.
//!
//! Binary WebSocket messages carry exactly one bus frame each, in both
//! directions. Text messages are control frames:
//! `{"op":"sub"|"unsub","topic":"/..."}`. Anything else closes the
//! connection with code 1002. Point-cloud topics are delivered latest-wins.
//!
//! Plain HTTP `GET /ui/...` requests on the same port serve static files
//! from the configured UI directory.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

use super::{decode_exact, encode_frame, topics, Bus, Subscription, SubscriptionMode};

/// Per-client queue depth for non-cloud topics.
pub const CLIENT_QUEUE: usize = 256;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("port {port} unavailable: {source}")]
    PortInUse { port: u16, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Control {
    op: String,
    topic: String,
}

#[derive(Debug, Default)]
pub struct BridgeStats {
    pub clients_accepted: AtomicU64,
    pub frames_in: AtomicU64,
    pub frames_out: AtomicU64,
    pub protocol_errors: AtomicU64,
}

/// Running bridge. Stops on [`BridgeHandle::shutdown`] or drop.
pub struct BridgeHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stats: Arc<BridgeStats>,
    accept: Option<JoinHandle<()>>,
}

impl BridgeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &BridgeStats {
        &self.stats
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BridgeHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `127.0.0.1:port` (0 picks a free port) and serves clients until shutdown.
pub fn serve_bridge(bus: &Bus, port: u16, ui_dir: Option<PathBuf>) -> Result<BridgeHandle, BridgeError> {
    serve_bridge_on(bus, SocketAddr::from(([127, 0, 0, 1], port)), ui_dir)
}

pub fn serve_bridge_on(bus: &Bus, addr: SocketAddr, ui_dir: Option<PathBuf>) -> Result<BridgeHandle, BridgeError> {
    let listener = TcpListener::bind(addr).map_err(|source| BridgeError::PortInUse {
        port: addr.port(),
        source,
    })?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stats = Arc::new(BridgeStats::default());
    let accept = {
        let bus = bus.clone();
        let stop = stop.clone();
        let stats = stats.clone();
        thread::Builder::new()
            .name("bridge-accept".into())
            .spawn(move || accept_loop(listener, bus, stop, stats, ui_dir))?
    };
    log::info!("bridge listening on {local}");
    Ok(BridgeHandle {
        addr: local,
        stop,
        stats,
        accept: Some(accept),
    })
}

fn accept_loop(
    listener: TcpListener,
    bus: Bus,
    stop: Arc<AtomicBool>,
    stats: Arc<BridgeStats>,
    ui_dir: Option<PathBuf>,
) {
    let mut clients: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::Acquire) && !bus.is_shutdown() {
        match listener.accept() {
            Ok((stream, peer)) => {
                let (bus, stop, stats, ui) = (bus.clone(), stop.clone(), stats.clone(), ui_dir.clone());
                let spawned = thread::Builder::new().name(format!("bridge-{peer}")).spawn(move || {
                    if let Err(e) = handle_connection(stream, &bus, &stop, &stats, ui.as_deref()) {
                        log::debug!("client {peer}: {e}");
                    }
                });
                match spawned {
                    Ok(h) => clients.push(h),
                    Err(e) => log::warn!("cannot spawn client thread: {e}"),
                }
                clients.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(5));
            }
        }
    }
    for h in clients {
        let _ = h.join();
    }
}

fn handle_connection(
    stream: TcpStream,
    bus: &Bus,
    stop: &AtomicBool,
    stats: &BridgeStats,
    ui_dir: Option<&Path>,
) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut head = [0u8; 512];
    let n = stream.peek(&mut head)?;
    let request = String::from_utf8_lossy(&head[..n]);
    if let Some(path) = request.strip_prefix("GET ").and_then(|r| r.split_whitespace().next()) {
        if path == "/ui" || path.starts_with("/ui/") {
            return serve_static(stream, path, ui_dir);
        }
    }
    let mut ws = tungstenite::accept(stream)?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(2)))?;
    stats.clients_accepted.fetch_add(1, Ordering::Relaxed);
    let mut subs: HashMap<String, Subscription> = HashMap::new();

    loop {
        if stop.load(Ordering::Acquire) || bus.is_shutdown() {
            let _ = ws.close(Some(CloseFrame {
                code: CloseCode::Away,
                reason: "server shutting down".into(),
            }));
            let _ = ws.flush();
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(text)) => match apply_control(&text, bus, &mut subs) {
                Ok(()) => {}
                Err(reason) => {
                    stats.protocol_errors.fetch_add(1, Ordering::Relaxed);
                    return close_protocol(&mut ws, reason);
                }
            },
            Ok(Message::Binary(bytes)) => match decode_exact(&bytes) {
                Ok(env) => {
                    stats.frames_in.fetch_add(1, Ordering::Relaxed);
                    if bus.forward(env).is_err() {
                        continue;
                    }
                }
                Err(e) => {
                    stats.protocol_errors.fetch_add(1, Ordering::Relaxed);
                    return close_protocol(&mut ws, format!("bad frame: {e}"));
                }
            },
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                return Ok(());
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
        let mut sent = false;
        for sub in subs.values() {
            for env in sub.drain() {
                let frame = encode_frame(&env)?;
                ws.write(Message::Binary(frame))?;
                stats.frames_out.fetch_add(1, Ordering::Relaxed);
                sent = true;
            }
        }
        if sent {
            ws.flush()?;
        }
    }
}

fn apply_control(text: &str, bus: &Bus, subs: &mut HashMap<String, Subscription>) -> Result<(), String> {
    let ctl: Control = serde_json::from_str(text).map_err(|e| format!("malformed control frame: {e}"))?;
    super::frame::validate_topic(&ctl.topic).map_err(|e| e.to_string())?;
    match ctl.op.as_str() {
        "sub" => {
            if let Entry::Vacant(slot) = subs.entry(ctl.topic) {
                let mode = if topics::is_cloud(slot.key()) {
                    SubscriptionMode::LatestWins
                } else {
                    SubscriptionMode::Queued { capacity: CLIENT_QUEUE }
                };
                let sub = bus.subscribe(slot.key(), mode).map_err(|e| e.to_string())?;
                slot.insert(sub);
            }
            Ok(())
        }
        "unsub" => {
            subs.remove(&ctl.topic);
            Ok(())
        }
        other => Err(format!("unknown op {other:?}")),
    }
}

fn close_protocol<S: Read + Write>(
    ws: &mut WebSocket<S>,
    reason: String,
) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    log::debug!("closing client: {reason}");
    let mut reason = reason;
    reason.truncate(120);
    ws.close(Some(CloseFrame {
        code: CloseCode::Protocol,
        reason: reason.into(),
    }))?;
    // drive the closing handshake until the peer answers or goes away
    for _ in 0..500 {
        match ws.read() {
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
            {
                let _ = ws.flush();
            }
            Err(_) => break,
        }
    }
    Ok(())
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("wasm") => "application/wasm",
        Some("png") => "image/png",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

fn serve_static(
    mut stream: TcpStream,
    url_path: &str,
    ui_dir: Option<&Path>,
) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let mut sink = [0u8; 4096];
    let _ = stream.read(&mut sink)?;
    let rel = url_path.trim_start_matches("/ui").trim_start_matches('/');
    let rel = rel.split(['?', '#']).next().unwrap_or("");
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel_path = Path::new(rel);
    let safe = rel_path.components().all(|c| matches!(c, Component::Normal(_)));
    let body = match ui_dir {
        Some(dir) if safe => std::fs::read(dir.join(rel_path)).ok(),
        _ => None,
    };
    match body {
        Some(body) => {
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                content_type(rel_path),
                body.len()
            )?;
            stream.write_all(&body)?;
        }
        None => {
            stream.write_all(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")?;
        }
    }
    stream.flush()?;
    Ok(())
}
