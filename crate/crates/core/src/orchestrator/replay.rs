use std::path::Path;
use std::time::{Duration, Instant};

use serde_json::Value;

use crate::bus::schema::encode_event_json;
use crate::bus::{topics, Bus, BusError, SchemaId};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt session log at byte {offset}: {message}")]
    Corrupt { offset: usize, message: String },
    #[error("replay speed {0} must be positive and finite")]
    Speed(f64),
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// One event line of a session log and where it starts in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedEvent {
    pub offset: usize,
    pub t: f64,
    pub json: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedSession {
    pub header: Value,
    pub events: Vec<LoggedEvent>,
    pub shutdown: Value,
}

fn corrupt(offset: usize, message: impl Into<String>) -> ReplayError {
    ReplayError::Corrupt {
        offset,
        message: message.into(),
    }
}

/// Parses a complete session log. Anything after a missing newline, a
/// malformed line, or a log without its shutdown record counts as corrupt.
pub fn parse_record(bytes: &[u8]) -> Result<LoggedSession, ReplayError> {
    let mut header = None;
    let mut shutdown = None;
    let mut events = Vec::new();
    let mut offset = 0;
    let mut prev_t = f64::NEG_INFINITY;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(corrupt(offset, "truncated line"));
        };
        let line = &rest[..nl];
        let start = offset;
        offset += nl + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        if shutdown.is_some() {
            return Err(corrupt(start, "data after shutdown record"));
        }
        let v: Value = serde_json::from_slice(line).map_err(|e| corrupt(start, e.to_string()))?;
        match v.get("record").and_then(Value::as_str) {
            Some("header") if header.is_none() && events.is_empty() => header = Some(v),
            Some("shutdown") if header.is_some() => shutdown = Some(v),
            Some(other) => return Err(corrupt(start, format!("unexpected `{other}` record"))),
            None => {
                if header.is_none() {
                    return Err(corrupt(start, "missing header record"));
                }
                let t = v
                    .get("t")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| corrupt(start, "event without numeric `t`"))?;
                if v.get("type").and_then(Value::as_str).is_none() {
                    return Err(corrupt(start, "event without `type`"));
                }
                if t < prev_t {
                    return Err(corrupt(start, format!("time goes backwards ({t} < {prev_t})")));
                }
                prev_t = t;
                events.push(LoggedEvent {
                    offset: start,
                    t,
                    json: v,
                });
            }
        }
    }
    let header = header.ok_or_else(|| corrupt(0, "missing header record"))?;
    let shutdown = shutdown.ok_or_else(|| corrupt(bytes.len(), "missing shutdown record"))?;
    Ok(LoggedSession {
        header,
        events,
        shutdown,
    })
}

pub fn read_record(path: &Path) -> Result<LoggedSession, ReplayError> {
    let bytes = std::fs::read(path).map_err(|source| ReplayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_record(&bytes)
}

/// Republishes the logged events on `/world/events`, event `t` mapped to
/// wall time `t / speed` after the call starts. Returns the wall time taken.
pub fn replay(bus: &Bus, session: &LoggedSession, speed: f64) -> Result<Duration, ReplayError> {
    if !(speed.is_finite() && speed > 0.0) {
        return Err(ReplayError::Speed(speed));
    }
    let start = Instant::now();
    for ev in &session.events {
        let due = start + Duration::from_secs_f64(ev.t.max(0.0) / speed);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        let payload = encode_event_json(&ev.json).map_err(|e| corrupt(ev.offset, e.to_string()))?;
        bus.publish(topics::WORLD_EVENTS, SchemaId::Event, payload)?;
    }
    if let Some(end) = session.shutdown.get("t").and_then(Value::as_f64) {
        let due = start + Duration::from_secs_f64(end.max(0.0) / speed);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
    Ok(start.elapsed())
}
