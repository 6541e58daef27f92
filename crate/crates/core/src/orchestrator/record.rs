use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::AppConfig;
use crate::scene::SessionEvent;

/// JSONL session log: a header record, one line per event, a shutdown record.
pub struct SessionRecorder {
    out: Box<dyn Write + Send>,
    events: usize,
    last_t: f64,
    closed: bool,
}

pub fn header_record(cfg: &AppConfig, start: chrono::DateTime<chrono::Utc>) -> Value {
    json!({
        "record": "header",
        "config_hash": cfg.hash(),
        "robot": cfg.arm_file.as_ref().map_or(cfg.robot.clone(), |p| p.display().to_string()),
        "start_time": start.to_rfc3339(),
        "seed": cfg.autopilot.seed,
    })
}

impl SessionRecorder {
    pub fn new(out: Box<dyn Write + Send>, header: &Value) -> std::io::Result<Self> {
        let mut r = Self {
            out,
            events: 0,
            last_t: 0.0,
            closed: false,
        };
        r.line(header)?;
        r.out.flush()?;
        Ok(r)
    }

    pub fn create(path: &Path, header: &Value) -> std::io::Result<Self> {
        Self::new(Box::new(BufWriter::new(File::create(path)?)), header)
    }

    fn line(&mut self, v: &Value) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, v)?;
        self.out.write_all(b"\n")
    }

    pub fn record(&mut self, ev: &SessionEvent) -> std::io::Result<()> {
        debug_assert!(ev.t >= self.last_t, "events out of order");
        self.last_t = ev.t;
        self.events += 1;
        self.line(&ev.to_json())
    }

    pub fn events(&self) -> usize {
        self.events
    }

    /// Writes the shutdown record and flushes. Later calls do nothing.
    pub fn finish(&mut self, t: f64, reason: &str, towers: usize) -> std::io::Result<()> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        let rec = json!({
            "record": "shutdown",
            "t": t,
            "reason": reason,
            "events": self.events,
            "towers": towers,
        });
        self.line(&rec)?;
        self.out.flush()
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}
