//! Session-log metrics, rank tests and questionnaire summaries.

mod questionnaire;
mod stats;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::scene::{annotate_phases, EventKind, Phase, SessionEvent};

pub use questionnaire::{
    aggregate_items, read_questionnaire, summarize_questionnaire, tlx_raw, ItemSummary, Questionnaire,
    QuestionnaireRow, Scale, TlxSummary, TLX_SUBSCALES,
};
pub use stats::{
    binomial, mann_whitney_normal_p, mann_whitney_u, significance_tier, Method, TestResult, Tier, EXACT_LIMIT,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalysisError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: timestamp {t} is earlier than {prev}")]
    NonMonotone { line: usize, t: f64, prev: f64 },
    #[error("no pick events in the {0} phase; rates are undefined")]
    NoPicks(&'static str),
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("score {value} outside scale [{min}, {max}]")]
    OutOfScale { value: f64, min: f64, max: f64 },
    #[error("questionnaire: {0}")]
    Questionnaire(String),
}

/// Parsed session log. Lines carrying a `record` key (header, trailer) are kept aside.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionLog {
    pub events: Vec<SessionEvent>,
    /// Phase in effect for each event.
    pub phases: Vec<Phase>,
    pub records: Vec<Value>,
}

impl SessionLog {
    pub fn header(&self) -> Option<&Value> {
        self.records.iter().find(|r| r["record"] == "header")
    }

    pub fn in_phase(&self, phase: Phase) -> impl Iterator<Item = &SessionEvent> {
        self.events
            .iter()
            .zip(&self.phases)
            .filter(move |(_, p)| **p == phase)
            .map(|(e, _)| e)
    }

    pub fn is_practice(&self, i: usize) -> bool {
        self.phases[i] == Phase::Practice
    }
}

pub fn parse_session_str(text: &str) -> Result<SessionLog, AnalysisError> {
    let mut events = Vec::new();
    let mut records = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| AnalysisError::Malformed { line, message };
        let v: Value = serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
        if v.get("record").is_some() {
            records.push(v);
            continue;
        }
        let ev: SessionEvent = serde_json::from_value(v).map_err(|e| malformed(e.to_string()))?;
        if !ev.t.is_finite() {
            return Err(malformed(format!("timestamp {}", ev.t)));
        }
        if ev.t < prev {
            return Err(AnalysisError::NonMonotone { line, t: ev.t, prev });
        }
        prev = ev.t;
        events.push(ev);
    }
    let phases = annotate_phases(&events);
    Ok(SessionLog {
        events,
        phases,
        records,
    })
}

pub fn parse_session_log(path: &Path) -> Result<SessionLog, AnalysisError> {
    let text = std::fs::read_to_string(path).map_err(|e| AnalysisError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_session_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub placing_rate: f64,
    pub collapse_rate: f64,
    pub still_in_place_rate: f64,
    pub picks: u64,
    pub places: u64,
    pub collapses: u64,
}

impl Rates {
    pub fn from_counts(picks: u64, places: u64, collapses: u64) -> Option<Self> {
        if picks == 0 {
            return None;
        }
        let p = picks as f64;
        let placing_rate = places as f64 / p;
        let collapse_rate = collapses as f64 / p;
        Some(Self {
            placing_rate,
            collapse_rate,
            // difference of the two ratios keeps the identity exact in floating point
            still_in_place_rate: placing_rate - collapse_rate,
            picks,
            places,
            collapses,
        })
    }
}

pub fn compute_rates(log: &SessionLog, phase: Phase) -> Result<Rates, AnalysisError> {
    let (mut picks, mut places, mut collapses) = (0, 0, 0);
    for e in log.in_phase(phase) {
        match e.kind {
            EventKind::Pick => picks += 1,
            EventKind::Place => places += 1,
            EventKind::Collapse => collapses += 1,
            _ => {}
        }
    }
    Rates::from_counts(picks, places, collapses).ok_or(AnalysisError::NoPicks(phase.as_str()))
}

pub fn count_towers_in(log: &SessionLog, phase: Phase) -> usize {
    log.in_phase(phase)
        .filter(|e| e.kind == EventKind::TowerComplete)
        .count()
}

/// Percentage of sessions for each distinct tower count.
pub fn tower_histogram(counts: &[u32]) -> Result<BTreeMap<u32, f64>, AnalysisError> {
    if counts.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    let mut hist = BTreeMap::new();
    for c in counts {
        *hist.entry(*c).or_insert(0usize) += 1;
    }
    let total = counts.len() as f64;
    Ok(hist.into_iter().map(|(k, n)| (k, 100.0 * n as f64 / total)).collect())
}

/// Per-session scalar used by `compare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Towers,
    PlacingRate,
    CollapseRate,
    StillInPlaceRate,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_owned()))
            .map_err(|_| format!("unknown metric {s:?} (towers, placing_rate, collapse_rate, still_in_place_rate)"))
    }
}

pub fn session_metric(log: &SessionLog, metric: Metric, phase: Phase) -> Result<f64, AnalysisError> {
    Ok(match metric {
        Metric::Towers => count_towers_in(log, phase) as f64,
        Metric::PlacingRate => compute_rates(log, phase)?.placing_rate,
        Metric::CollapseRate => compute_rates(log, phase)?.collapse_rate,
        Metric::StillInPlaceRate => compute_rates(log, phase)?.still_in_place_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(t: f64, kind: &str) -> String {
        format!(r#"{{"t":{t},"type":"{kind}","detail":{{}}}}"#)
    }

    fn trial_log(picks: usize, places: usize, collapses: usize) -> SessionLog {
        let mut events = vec![SessionEvent::new(0.0, EventKind::PhaseChange).with("to", "trial")];
        let mut t = 1.0;
        for (kind, n) in [
            (EventKind::Pick, picks),
            (EventKind::Place, places),
            (EventKind::Collapse, collapses),
        ] {
            for _ in 0..n {
                events.push(SessionEvent::new(t, kind));
                t += 1.0;
            }
        }
        let phases = annotate_phases(&events);
        SessionLog {
            events,
            phases,
            records: vec![],
        }
    }

    #[test]
    fn three_lines() {
        let text = [line(0.0, "pick"), line(0.5, "place"), line(0.5, "collapse")].join("\n");
        let log = parse_session_str(&text).unwrap();
        assert_eq!(log.events.len(), 3);
        assert!(log.is_practice(0));
    }

    #[test]
    fn unknown_type_reports_line() {
        let text = [line(0.0, "pick"), line(1.0, "teleport")].join("\n");
        match parse_session_str(&text).unwrap_err() {
            AnalysisError::Malformed { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn non_monotone_rejected() {
        let text = [line(2.0, "pick"), line(1.0, "place")].join("\n");
        assert!(matches!(
            parse_session_str(&text),
            Err(AnalysisError::NonMonotone { line: 2, .. })
        ));
    }

    #[test]
    fn empty_and_records() {
        assert!(parse_session_str("").unwrap().events.is_empty());
        let text = format!("{{\"record\":\"header\",\"robot\":\"arm6\"}}\n{}\n", line(0.0, "pick"));
        let log = parse_session_str(&text).unwrap();
        assert_eq!(log.events.len(), 1);
        assert_eq!(log.header().unwrap()["robot"], "arm6");
    }

    #[test]
    fn figure_rates() {
        let r = compute_rates(&trial_log(10, 8, 2), Phase::Trial).unwrap();
        assert_eq!((r.placing_rate, r.collapse_rate), (0.8, 0.2));
        assert!((r.still_in_place_rate - 0.6).abs() < 1e-15);
        let r = compute_rates(&trial_log(4, 4, 0), Phase::Trial).unwrap();
        assert_eq!((r.placing_rate, r.still_in_place_rate), (1.0, 1.0));
        assert_eq!(
            compute_rates(&trial_log(0, 0, 0), Phase::Trial).unwrap_err(),
            AnalysisError::NoPicks("trial")
        );
        assert!(compute_rates(&trial_log(3, 1, 0), Phase::Practice).is_err());
    }

    #[test]
    fn histogram() {
        let h = tower_histogram(&[3, 3, 10]).unwrap();
        assert!((h[&3] - 200.0 / 3.0).abs() < 1e-12);
        assert!((h[&10] - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(tower_histogram(&[0]).unwrap()[&0], 100.0);
        assert!(tower_histogram(&[]).is_err());
    }

    #[test]
    fn metric_names() {
        assert_eq!(
            "still_in_place_rate".parse::<Metric>().unwrap(),
            Metric::StillInPlaceRate
        );
        assert!("speed".parse::<Metric>().is_err());
    }

    proptest! {
        #[test]
        fn histogram_sums_to_100(counts in proptest::collection::vec(0u32..12, 1..200)) {
            let total: f64 = tower_histogram(&counts).unwrap().values().sum();
            prop_assert!((total - 100.0).abs() < 1e-9);
        }
    }
}
