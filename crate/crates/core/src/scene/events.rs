use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Grab,
    Release,
    Pick,
    Place,
    Collapse,
    TowerComplete,
    GoalRejected,
    Fault,
    PhaseChange,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        Self::Grab,
        Self::Release,
        Self::Pick,
        Self::Place,
        Self::Collapse,
        Self::TowerComplete,
        Self::GoalRejected,
        Self::Fault,
        Self::PhaseChange,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Practice,
    Trial,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Practice => "practice",
            Phase::Trial => "trial",
            Phase::Done => "done",
        }
    }
}

/// One line of the session log: `{"t": .., "type": .., "detail": {..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEvent {
    /// Seconds since session start.
    pub t: f64,
    #[serde(rename = "type")]
    pub kind: EventKind,
    #[serde(default)]
    pub detail: Map<String, Value>,
}

impl SessionEvent {
    pub fn new(t: f64, kind: EventKind) -> Self {
        Self {
            t,
            kind,
            detail: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.detail.insert(key.to_owned(), value.into());
        self
    }

    /// Target phase of a `phase_change` event.
    pub fn phase_target(&self) -> Option<Phase> {
        if self.kind != EventKind::PhaseChange {
            return None;
        }
        serde_json::from_value(self.detail.get("to")?.clone()).ok()
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("events always serialize")
    }
}

/// Phase in effect for each event. Events before the first phase change count as practice.
pub fn annotate_phases(events: &[SessionEvent]) -> Vec<Phase> {
    let mut phase = Phase::Practice;
    events
        .iter()
        .map(|e| {
            if let Some(p) = e.phase_target() {
                phase = p;
            }
            phase
        })
        .collect()
}

/// Completed towers during the trial phase.
pub fn count_towers(events: &[SessionEvent]) -> usize {
    events
        .iter()
        .zip(annotate_phases(events))
        .filter(|(e, p)| e.kind == EventKind::TowerComplete && *p == Phase::Trial)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phase(t: f64, to: Phase) -> SessionEvent {
        SessionEvent::new(t, EventKind::PhaseChange).with("to", to.as_str())
    }

    #[test]
    fn json_shape() {
        let e = SessionEvent::new(1.5, EventKind::TowerComplete).with("cubes", vec![0, 1, 2]);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"t":1.5,"type":"tower_complete","detail":{"cubes":[0,1,2]}}"#);
        assert_eq!(serde_json::from_str::<SessionEvent>(&s).unwrap(), e);
    }

    #[test]
    fn towers_counted_in_trial_only() {
        let tc = |t| SessionEvent::new(t, EventKind::TowerComplete);
        assert_eq!(count_towers(&[]), 0);
        let log = vec![
            phase(0.0, Phase::Practice),
            tc(10.0),
            phase(300.0, Phase::Trial),
            tc(320.0),
            tc(350.0),
            tc(400.0),
            phase(900.0, Phase::Done),
        ];
        assert_eq!(count_towers(&log), 3);
        assert_eq!(count_towers(&log[..2]), 0);
    }
}
