//! Append-only episode record, serialized as newline-delimited JSON.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::toolbox::Scope;
use crate::twin::report::{ErrorSample, GsnrSample};
use crate::twin::telemetry::Alarm;
use crate::twin::TelemetryMode;

use super::strategy::{Strategy, Verdict};
use super::AgentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    /// `channel_drop`, `fiber_cut` or `replace_request`.
    pub kind: String,
    pub link: Option<String>,
    pub span: Option<String>,
    pub channels: Vec<usize>,
    /// Signal lightpaths affected by the incident.
    pub lightpaths: Vec<String>,
    /// Link whose amplifiers should be re-optimized, if any.
    pub reoptimize_link: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Monitor {
        records: usize,
        alarms: usize,
    },
    Calibrated {
        mode: TelemetryMode,
        initial_mse_db2: f64,
        residual_mse_db2: f64,
    },
    Injected {
        injected: Value,
    },
    Detect {
        alarms: Vec<Alarm>,
    },
    /// Transponder GSNR readings of the channels under test.
    Observed {
        phase: String,
        min_cut_db: Option<f64>,
        samples: Vec<GsnrSample>,
    },
    Diagnosis {
        diagnosis: Diagnosis,
    },
    Prompt {
        turn: u64,
        kind: String,
        retrieved_ids: Vec<String>,
        warnings: Vec<String>,
        chars: usize,
        user_event: String,
    },
    Response {
        turn: u64,
        backend: String,
        text: String,
    },
    MalformedAction {
        turn: u64,
        error: String,
    },
    ToolCall {
        turn: u64,
        tool: String,
        request: Value,
        summary: String,
    },
    ToolError {
        turn: u64,
        tool: String,
        error: String,
    },
    Candidate {
        strategy: Strategy,
    },
    Verdict {
        strategy: Strategy,
        verdict: Verdict,
    },
    ScopeDecision {
        delta_db: f64,
        extra_amps: usize,
        threshold_db_per_amp: f64,
        scope: Scope,
        chosen: String,
    },
    DeployRefused {
        turn: u64,
        strategy_id: String,
        reason: String,
    },
    Deploy {
        strategy: Strategy,
    },
    Confirm {
        strategy_id: String,
        samples: usize,
        mean_db: f64,
        mean_abs_db: f64,
        measured_min_cut_db: f64,
        predicted_min_cut_db: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rx_tilt_before_db: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rx_tilt_after_db: Option<f64>,
        table: Vec<ErrorSample>,
    },
    CalibrationRecommended {
        mean_abs_db: f64,
    },
    Resolved {
        note: String,
    },
    Escalation {
        reason: String,
    },
    Failure {
        error: String,
    },
}

impl EventKind {
    pub fn name(&self) -> String {
        serde_json::to_value(self).expect("events serialize")["event"]
            .as_str()
            .expect("tagged")
            .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub id: u64,
    /// Logical time.
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn push(&mut self, tick: u64, kind: EventKind) -> u64 {
        let id = self.events.len() as u64;
        self.events.push(TranscriptEvent { id, tick, kind });
        id
    }

    pub fn events(&self) -> &[TranscriptEvent] {
        &self.events
    }

    pub fn get(&self, id: u64) -> Option<&TranscriptEvent> {
        self.events.get(id as usize)
    }

    pub fn names(&self) -> Vec<String> {
        self.events.iter().map(|e| e.kind.name()).collect()
    }

    pub fn to_ndjson(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("events serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_ndjson(text: &str) -> Result<Self, AgentError> {
        let mut t = Transcript::default();
        for (n, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let e: TranscriptEvent =
                serde_json::from_str(line).map_err(|e| AgentError::Config(format!("transcript line {}: {e}", n + 1)))?;
            if e.id != t.events.len() as u64 {
                return Err(AgentError::Config(format!("transcript line {} has id {}", n + 1, e.id)));
            }
            t.events.push(e);
        }
        Ok(t)
    }
}

/// Every deployment must be preceded by an approved verdict on the identical strategy.
pub fn check_safety(t: &Transcript) -> Result<(), AgentError> {
    let mut approved: Vec<&Strategy> = Vec::new();
    for e in t.events() {
        match &e.kind {
            EventKind::Verdict { strategy, verdict } if verdict.approved && verdict.strategy_id == strategy.id => {
                approved.push(strategy);
            }
            EventKind::Deploy { strategy } if !approved.contains(&strategy) => {
                return Err(AgentError::Unsafe(format!(
                    "event {} deploys {} without a prior approved verdict",
                    e.id, strategy.id
                )));
            }
            _ => {}
        }
    }
    Ok(())
}
