//! JSONL record schema shared by live sessions, simulations, replay and analysis.
//!
//! Each trial produces two files: an event log and a telemetry log. Both begin with a header
//! line carrying the resolved trial spec; every following line carries the session id and
//! config hash.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::ControlMode;
use crate::se3::Transform;
use crate::trial::{TrialEvent, TrialSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema version mismatch: log has v{found}, this build reads v{expected}")]
    Version { found: u32, expected: u32 },
    #[error("empty log")]
    Empty,
    #[error("line 1: expected a {expected} header, found a {found} header")]
    WrongKind { expected: LogKind, found: LogKind },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Events,
    Telemetry,
}

impl std::fmt::Display for LogKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LogKind::Events => "events",
            LogKind::Telemetry => "telemetry",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub kind: LogKind,
    pub session_id: String,
    pub config_hash: String,
    pub trial_id: u32,
    pub participant_id: String,
    pub mode: ControlMode,
    pub spec: TrialSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub session_id: String,
    pub config_hash: String,
    pub trial_id: u32,
    #[serde(flatten)]
    pub event: TrialEvent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Idle,
    Running,
    Completed,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Flags {
    pub velocity_saturated: bool,
    pub joint_limit_clamped: bool,
    pub workspace_clamped: bool,
    pub body_stale: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub index: usize,
    pub position: [f64; 3],
    pub tolerance: f64,
    pub dwell_progress: f64,
}

/// One tick's worth of session state. Telemetry lines and live snapshots share this shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub config_hash: String,
    pub trial_id: Option<u32>,
    pub tick: u64,
    pub t: f64,
    pub mode: ControlMode,
    pub q: Vec<f64>,
    /// Real effector `T_{W->E_R}`.
    pub effector: Transform<f64>,
    /// Virtual effector `T_{W->E_R*}` as produced by the control law.
    pub desired: Transform<f64>,
    /// Virtual effector expressed in the headset frame, for AR-style display.
    pub desired_headset: Transform<f64>,
    /// Body pose `T_{W->E_H}`.
    pub body: Transform<f64>,
    /// Body-frame pointer from the body to the virtual effector.
    pub link_body: [f64; 3],
    pub joystick_velocity: [f64; 3],
    pub target: Option<TargetInfo>,
    pub status: TrialStatus,
    pub targets_completed: usize,
    pub flags: Flags,
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("log records serialize")
}

/// One trial's event and telemetry streams.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialLog {
    pub header: LogHeader,
    pub events: Vec<EventRecord>,
    pub telemetry: Vec<Snapshot>,
}

impl TrialLog {
    pub fn events_jsonl(&self) -> String {
        let header = LogHeader {
            kind: LogKind::Events,
            ..self.header.clone()
        };
        let mut out = to_line(&header);
        out.push('\n');
        for e in &self.events {
            out.push_str(&to_line(e));
            out.push('\n');
        }
        out
    }

    pub fn telemetry_jsonl(&self) -> String {
        let header = LogHeader {
            kind: LogKind::Telemetry,
            ..self.header.clone()
        };
        let mut out = to_line(&header);
        out.push('\n');
        for s in &self.telemetry {
            out.push_str(&to_line(s));
            out.push('\n');
        }
        out
    }

    pub fn parse(events: &str, telemetry: &str) -> Result<Self, LogError> {
        let (header, events) = parse_events(events)?;
        let (_, telemetry) = parse_telemetry(telemetry)?;
        Ok(Self {
            header,
            events,
            telemetry,
        })
    }
}

fn parse_lines<R: for<'de> Deserialize<'de>>(
    text: &str,
    kind: LogKind,
) -> Result<(LogHeader, Vec<R>), LogError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(LogError::Empty)?;
    let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| LogError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if let Some(v) = raw.get("schema_version").and_then(|v| v.as_u64()) {
        if v != u64::from(SCHEMA_VERSION) {
            return Err(LogError::Version {
                found: v as u32,
                expected: SCHEMA_VERSION,
            });
        }
    }
    let header: LogHeader = serde_json::from_value(raw).map_err(|e| LogError::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.kind != kind {
        return Err(LogError::WrongKind {
            expected: kind,
            found: header.kind,
        });
    }
    let records = lines
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LogError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<R>, _>>()?;
    Ok((header, records))
}

pub fn parse_events(text: &str) -> Result<(LogHeader, Vec<EventRecord>), LogError> {
    parse_lines(text, LogKind::Events)
}

pub fn parse_telemetry(text: &str) -> Result<(LogHeader, Vec<Snapshot>), LogError> {
    parse_lines(text, LogKind::Telemetry)
}
