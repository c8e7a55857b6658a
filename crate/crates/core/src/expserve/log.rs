//! Replay of per-experiment JSONL event logs.

use serde::{Deserialize, Serialize};

use super::{EventRecord, ExperimentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogPosition {
    /// 1-based line of the offending record.
    pub line: u64,
    pub byte_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayErrorKind {
    /// The final record has no terminating newline: a write cut short.
    Truncated,
    /// A complete record that does not parse or does not apply.
    Corrupt,
}

/// Replay failure. `recovered` is the state after the valid prefix of
/// `valid_len` bytes and `events` records.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind:?} event log record at line {}, byte {}: {message}", position.line, position.byte_offset)]
pub struct ReplayError {
    pub kind: ReplayErrorKind,
    pub position: LogPosition,
    pub message: String,
    pub valid_len: u64,
    pub events: u64,
    pub recovered: Option<Box<ExperimentState>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replayed {
    /// `None` for an empty log.
    pub state: Option<ExperimentState>,
    pub events: u64,
    pub valid_len: u64,
}

/// Rebuilds an experiment from the bytes of its log.
pub fn replay_log(bytes: &[u8]) -> Result<Replayed, ReplayError> {
    replay_from(None, bytes, 0)
}

/// Continues replay from `offset`, which must follow the last event folded
/// into `state`.
pub(crate) fn replay_from(
    mut state: Option<ExperimentState>,
    bytes: &[u8],
    offset: u64,
) -> Result<Replayed, ReplayError> {
    let mut events = state.as_ref().map_or(0, |s| s.as_of);
    let mut pos = offset as usize;
    let fail = |kind, pos: usize, events: u64, message: String, state: Option<ExperimentState>| ReplayError {
        kind,
        position: LogPosition { line: events + 1, byte_offset: pos as u64 },
        message,
        valid_len: pos as u64,
        events,
        recovered: state.map(Box::new),
    };
    if pos > bytes.len() || (pos > 0 && bytes[pos - 1] != b'\n') {
        return Err(fail(
            ReplayErrorKind::Corrupt,
            pos.min(bytes.len()),
            events,
            "offset is not a record boundary".into(),
            state,
        ));
    }
    while pos < bytes.len() {
        let Some(len) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(fail(
                ReplayErrorKind::Truncated,
                pos,
                events,
                "record has no terminating newline".into(),
                state,
            ));
        };
        let record: EventRecord = match serde_json::from_slice(&bytes[pos..pos + len]) {
            Ok(r) => r,
            Err(e) => return Err(fail(ReplayErrorKind::Corrupt, pos, events, e.to_string(), state)),
        };
        if let Err(e) = ExperimentState::apply(&mut state, &record) {
            return Err(fail(ReplayErrorKind::Corrupt, pos, events, e.to_string(), state));
        }
        events += 1;
        pos += len + 1;
    }
    Ok(Replayed { state, events, valid_len: pos as u64 })
}
