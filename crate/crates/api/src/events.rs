//! The client-facing event stream, derived from session log entries.

use std::collections::HashMap;
use std::sync::Mutex;

use candor_core::orchestrator::EventListener;
use candor_core::session::Record;
use candor_core::store::LogEntry;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

const CHANNEL_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Reserved for streaming recognition; not emitted by batch transcription.
    TranscriptPartial,
    ClinicianTurn,
    TurnFeedback,
    PatientText,
    PatientAudioReady,
    SessionEnded,
    Error,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::TranscriptPartial => "transcript_partial",
            EventKind::ClinicianTurn => "clinician_turn",
            EventKind::TurnFeedback => "turn_feedback",
            EventKind::PatientText => "patient_text",
            EventKind::PatientAudioReady => "patient_audio_ready",
            EventKind::SessionEnded => "session_ended",
            EventKind::Error => "error",
        }
    }
}

/// `seq` is the sequence number of the log entry the event came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEvent {
    pub session_id: String,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
}

/// The event for a log entry; bookkeeping records have none.
pub fn event_for(session_id: &str, entry: &LogEntry) -> Option<ApiEvent> {
    let (kind, payload) = match &entry.record {
        Record::ClinicianTurn { turn } => (EventKind::ClinicianTurn, json!({ "turn": turn })),
        Record::TurnFeedbackRecorded { record } => (EventKind::TurnFeedback, json!({ "feedback": record })),
        Record::PatientTurn { turn, utterance, .. } => {
            (EventKind::PatientText, json!({ "turn": turn, "utterance": utterance }))
        }
        Record::AudioAttached { turn_index, blob } => (
            EventKind::PatientAudioReady,
            json!({ "turn_index": turn_index, "blob": blob, "url": format!("/audio/{}", blob.0) }),
        ),
        Record::SessionEnded { reason, report } => {
            (EventKind::SessionEnded, json!({ "reason": reason, "report": report }))
        }
        Record::OverallRecorded { report } => (EventKind::SessionEnded, json!({ "reason": null, "report": report })),
        Record::TurnAborted { step, error } => (EventKind::Error, json!({ "step": step, "message": error })),
        _ => return None,
    };
    Some(ApiEvent {
        session_id: session_id.to_string(),
        seq: entry.seq,
        kind,
        payload,
    })
}

/// Fans persisted entries out to stream subscribers, per session.
#[derive(Default)]
pub struct EventHub {
    channels: Mutex<HashMap<String, broadcast::Sender<ApiEvent>>>,
}

impl EventHub {
    pub fn subscribe(&self, session_id: &str) -> broadcast::Receiver<ApiEvent> {
        let mut ch = self.channels.lock().expect("hub lock");
        ch.entry(session_id.to_string())
            .or_insert_with(|| broadcast::channel(CHANNEL_CAPACITY).0)
            .subscribe()
    }
}

impl EventListener for EventHub {
    fn on_entries(&self, session_id: &str, entries: &[LogEntry]) {
        let mut ch = self.channels.lock().expect("hub lock");
        let Some(tx) = ch.get(session_id) else {
            return;
        };
        for e in entries.iter().filter_map(|e| event_for(session_id, e)) {
            // no receivers left
            if tx.send(e).is_err() {
                ch.remove(session_id);
                return;
            }
        }
    }
}
