//! Re-executes a recorded session against scripted providers and compares
//! the artifacts it produces with the original log.

use std::path::Path;
use std::sync::Arc;

use chrono::Duration;
use serde_json::Value;
use thiserror::Error;

use crate::asymmetry::Stopwords;
use crate::orchestrator::{ClinicianInput, IdGenerator, Orchestrator, OrchestratorError, StepClock};
use crate::prompts::PromptTemplates;
use crate::provider::ProviderFactory;
use crate::session::{EndReason, Record};
use crate::store::{LogEntry, SessionStore, StoreError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("log does not start with a session_created record")]
    NotCreated,
    #[error("clinician audio blob {0} is missing")]
    MissingAudio(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

/// Hands out one fixed id.
pub struct FixedId(pub String);

impl IdGenerator for FixedId {
    fn next_id(&self) -> String {
        self.0.clone()
    }
}

fn strip_times(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("created_at");
            m.values_mut().for_each(strip_times);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_times),
        _ => {}
    }
}

/// The artifacts of a log: one compact JSON line per record, wall-clock
/// timestamps removed. Aborted turns leave no artifacts.
pub fn artifact_lines(entries: &[LogEntry]) -> Vec<String> {
    entries
        .iter()
        .filter(|e| !matches!(e.record, Record::TurnAborted { .. }))
        .map(|e| {
            let mut v = serde_json::to_value(&e.record).expect("record serializes");
            strip_times(&mut v);
            v.to_string()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactDiff {
    pub index: usize,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

pub fn diff_artifacts(expected: &[String], actual: &[String]) -> Vec<ArtifactDiff> {
    (0..expected.len().max(actual.len()))
        .filter_map(|i| {
            let (e, a) = (expected.get(i), actual.get(i));
            (e != a).then(|| ArtifactDiff {
                index: i,
                expected: e.cloned(),
                actual: a.cloned(),
            })
        })
        .collect()
}

/// Drives a fresh orchestrator in `work_dir` with the clinician inputs and
/// end requests recorded in `entries`. The clock restarts at the original
/// creation time with one second per reading, which reproduces logs that
/// were written with the same clock byte for byte.
///
/// A step that fails during replay stops it; the log so far is returned so
/// the caller sees the divergence as a diff.
pub fn reexecute(
    entries: &[LogEntry],
    blobs: &SessionStore,
    factory: Arc<dyn ProviderFactory>,
    templates: &PromptTemplates,
    stopwords: &Stopwords,
    work_dir: &Path,
) -> Result<Vec<LogEntry>, ReplayError> {
    let Some(Record::SessionCreated {
        session_id,
        case,
        options,
        created_at,
        ..
    }) = entries.first().map(|e| &e.record)
    else {
        return Err(ReplayError::NotCreated);
    };
    let o = Orchestrator::new(SessionStore::open(work_dir)?, factory)
        .with_templates(templates.clone())
        .with_stopwords(stopwords.clone())
        .with_clock(Arc::new(StepClock::new(*created_at, Duration::seconds(1))))
        .with_ids(Arc::new(FixedId(session_id.clone())));
    o.create_session(case.clone(), options.clone())?;
    let committed = |txn: Option<u64>| {
        entries
            .iter()
            .any(|e| e.txn == txn && matches!(e.record, Record::TurnCommitted { .. }))
    };
    for e in &entries[1..] {
        let outcome = match &e.record {
            Record::ClinicianTurn { turn } if committed(e.txn) => {
                let input = match &turn.audio_ref {
                    Some(b) => ClinicianInput::Audio(
                        blobs.get_blob(b)?.ok_or_else(|| ReplayError::MissingAudio(b.0.clone()))?,
                    ),
                    None => ClinicianInput::Text(turn.transcript.clone()),
                };
                o.submit_clinician_turn(session_id, input).map(drop)
            }
            Record::SessionEnded {
                reason: EndReason::ClinicianEnded,
                ..
            }
            | Record::OverallRecorded { .. } => o.end_session(session_id).map(drop),
            _ => Ok(()),
        };
        if let Err(err) = outcome {
            tracing::warn!(error = %err, "replay diverged");
            break;
        }
    }
    Ok(o.entries(session_id)?)
}
