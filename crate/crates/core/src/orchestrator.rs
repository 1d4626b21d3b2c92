//! The clinician turn state machine.
//!
//! A turn runs seven steps (transcribe, update the knowledge partition,
//! classify the stage, turn feedback, digest, patient reply, synthesis)
//! against a snapshot of the session. Nothing is persisted until every step
//! has succeeded; the records are then appended in one write, applied to
//! the snapshot and published. A failure appends only a `turn_aborted`
//! marker, which replay ignores.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asymmetry::{make_digest, update_partition, Stopwords};
use crate::classifier::{classify_stage, ClassificationOutcome, ClassifyError, StageRequest};
use crate::domain::{
    BlobRef, CaseError, CaseId, CaseScenario, FeedbackRecord, OverallFeedback, PatientUtterance, Speaker,
    StageLabelSet, Turn, EvaluatorDigest,
};
use crate::evaluator::{generate_overall_feedback, generate_turn_feedback, EvalError};
use crate::extraction::{extract_case, ExtractError};
use crate::patient::{generate_patient_utterance, initial_partition, synthesize_patient_audio, PatientError};
use crate::prompts::PromptTemplates;
use crate::provider::{ProviderError, ProviderFactory, Providers};
use crate::session::{EndReason, Phase, PipelineStep, Record, SessionOptions, SessionState};
use crate::store::{LogEntry, LogWriter, Pending, SessionStore, StoreError};

/// Provider context used for bespoke case extraction.
pub const EXTRACTION_CONTEXT: &str = "case-extraction";

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Starts at a fixed instant and advances one step per reading.
pub struct StepClock {
    start: DateTime<Utc>,
    step: Duration,
    ticks: AtomicU64,
}

impl StepClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        StepClock {
            start,
            step,
            ticks: AtomicU64::new(0),
        }
    }
}

impl Clock for StepClock {
    fn now(&self) -> DateTime<Utc> {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + self.step * n as i32
    }
}

pub trait IdGenerator: Send + Sync {
    fn next_id(&self) -> String;
}

pub struct UuidIds;

impl IdGenerator for UuidIds {
    fn next_id(&self) -> String {
        uuid::Uuid::new_v4().simple().to_string()
    }
}

/// `prefix-1`, `prefix-2`, ...
pub struct SequentialIds {
    prefix: String,
    next: AtomicU64,
}

impl SequentialIds {
    pub fn new(prefix: impl Into<String>) -> Self {
        SequentialIds {
            prefix: prefix.into(),
            next: AtomicU64::new(1),
        }
    }
}

impl IdGenerator for SequentialIds {
    fn next_id(&self) -> String {
        format!("{}-{}", self.prefix, self.next.fetch_add(1, Ordering::SeqCst))
    }
}

/// Called before each pipeline step; an error aborts the turn. Used for
/// fault injection.
pub trait FaultHook: Send + Sync {
    fn before_step(&self, session_id: &str, step: PipelineStep) -> Result<(), String>;
}

pub struct NoFaults;

impl FaultHook for NoFaults {
    fn before_step(&self, _: &str, _: PipelineStep) -> Result<(), String> {
        Ok(())
    }
}

/// Receives log entries as they are persisted, in log order per session.
pub trait EventListener: Send + Sync {
    fn on_entries(&self, session_id: &str, entries: &[LogEntry]);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClinicianInput {
    Text(String),
    Audio(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnResult {
    pub clinician_turn: Turn,
    pub stages: StageLabelSet,
    /// Absent when the session only shows overall feedback.
    pub feedback: Option<FeedbackRecord>,
    pub patient_turn: Turn,
    pub utterance: PatientUtterance,
    pub ended: bool,
    pub overall: Option<OverallFeedback>,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("invalid case: {0}")]
    InvalidCase(#[from] CaseError),
    #[error("session {0} has ended")]
    SessionEnded(String),
    #[error("a turn is already in progress for session {0}")]
    TurnInFlight(String),
    #[error("session has no turns yet")]
    NoTurns,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("turn aborted at {step:?}: {error}")]
    Aborted {
        step: PipelineStep,
        error: String,
        provider: Option<ProviderError>,
    },
    #[error(transparent)]
    Provider(ProviderError),
    #[error(transparent)]
    Extract(ExtractError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

struct SessionHandle {
    state: RwLock<SessionState>,
    writer: Mutex<LogWriter>,
    providers: Providers,
}

struct StepFailure {
    step: PipelineStep,
    error: String,
    provider: Option<ProviderError>,
}

impl StepFailure {
    fn provider(step: PipelineStep, e: ProviderError) -> Self {
        StepFailure {
            step,
            error: e.to_string(),
            provider: Some(e),
        }
    }

    fn other(step: PipelineStep, error: impl Into<String>) -> Self {
        StepFailure {
            step,
            error: error.into(),
            provider: None,
        }
    }
}

/// Everything a successful pipeline run produced, not yet persisted.
struct Staged {
    clinician_audio: Option<Vec<u8>>,
    records: Vec<Record>,
    patient_audio: Option<Vec<u8>>,
    patient_index: usize,
}

pub struct Orchestrator {
    store: SessionStore,
    factory: Arc<dyn ProviderFactory>,
    templates: Arc<PromptTemplates>,
    stopwords: Arc<Stopwords>,
    clock: Arc<dyn Clock>,
    ids: Arc<dyn IdGenerator>,
    hook: Arc<dyn FaultHook>,
    listeners: RwLock<Vec<Arc<dyn EventListener>>>,
    sessions: Mutex<HashMap<String, Arc<SessionHandle>>>,
}

fn lock_poisoned<T>(_: T) -> OrchestratorError {
    OrchestratorError::Store(StoreError::Io(std::io::Error::other("lock poisoned")))
}

impl Orchestrator {
    pub fn new(store: SessionStore, factory: Arc<dyn ProviderFactory>) -> Self {
        Orchestrator {
            store,
            factory,
            templates: Arc::new(PromptTemplates::builtin().clone()),
            stopwords: Arc::new(Stopwords::builtin().clone()),
            clock: Arc::new(SystemClock),
            ids: Arc::new(UuidIds),
            hook: Arc::new(NoFaults),
            listeners: RwLock::new(Vec::new()),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_templates(mut self, t: PromptTemplates) -> Self {
        self.templates = Arc::new(t);
        self
    }

    pub fn with_stopwords(mut self, s: Stopwords) -> Self {
        self.stopwords = Arc::new(s);
        self
    }

    pub fn with_clock(mut self, c: Arc<dyn Clock>) -> Self {
        self.clock = c;
        self
    }

    pub fn with_ids(mut self, ids: Arc<dyn IdGenerator>) -> Self {
        self.ids = ids;
        self
    }

    pub fn with_fault_hook(mut self, hook: Arc<dyn FaultHook>) -> Self {
        self.hook = hook;
        self
    }

    pub fn add_listener(&self, l: Arc<dyn EventListener>) {
        self.listeners.write().expect("listener lock").push(l);
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    fn publish(&self, session_id: &str, entries: &[LogEntry]) {
        for l in self.listeners.read().expect("listener lock").iter() {
            l.on_entries(session_id, entries);
        }
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, OrchestratorError> {
        let mut sessions = self.sessions.lock().map_err(lock_poisoned)?;
        if let Some(h) = sessions.get(id) {
            return Ok(h.clone());
        }
        if !self.store.exists(id) {
            return Err(OrchestratorError::SessionNotFound(id.to_string()));
        }
        let (replayed, writer) = self.store.reopen(id)?;
        let h = Arc::new(SessionHandle {
            state: RwLock::new(replayed.state),
            writer: Mutex::new(writer),
            providers: self.factory.session(id),
        });
        sessions.insert(id.to_string(), h.clone());
        Ok(h)
    }

    pub fn create_session(&self, case: CaseScenario, options: SessionOptions) -> Result<SessionState, OrchestratorError> {
        case.validate()?;
        if options.window == 0 || options.turn_budget == 0 {
            return Err(OrchestratorError::InvalidInput(
                "window and turn_budget must be positive".into(),
            ));
        }
        let id = self.ids.next_id();
        let record = Record::SessionCreated {
            session_id: id.clone(),
            partition: initial_partition(&case, &self.templates, &self.stopwords),
            affect: case.initial_affect(),
            case,
            options,
            template_id: self.templates.template_id(),
            stopwords_hash: self.stopwords.hash().to_string(),
            created_at: self.clock.now(),
        };
        let state = SessionState::from_created(&record).expect("creation record");
        let mut writer = self.store.create(&id)?;
        let entries = writer.append(vec![Pending {
            txn: None,
            at: self.clock.now(),
            record,
        }])?;
        let h = Arc::new(SessionHandle {
            state: RwLock::new(state.clone()),
            writer: Mutex::new(writer),
            providers: self.factory.session(&id),
        });
        self.sessions.lock().map_err(lock_poisoned)?.insert(id.clone(), h);
        self.publish(&id, &entries);
        Ok(state)
    }

    /// The committed state of a session.
    pub fn session(&self, id: &str) -> Result<SessionState, OrchestratorError> {
        let h = self.handle(id)?;
        let s = h.state.read().map_err(lock_poisoned)?.clone();
        Ok(s)
    }

    /// All persisted log entries of a session.
    pub fn entries(&self, id: &str) -> Result<Vec<LogEntry>, OrchestratorError> {
        self.handle(id)?;
        Ok(self.store.replay(id)?.entries)
    }

    /// Log entries with `seq` at least `from`, read while holding the
    /// session's write lock so nothing is appended concurrently; `f` runs
    /// under the same lock, e.g. to subscribe for later entries.
    pub fn entries_then<R>(&self, id: &str, from: u64, f: impl FnOnce() -> R) -> Result<(Vec<LogEntry>, R), OrchestratorError> {
        let h = self.handle(id)?;
        let _w = h.writer.lock().map_err(lock_poisoned)?;
        let entries = self.store.replay(id)?.entries.into_iter().filter(|e| e.seq >= from).collect();
        Ok((entries, f()))
    }

    pub fn blob(&self, blob: &BlobRef) -> Result<Option<Vec<u8>>, OrchestratorError> {
        Ok(self.store.get_blob(blob)?)
    }

    pub fn extract_case(&self, description: &str) -> Result<CaseScenario, OrchestratorError> {
        self.extract_case_from(ClinicianInput::Text(description.to_string()))
    }

    /// Like [`Orchestrator::extract_case`], for a typed or dictated description.
    pub fn extract_case_from(&self, description: ClinicianInput) -> Result<CaseScenario, OrchestratorError> {
        let providers = self.factory.session(EXTRACTION_CONTEXT);
        let description = match description {
            ClinicianInput::Text(t) => t,
            ClinicianInput::Audio(a) => providers.stt.transcribe(&a).map_err(OrchestratorError::Provider)?,
        };
        let id = CaseId(format!("bespoke-{}", self.ids.next_id()));
        extract_case(providers.chat.as_ref(), &self.templates, &description, id).map_err(OrchestratorError::Extract)
    }

    fn append(&self, id: &str, w: &mut LogWriter, pending: Vec<Pending>) -> Result<Vec<LogEntry>, OrchestratorError> {
        let entries = w.append(pending)?;
        self.publish(id, &entries);
        Ok(entries)
    }

    pub fn submit_clinician_turn(&self, id: &str, input: ClinicianInput) -> Result<TurnResult, OrchestratorError> {
        if let ClinicianInput::Text(t) = &input {
            if t.trim().is_empty() {
                return Err(OrchestratorError::InvalidInput("clinician text is empty".into()));
            }
        }
        if let ClinicianInput::Audio(a) = &input {
            if a.is_empty() {
                return Err(OrchestratorError::InvalidInput("audio is empty".into()));
            }
        }
        let h = self.handle(id)?;
        let mut w = match h.writer.try_lock() {
            Ok(w) => w,
            Err(TryLockError::WouldBlock) => return Err(OrchestratorError::TurnInFlight(id.to_string())),
            Err(TryLockError::Poisoned(e)) => return Err(lock_poisoned(e)),
        };
        let state = h.state.read().map_err(lock_poisoned)?.clone();
        if state.phase == Phase::Ended {
            return Err(OrchestratorError::SessionEnded(id.to_string()));
        }
        let txn = w.begin_txn();
        let staged = match self.run_pipeline(id, &h.providers, &state, input) {
            Ok(s) => s,
            Err(f) => {
                tracing::warn!(session = id, step = ?f.step, error = %f.error, "turn aborted");
                let marker = Pending {
                    txn: Some(txn),
                    at: self.clock.now(),
                    record: Record::TurnAborted {
                        step: f.step,
                        error: f.error.clone(),
                    },
                };
                if let Err(e) = self.append(id, &mut w, vec![marker]) {
                    tracing::error!(session = id, error = %e, "could not record aborted turn");
                }
                return Err(OrchestratorError::Aborted {
                    step: f.step,
                    error: f.error,
                    provider: f.provider,
                });
            }
        };

        let mut records = staged.records;
        if let Some(a) = &staged.clinician_audio {
            self.store.put_blob(a)?;
        }
        if let Some(a) = &staged.patient_audio {
            let blob = self.store.put_blob(a)?;
            records.push(Record::AudioAttached {
                turn_index: staged.patient_index,
                blob,
            });
        }
        let mut next = state.clone();
        for r in &records {
            next.apply(r).expect("pipeline records apply to their own snapshot");
        }
        let ended = next.phase == Phase::Ended;
        records.push(Record::TurnCommitted { ended });
        let at = self.clock.now();
        let pending = records
            .into_iter()
            .map(|record| Pending {
                txn: Some(txn),
                at,
                record,
            })
            .collect();
        self.append(id, &mut w, pending)?;
        *h.state.write().map_err(lock_poisoned)? = next.clone();

        if ended {
            let report = generate_overall_feedback(
                h.providers.chat.as_ref(),
                &self.templates,
                &next.evaluator,
                &next.case,
                &next.turns,
            );
            let report = match report {
                Ok(r) => Some(r),
                Err(e) => {
                    tracing::warn!(session = id, error = %e, "overall feedback deferred");
                    None
                }
            };
            let rec = Record::SessionEnded {
                reason: EndReason::PatientClosed,
                report,
            };
            self.commit_standalone(id, &h, &mut w, rec)?;
        }

        let fin = h.state.read().map_err(lock_poisoned)?.clone();
        let k = staged.patient_index;
        let feedback = fin.feedback.last().cloned().filter(|_| fin.options.feedback_mode.shows_turn_feedback());
        Ok(TurnResult {
            clinician_turn: fin.turns[k - 1].clone(),
            stages: fin.stage_history.last().cloned().expect("classified"),
            feedback,
            patient_turn: fin.turns[k].clone(),
            utterance: fin.utterances.last().cloned().expect("patient reply"),
            ended,
            overall: fin.overall.clone(),
        })
    }

    fn commit_standalone(
        &self,
        id: &str,
        h: &SessionHandle,
        w: &mut LogWriter,
        record: Record,
    ) -> Result<(), OrchestratorError> {
        let mut next = h.state.read().map_err(lock_poisoned)?.clone();
        next.apply(&record).map_err(|e| StoreError::Apply(e))?;
        self.append(
            id,
            w,
            vec![Pending {
                txn: None,
                at: self.clock.now(),
                record,
            }],
        )?;
        *h.state.write().map_err(lock_poisoned)? = next;
        Ok(())
    }

    fn step(&self, id: &str, step: PipelineStep) -> Result<(), StepFailure> {
        self.hook.before_step(id, step).map_err(|e| StepFailure::other(step, e))
    }

    fn run_pipeline(
        &self,
        id: &str,
        p: &Providers,
        state: &SessionState,
        input: ClinicianInput,
    ) -> Result<Staged, StepFailure> {
        use PipelineStep as S;
        let index = state.turns.len();
        debug_assert_eq!(Speaker::at(index), Speaker::Clinician);

        self.step(id, S::Transcribe)?;
        let (transcript, clinician_audio) = match input {
            ClinicianInput::Text(t) => (t.trim().to_string(), None),
            ClinicianInput::Audio(bytes) => {
                let text = p.stt.transcribe(&bytes).map_err(|e| StepFailure::provider(S::Transcribe, e))?;
                (text.trim().to_string(), Some(bytes))
            }
        };
        if transcript.is_empty() {
            return Err(StepFailure::other(S::Transcribe, "transcript is empty"));
        }
        let clinician_turn = Turn {
            index,
            speaker: Speaker::Clinician,
            transcript,
            audio_ref: clinician_audio
                .as_ref()
                .map(|a| BlobRef(hex::encode(Sha256::digest(a)))),
            created_at: self.clock.now(),
        };

        self.step(id, S::UpdatePartition)?;
        let partition = update_partition(&state.partition, &clinician_turn.transcript, &self.stopwords);

        self.step(id, S::ClassifyStage)?;
        let classification = match state.last_patient_message() {
            None => ClassificationOutcome {
                labels: StageLabelSet::opening(),
                attempts: 0,
                fell_back: false,
            },
            Some(msg) => {
                let req = StageRequest::new(msg.transcript.clone(), state.stage_history.len());
                classify_stage(p.chat.as_ref(), &self.templates, &req).map_err(|e| match e {
                    ClassifyError::Provider(pe) => StepFailure::provider(S::ClassifyStage, pe),
                    other => StepFailure::other(S::ClassifyStage, other.to_string()),
                })?
            }
        };

        self.step(id, S::TurnFeedback)?;
        let (feedback, _) = generate_turn_feedback(
            p.chat.as_ref(),
            &self.templates,
            &state.evaluator,
            &state.case,
            &state.turns,
            &clinician_turn,
            &classification.labels,
        )
        .map_err(|e| match e {
            EvalError::Provider(pe) => StepFailure::provider(S::TurnFeedback, pe),
            other => StepFailure::other(S::TurnFeedback, other.to_string()),
        })?;

        self.step(id, S::Digest)?;
        let digest = match feedback.feedback() {
            Some(fb) => make_digest(fb, &partition, &self.stopwords),
            None => EvaluatorDigest::neutral(index),
        };

        self.step(id, S::PatientUtterance)?;
        let mut ctx = state.patient_context();
        ctx.partition = partition.clone();
        ctx.memory.push(clinician_turn.clone());
        let excess = ctx.memory.len().saturating_sub(state.options.window);
        ctx.memory.drain(..excess);
        let (utterance, next_ctx) = generate_patient_utterance(p.chat.as_ref(), &self.templates, &ctx, Some(&digest))
            .map_err(|e| match e {
                PatientError::Provider(pe) => StepFailure::provider(S::PatientUtterance, pe),
                other => StepFailure::other(S::PatientUtterance, other.to_string()),
            })?;
        let after_reply = update_partition(&partition, &utterance.plain_text, &self.stopwords);
        let patient_turn = Turn {
            index: index + 1,
            speaker: Speaker::Patient,
            transcript: utterance.plain_text.clone(),
            audio_ref: None,
            created_at: self.clock.now(),
        };

        self.step(id, S::Synthesize)?;
        let patient_audio = match synthesize_patient_audio(p.tts.as_ref(), &utterance) {
            Ok(bytes) if !bytes.is_empty() => Some(bytes),
            Ok(_) => None,
            Err(e) => {
                tracing::warn!(session = id, error = %e, "speech synthesis failed, delivering text only");
                None
            }
        };

        let records = vec![
            Record::ClinicianTurn { turn: clinician_turn },
            Record::PartitionUpdated { partition },
            Record::StageClassified {
                labels: classification.labels,
                attempts: classification.attempts,
                fell_back: classification.fell_back,
            },
            Record::TurnFeedbackRecorded { record: feedback },
            Record::DigestMade { digest },
            Record::PatientTurn {
                turn: patient_turn,
                utterance,
                affect: next_ctx.affect,
                patient_turn_count: next_ctx.patient_turn_count,
                partition: after_reply,
            },
        ];
        Ok(Staged {
            clinician_audio,
            records,
            patient_audio,
            patient_index: index + 1,
        })
    }

    /// Ends the session and returns its overall feedback, generating it on
    /// the first call.
    pub fn end_session(&self, id: &str) -> Result<OverallFeedback, OrchestratorError> {
        let h = self.handle(id)?;
        let mut w = match h.writer.try_lock() {
            Ok(w) => w,
            Err(TryLockError::WouldBlock) => return Err(OrchestratorError::TurnInFlight(id.to_string())),
            Err(TryLockError::Poisoned(e)) => return Err(lock_poisoned(e)),
        };
        let state = h.state.read().map_err(lock_poisoned)?.clone();
        if let Some(o) = state.overall {
            return Ok(o);
        }
        if state.turns.is_empty() {
            return Err(OrchestratorError::NoTurns);
        }
        let result = generate_overall_feedback(
            h.providers.chat.as_ref(),
            &self.templates,
            &state.evaluator,
            &state.case,
            &state.turns,
        );
        let report = match result {
            Ok(r) => Ok(r),
            Err(EvalError::Provider(e)) => Err(OrchestratorError::Provider(e)),
            Err(other) => Err(OrchestratorError::InvalidInput(other.to_string())),
        };
        let record = match (&report, state.phase) {
            (_, Phase::Created | Phase::Active) => Some(Record::SessionEnded {
                reason: EndReason::ClinicianEnded,
                report: report.as_ref().ok().cloned(),
            }),
            (Ok(r), Phase::Ended) => Some(Record::OverallRecorded { report: r.clone() }),
            (Err(_), Phase::Ended) => None,
        };
        if let Some(r) = record {
            self.commit_standalone(id, &h, &mut w, r)?;
        }
        report
    }
}
