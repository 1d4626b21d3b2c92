//! Session state and the records that change it.
//!
//! State is never mutated directly: every change is a [`Record`] applied
//! through [`SessionState::apply`], both live and when replaying a log.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymmetry::KnowledgePartition;
use crate::domain::{
    AffectiveState, BlobRef, CaseScenario, EvaluatorDigest, FeedbackRecord, Intensity, OverallFeedback,
    PatientUtterance, Speaker, StageLabelSet, Turn,
};
use crate::evaluator::EvaluatorState;
use crate::patient::{PatientContext, DEFAULT_ETA, DEFAULT_TURN_BUDGET};

pub const DEFAULT_WINDOW: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    TurnByTurn,
    OverallOnly,
    #[default]
    Both,
}

impl FeedbackMode {
    pub fn shows_turn_feedback(self) -> bool {
        self != FeedbackMode::OverallOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionOptions {
    pub window: usize,
    pub feedback_mode: FeedbackMode,
    pub turn_budget: u32,
    pub eta: Intensity,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            window: DEFAULT_WINDOW,
            feedback_mode: FeedbackMode::Both,
            turn_budget: DEFAULT_TURN_BUDGET,
            eta: DEFAULT_ETA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Created,
    Active,
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    PatientClosed,
    ClinicianEnded,
}

/// Steps of a clinician turn transaction, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStep {
    Transcribe,
    UpdatePartition,
    ClassifyStage,
    TurnFeedback,
    Digest,
    PatientUtterance,
    Synthesize,
}

impl PipelineStep {
    pub const ALL: [PipelineStep; 7] = [
        PipelineStep::Transcribe,
        PipelineStep::UpdatePartition,
        PipelineStep::ClassifyStage,
        PipelineStep::TurnFeedback,
        PipelineStep::Digest,
        PipelineStep::PatientUtterance,
        PipelineStep::Synthesize,
    ];
}

/// One entry in a session's event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    SessionCreated {
        session_id: String,
        case: CaseScenario,
        options: SessionOptions,
        affect: AffectiveState,
        partition: KnowledgePartition,
        template_id: String,
        stopwords_hash: String,
        created_at: DateTime<Utc>,
    },
    ClinicianTurn {
        turn: Turn,
    },
    PartitionUpdated {
        partition: KnowledgePartition,
    },
    StageClassified {
        labels: StageLabelSet,
        attempts: u8,
        fell_back: bool,
    },
    TurnFeedbackRecorded {
        record: FeedbackRecord,
    },
    DigestMade {
        digest: EvaluatorDigest,
    },
    PatientTurn {
        turn: Turn,
        utterance: PatientUtterance,
        affect: AffectiveState,
        patient_turn_count: u32,
        partition: KnowledgePartition,
    },
    AudioAttached {
        turn_index: usize,
        blob: BlobRef,
    },
    TurnCommitted {
        ended: bool,
    },
    TurnAborted {
        step: PipelineStep,
        error: String,
    },
    SessionEnded {
        reason: EndReason,
        report: Option<OverallFeedback>,
    },
    OverallRecorded {
        report: OverallFeedback,
    },
}

impl Record {
    pub fn kind(&self) -> &'static str {
        match self {
            Record::SessionCreated { .. } => "session_created",
            Record::ClinicianTurn { .. } => "clinician_turn",
            Record::PartitionUpdated { .. } => "partition_updated",
            Record::StageClassified { .. } => "stage_classified",
            Record::TurnFeedbackRecorded { .. } => "turn_feedback_recorded",
            Record::DigestMade { .. } => "digest_made",
            Record::PatientTurn { .. } => "patient_turn",
            Record::AudioAttached { .. } => "audio_attached",
            Record::TurnCommitted { .. } => "turn_committed",
            Record::TurnAborted { .. } => "turn_aborted",
            Record::SessionEnded { .. } => "session_ended",
            Record::OverallRecorded { .. } => "overall_recorded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("the log does not start with session creation")]
    NotCreated,
    #[error("session created twice")]
    AlreadyCreated,
    #[error("record {0} is out of order: {1}")]
    OutOfOrder(&'static str, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub case: CaseScenario,
    pub options: SessionOptions,
    pub template_id: String,
    pub stopwords_hash: String,
    pub created_at: DateTime<Utc>,
    pub phase: Phase,
    pub turns: Vec<Turn>,
    pub stage_history: Vec<StageLabelSet>,
    /// Fallback use per classification event, parallel to `stage_history`.
    pub stage_fallbacks: Vec<bool>,
    /// One per clinician turn.
    pub feedback: Vec<FeedbackRecord>,
    pub digests: Vec<EvaluatorDigest>,
    /// One per patient turn.
    pub utterances: Vec<PatientUtterance>,
    pub affect: AffectiveState,
    pub partition: KnowledgePartition,
    pub patient_turn_count: u32,
    pub evaluator: EvaluatorState,
    pub end_reason: Option<EndReason>,
    pub overall: Option<OverallFeedback>,
}

fn out_of_order(r: &Record, why: impl Into<String>) -> ApplyError {
    ApplyError::OutOfOrder(r.kind(), why.into())
}

impl SessionState {
    /// State from the first record of a log.
    pub fn from_created(r: &Record) -> Result<Self, ApplyError> {
        let Record::SessionCreated {
            session_id,
            case,
            options,
            affect,
            partition,
            template_id,
            stopwords_hash,
            created_at,
        } = r
        else {
            return Err(ApplyError::NotCreated);
        };
        Ok(SessionState {
            session_id: session_id.clone(),
            case: case.clone(),
            options: *options,
            template_id: template_id.clone(),
            stopwords_hash: stopwords_hash.clone(),
            created_at: *created_at,
            phase: Phase::Created,
            turns: Vec::new(),
            stage_history: Vec::new(),
            stage_fallbacks: Vec::new(),
            feedback: Vec::new(),
            digests: Vec::new(),
            utterances: Vec::new(),
            affect: *affect,
            partition: partition.clone(),
            patient_turn_count: 0,
            evaluator: EvaluatorState::default(),
            end_reason: None,
            overall: None,
        })
    }

    pub fn apply(&mut self, r: &Record) -> Result<(), ApplyError> {
        match r {
            Record::SessionCreated { .. } => return Err(ApplyError::AlreadyCreated),
            Record::ClinicianTurn { turn } => {
                if self.phase == Phase::Ended {
                    return Err(out_of_order(r, "session has ended"));
                }
                if turn.index != self.turns.len() || turn.speaker != Speaker::Clinician || turn.speaker != Speaker::at(turn.index) {
                    return Err(out_of_order(r, format!("turn {} breaks alternation", turn.index)));
                }
                self.turns.push(turn.clone());
                self.phase = Phase::Active;
            }
            Record::PartitionUpdated { partition } => self.partition = partition.clone(),
            Record::StageClassified { labels, fell_back, .. } => {
                if labels.turn_index() != self.stage_history.len() {
                    return Err(out_of_order(r, "classification index mismatch"));
                }
                self.stage_history.push(labels.clone());
                self.stage_fallbacks.push(*fell_back);
            }
            Record::TurnFeedbackRecorded { record } => {
                self.evaluator.apply(record);
                self.feedback.push(record.clone());
            }
            Record::DigestMade { digest } => self.digests.push(digest.clone()),
            Record::PatientTurn {
                turn,
                utterance,
                affect,
                patient_turn_count,
                partition,
            } => {
                if turn.index != self.turns.len() || turn.speaker != Speaker::Patient || turn.speaker != Speaker::at(turn.index) {
                    return Err(out_of_order(r, format!("turn {} breaks alternation", turn.index)));
                }
                self.turns.push(turn.clone());
                self.utterances.push(utterance.clone());
                self.affect = *affect;
                self.patient_turn_count = *patient_turn_count;
                self.partition = partition.clone();
                if utterance.is_closing {
                    self.phase = Phase::Ended;
                    self.end_reason.get_or_insert(EndReason::PatientClosed);
                }
            }
            Record::AudioAttached { turn_index, blob } => {
                let turn = self
                    .turns
                    .get_mut(*turn_index)
                    .ok_or_else(|| out_of_order(r, format!("no turn {turn_index}")))?;
                turn.audio_ref = Some(blob.clone());
                if turn.speaker == Speaker::Patient {
                    let k = turn_index / 2;
                    if let Some(u) = self.utterances.get_mut(k) {
                        u.audio_ref = Some(blob.clone());
                    }
                }
            }
            Record::TurnCommitted { .. } | Record::TurnAborted { .. } => {}
            Record::SessionEnded { reason, report } => {
                self.phase = Phase::Ended;
                self.end_reason.get_or_insert(*reason);
                if self.overall.is_none() {
                    self.overall = report.clone();
                }
            }
            Record::OverallRecorded { report } => {
                if self.overall.is_some() {
                    return Err(out_of_order(r, "overall feedback already recorded"));
                }
                self.overall = Some(report.clone());
            }
        }
        Ok(())
    }

    /// The last `window` turns.
    pub fn memory_window(&self) -> &[Turn] {
        let start = self.turns.len().saturating_sub(self.options.window);
        &self.turns[start..]
    }

    /// The most recent patient message, if any.
    pub fn last_patient_message(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.speaker == Speaker::Patient)
    }

    pub fn patient_context(&self) -> PatientContext {
        PatientContext {
            case: self.case.clone(),
            partition: self.partition.clone(),
            affect: self.affect,
            memory: self.memory_window().to_vec(),
            patient_turn_count: self.patient_turn_count,
            turn_budget: self.options.turn_budget,
            eta: self.options.eta,
        }
    }
}
