//! Shared domain types and their pure validators.

pub mod affect;
pub mod case;
pub mod feedback;
pub mod markup;
pub mod phrase;
pub mod rubric;
pub mod score;
pub mod stage;
pub mod text;
pub mod turn;

pub use affect::{AffectDimension, AffectiveState, Intensity};
pub use case::{CaseError, CaseId, CaseOrigin, CaseScenario, Interlocutor, PatientProfile};
pub use feedback::{
    AreaReport, Direction, EvaluatorDigest, FeedbackError, FeedbackRecord, ImprovementArea,
    OverallFeedback, OverallPerformance, ReportSource, TurnFeedback,
};
pub use markup::{sentence_count, strip_markup, truncate_sentences, validate_markup, MarkupError};
pub use phrase::normalize_phrase_match;
pub use rubric::{Criterion, FeedbackArea};
pub use score::Score;
pub use stage::{validate_stage_labels, StageCode, StageLabelError, StageLabelSet};
pub use turn::{BlobRef, PatientUtterance, Speaker, Turn};
