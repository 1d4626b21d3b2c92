//! Turn-level and overall feedback records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::phrase::normalize_phrase_match;
use super::rubric::FeedbackArea;
use super::score::Score;
use super::stage::StageLabelSet;
use super::text::word_count;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("expected 1-2 strengths, got {0}")]
    StrengthCount(usize),
    #[error("expected 1-2 improvement areas, got {0}")]
    ImprovementCount(usize),
    #[error("improvement subtitle {0:?} must have 3-5 words")]
    Subtitle(String),
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
    #[error("criterion {0:?} does not belong to the selected feedback areas")]
    ForeignCriterion(String),
    #[error("criterion {0:?} is missing a score")]
    MissingCriterion(String),
    #[error("criterion {id:?} scored {score}, expected an integer 0-5")]
    OutOfRange { id: String, score: i64 },
    #[error("phrase {0:?} does not occur in the evaluated message")]
    UnanchoredPhrase(String),
    #[error("overall score is not the mean of the criterion scores")]
    ScoreMismatch,
    #[error("area {0} missing from overall feedback")]
    MissingArea(FeedbackArea),
    #[error("area {0} has a score but was never addressed")]
    ScoredUnaddressed(FeedbackArea),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImprovementArea {
    pub subtitle: String,
    pub description: String,
    pub suggestion: String,
    pub example_phrasing: String,
}

impl ImprovementArea {
    pub fn validate(&self) -> Result<(), FeedbackError> {
        if !(3..=5).contains(&word_count(&self.subtitle)) {
            return Err(FeedbackError::Subtitle(self.subtitle.clone()));
        }
        if self.description.trim().is_empty() {
            return Err(FeedbackError::EmptyField("improvement description"));
        }
        if self.suggestion.trim().is_empty() {
            return Err(FeedbackError::EmptyField("improvement suggestion"));
        }
        Ok(())
    }
}

/// Rubric feedback on one clinician turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnFeedback {
    pub turn_index: usize,
    pub stages: StageLabelSet,
    pub overall_score: Score,
    pub criterion_scores: BTreeMap<String, u8>,
    /// Optional criteria the evaluator judged not applicable on this turn.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub not_applicable: Vec<String>,
    pub strengths: Vec<String>,
    pub improvements: Vec<ImprovementArea>,
    pub encouragement: String,
    pub strength_phrases: Vec<String>,
    pub improvement_phrases: Vec<String>,
}

impl TurnFeedback {
    /// Checks the structural invariants against the areas the turn's stages
    /// select and the transcript the phrases were drawn from.
    pub fn validate(&self, areas: &[FeedbackArea], transcript: &str) -> Result<(), FeedbackError> {
        if !(1..=2).contains(&self.strengths.len()) {
            return Err(FeedbackError::StrengthCount(self.strengths.len()));
        }
        if self.strengths.iter().any(|s| s.trim().is_empty()) {
            return Err(FeedbackError::EmptyField("strength"));
        }
        if !(1..=2).contains(&self.improvements.len()) {
            return Err(FeedbackError::ImprovementCount(self.improvements.len()));
        }
        for imp in &self.improvements {
            imp.validate()?;
        }
        if self.encouragement.trim().is_empty() {
            return Err(FeedbackError::EmptyField("encouragement"));
        }
        for (id, score) in &self.criterion_scores {
            match FeedbackArea::of_criterion(id) {
                Some(area) if areas.contains(&area) => {}
                _ => return Err(FeedbackError::ForeignCriterion(id.clone())),
            }
            if *score > 5 {
                return Err(FeedbackError::OutOfRange {
                    id: id.clone(),
                    score: i64::from(*score),
                });
            }
        }
        for area in areas {
            for c in area.criteria() {
                let scored = self.criterion_scores.contains_key(c.id);
                let waived = c.optional && self.not_applicable.iter().any(|n| n == c.id);
                if !scored && !waived {
                    return Err(FeedbackError::MissingCriterion(c.id.to_string()));
                }
            }
        }
        if Score::mean(self.criterion_scores.values().copied()) != Some(self.overall_score) {
            return Err(FeedbackError::ScoreMismatch);
        }
        for p in self.strength_phrases.iter().chain(&self.improvement_phrases) {
            if normalize_phrase_match(p, transcript).is_none() {
                return Err(FeedbackError::UnanchoredPhrase(p.clone()));
            }
        }
        Ok(())
    }

    /// Scores grouped by the area each criterion belongs to.
    pub fn scores_by_area(&self) -> BTreeMap<FeedbackArea, BTreeMap<String, u8>> {
        let mut out: BTreeMap<FeedbackArea, BTreeMap<String, u8>> = BTreeMap::new();
        for (id, s) in &self.criterion_scores {
            if let Some(area) = FeedbackArea::of_criterion(id) {
                out.entry(area).or_default().insert(id.clone(), *s);
            }
        }
        out
    }
}

/// Feedback slot for a clinician turn. Feedback generation may fail without
/// ending the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FeedbackRecord {
    Available(TurnFeedback),
    Unavailable {
        turn_index: usize,
        stages: StageLabelSet,
        reason: String,
    },
}

impl FeedbackRecord {
    pub fn feedback(&self) -> Option<&TurnFeedback> {
        match self {
            FeedbackRecord::Available(fb) => Some(fb),
            FeedbackRecord::Unavailable { .. } => None,
        }
    }

    pub fn stages(&self) -> &StageLabelSet {
        match self {
            FeedbackRecord::Available(fb) => &fb.stages,
            FeedbackRecord::Unavailable { stages, .. } => stages,
        }
    }
}

/// Narrative and machine assessment of one substantive area.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaReport {
    pub addressed: bool,
    /// Score stated in the narrative review.
    pub score: Option<Score>,
    /// Mean of the area's criterion scores over all turns.
    pub machine_score: Option<Score>,
    pub strengths: Vec<String>,
    pub improvements: Vec<String>,
    pub examples: Vec<String>,
}

impl AreaReport {
    pub fn not_addressed() -> Self {
        AreaReport {
            addressed: false,
            score: None,
            machine_score: None,
            strengths: Vec::new(),
            improvements: Vec::new(),
            examples: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverallPerformance {
    pub summary: Option<String>,
    pub score: Option<Score>,
    pub machine_score: Option<Score>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Narrative,
    MachineFallback,
}

/// End-of-session review across the four substantive areas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverallFeedback {
    pub per_area: BTreeMap<FeedbackArea, AreaReport>,
    pub overall_performance: OverallPerformance,
    pub key_strengths: Vec<String>,
    pub key_improvements: Vec<String>,
    pub source: ReportSource,
}

impl OverallFeedback {
    pub fn validate(&self) -> Result<(), FeedbackError> {
        for area in FeedbackArea::SUBSTANTIVE {
            let report = self.per_area.get(&area).ok_or(FeedbackError::MissingArea(area))?;
            if !report.addressed && (report.score.is_some() || report.machine_score.is_some()) {
                return Err(FeedbackError::ScoredUnaddressed(area));
            }
        }
        Ok(())
    }
}

/// Direction of a clinician turn's quality as seen by the patient agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Mixed,
    Negative,
}

impl Direction {
    /// Positive at or above 4, negative at or below 2.
    pub fn from_score(score: Score) -> Self {
        let r = score.ratio();
        if r >= num_rational::Ratio::from_integer(4) {
            Direction::Positive
        } else if r <= num_rational::Ratio::from_integer(2) {
            Direction::Negative
        } else {
            Direction::Mixed
        }
    }

    pub fn sign(self) -> i64 {
        match self {
            Direction::Positive => 1,
            Direction::Mixed => 0,
            Direction::Negative => -1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Positive => "positive",
            Direction::Mixed => "mixed",
            Direction::Negative => "negative",
        }
    }
}

/// Sanitized summary of turn feedback handed to the patient agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorDigest {
    pub turn_index: usize,
    pub keywords: Vec<String>,
    pub direction: Direction,
}

impl EvaluatorDigest {
    /// Digest used when no feedback is available for a turn.
    pub fn neutral(turn_index: usize) -> Self {
        EvaluatorDigest {
            turn_index,
            keywords: Vec::new(),
            direction: Direction::Mixed,
        }
    }
}
