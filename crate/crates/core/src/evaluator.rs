//! The evaluator agent: rubric feedback per clinician turn and an
//! end-of-session review.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::stages_to_areas;
use crate::domain::turn::history_text;
use crate::domain::{
    normalize_phrase_match, AreaReport, CaseScenario, FeedbackArea, FeedbackRecord, ImprovementArea,
    OverallFeedback, OverallPerformance, ReportSource, Score, Speaker, StageCode, StageLabelSet, Turn,
    TurnFeedback,
};
use crate::prompts::{fill, PromptTemplates};
use crate::provider::{ChatProvider, ChatRequest, ProviderError};
use crate::structured::parse_object;

const TEMPERATURE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("the evaluated turn is not a clinician turn")]
    NotClinician,
    #[error("conversation history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Criterion scores one turn earned in one area.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaTurnScores {
    pub turn_index: usize,
    pub scores: BTreeMap<String, u8>,
}

/// Running assessment carried across a session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorState {
    pub per_area_running: BTreeMap<FeedbackArea, Vec<AreaTurnScores>>,
    pub stages_seen: BTreeSet<StageCode>,
}

impl EvaluatorState {
    /// Folds a feedback record in. Unavailable feedback still marks its
    /// stages as seen.
    pub fn apply(&mut self, record: &FeedbackRecord) {
        self.stages_seen.extend(record.stages().codes().iter().copied());
        if let Some(fb) = record.feedback() {
            for (area, scores) in fb.scores_by_area() {
                self.per_area_running.entry(area).or_default().push(AreaTurnScores {
                    turn_index: fb.turn_index,
                    scores,
                });
            }
        }
    }

    fn area_scores(&self, area: FeedbackArea) -> impl Iterator<Item = u8> + '_ {
        self.per_area_running
            .get(&area)
            .into_iter()
            .flatten()
            .flat_map(|t| t.scores.values().copied())
    }

    /// Mean of every criterion score the area received.
    pub fn area_mean(&self, area: FeedbackArea) -> Option<Score> {
        Score::mean(self.area_scores(area))
    }

    /// Mean over every criterion score in the four substantive areas.
    pub fn overall_mean(&self) -> Option<Score> {
        Score::mean(FeedbackArea::SUBSTANTIVE.into_iter().flat_map(|a| self.area_scores(a)))
    }

    /// Per-criterion means within an area, in rubric order.
    pub fn criterion_means(&self, area: FeedbackArea) -> Vec<(&'static str, Score)> {
        let rows = self.per_area_running.get(&area).map(Vec::as_slice).unwrap_or(&[]);
        area.criteria()
            .iter()
            .filter_map(|c| {
                Score::mean(rows.iter().filter_map(|r| r.scores.get(c.id).copied())).map(|s| (c.text, s))
            })
            .collect()
    }

    pub fn addressed(&self, area: FeedbackArea) -> bool {
        self.stages_seen.contains(&area.stage())
    }
}

/// Framework blocks for the given areas, in the order given.
pub fn combine_frameworks(templates: &PromptTemplates, areas: &[FeedbackArea]) -> String {
    areas
        .iter()
        .map(|a| templates.framework(*a).trim_end())
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn criterion_list(areas: &[FeedbackArea]) -> String {
    let mut lines = Vec::new();
    for area in areas {
        for c in area.criteria() {
            let mut line = format!("- {}: {}", c.id, c.text);
            if c.optional {
                line.push_str(" (only if the patient asked; otherwise list it under \"not_applicable\")");
            }
            lines.push(line);
        }
    }
    lines.join("\n")
}

fn conversation_stage(labels: &StageLabelSet) -> String {
    labels
        .codes()
        .iter()
        .map(|c| format!("{} ({})", c.as_str(), FeedbackArea::for_stage(*c).title()))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn build_turn_feedback_prompt(
    templates: &PromptTemplates,
    case: &CaseScenario,
    history: &[Turn],
    latest: &Turn,
    stages: &StageLabelSet,
) -> ChatRequest {
    let areas = stages_to_areas(stages);
    let user = fill(
        &templates.feedback.turn_level_user,
        &[
            ("conversation_stage", &conversation_stage(stages)),
            ("combined_framework", &combine_frameworks(templates, &areas)),
            ("medical_situation", &case.medical_situation),
            ("medical_error", &case.medical_error),
            ("history_text", &history_text(history, case.interlocutor.label())),
            ("latest_physician_message", &latest.transcript),
        ],
    );
    let contract = fill(
        &templates.contracts.turn_feedback,
        &[("criterion_list", &criterion_list(&areas))],
    );
    ChatRequest::new(templates.feedback.turn_level.clone(), format!("{user}\n\n{contract}"))
        .with_temperature(TEMPERATURE)
}

#[derive(Deserialize)]
struct RawTurnFeedback {
    criterion_scores: BTreeMap<String, i64>,
    #[serde(default)]
    not_applicable: Vec<String>,
    strengths: Vec<String>,
    improvements: Vec<ImprovementArea>,
    encouragement: String,
    #[serde(default)]
    strength_phrases: Vec<String>,
    #[serde(default)]
    improvement_phrases: Vec<String>,
}

fn anchored(phrases: Vec<String>, transcript: &str) -> Vec<String> {
    phrases
        .into_iter()
        .filter(|p| {
            let ok = normalize_phrase_match(p, transcript).is_some();
            if !ok {
                tracing::debug!(phrase = %p, "dropping phrase not found in the evaluated message");
            }
            ok
        })
        .collect()
}

fn parse_turn_feedback(
    raw: &str,
    latest: &Turn,
    stages: &StageLabelSet,
    areas: &[FeedbackArea],
) -> Result<TurnFeedback, String> {
    let r: RawTurnFeedback = parse_object(raw)?;
    let mut criterion_scores = BTreeMap::new();
    for (id, score) in r.criterion_scores {
        let s = u8::try_from(score)
            .ok()
            .filter(|s| *s <= 5)
            .ok_or_else(|| format!("criterion {id:?} scored {score}, expected an integer 0-5"))?;
        criterion_scores.insert(id, s);
    }
    let not_applicable: Vec<String> = r
        .not_applicable
        .into_iter()
        .filter(|id| FeedbackArea::criterion(id).is_some_and(|c| c.optional) && !criterion_scores.contains_key(id))
        .collect();
    let overall_score = Score::mean(criterion_scores.values().copied()).ok_or("no criterion scores given")?;
    let strength_phrases = anchored(r.strength_phrases, &latest.transcript);
    let improvement_phrases = anchored(r.improvement_phrases, &latest.transcript);
    if strength_phrases.iter().any(|p| improvement_phrases.contains(p)) {
        tracing::info!(turn = latest.index, "strength and improvement phrases overlap");
    }
    let fb = TurnFeedback {
        turn_index: latest.index,
        stages: stages.clone(),
        overall_score,
        criterion_scores,
        not_applicable,
        strengths: r.strengths,
        improvements: r.improvements,
        encouragement: r.encouragement,
        strength_phrases,
        improvement_phrases,
    };
    fb.validate(areas, &latest.transcript).map_err(|e| e.to_string())?;
    Ok(fb)
}

fn with_repair(templates: &PromptTemplates, req: &ChatRequest, error: &str, previous: &str) -> ChatRequest {
    let mut r = req.clone();
    r.user.push_str(&fill(
        &templates.contracts.repair,
        &[("error", error), ("previous", previous)],
    ));
    r
}

/// Scores the latest clinician turn. Output that stays malformed after one
/// repair prompt yields an [`FeedbackRecord::Unavailable`] record rather than
/// an error.
pub fn generate_turn_feedback(
    chat: &dyn ChatProvider,
    templates: &PromptTemplates,
    state: &EvaluatorState,
    case: &CaseScenario,
    history: &[Turn],
    latest: &Turn,
    stages: &StageLabelSet,
) -> Result<(FeedbackRecord, EvaluatorState), EvalError> {
    if latest.speaker != Speaker::Clinician {
        return Err(EvalError::NotClinician);
    }
    let areas = stages_to_areas(stages);
    let req = build_turn_feedback_prompt(templates, case, history, latest, stages);
    let first = chat.chat(&req)?;
    let record = match parse_turn_feedback(&first, latest, stages, &areas) {
        Ok(fb) => FeedbackRecord::Available(fb),
        Err(err) => {
            tracing::debug!(error = %err, "turn feedback invalid, re-prompting");
            let second = chat.chat(&with_repair(templates, &req, &err, &first))?;
            match parse_turn_feedback(&second, latest, stages, &areas) {
                Ok(fb) => FeedbackRecord::Available(fb),
                Err(err) => {
                    tracing::warn!(error = %err, turn = latest.index, "turn feedback unavailable");
                    FeedbackRecord::Unavailable {
                        turn_index: latest.index,
                        stages: stages.clone(),
                        reason: err,
                    }
                }
            }
        }
    };
    let mut next = state.clone();
    next.apply(&record);
    Ok((record, next))
}

pub fn build_overall_prompt(templates: &PromptTemplates, case: &CaseScenario, history: &[Turn]) -> ChatRequest {
    let user = fill(
        &templates.feedback.overall_user,
        &[
            ("medical_situation", &case.medical_situation),
            ("medical_error", &case.medical_error),
            ("history_text", &history_text(history, case.interlocutor.label())),
        ],
    );
    ChatRequest::new(
        templates.feedback.overall.clone(),
        format!("{user}\n\n{}", templates.contracts.overall),
    )
    .with_temperature(TEMPERATURE)
}

#[derive(Deserialize)]
struct RawPerformance {
    summary: String,
    score: f64,
}

#[derive(Deserialize)]
struct RawArea {
    addressed: bool,
    score: Option<f64>,
    #[serde(default)]
    strengths: Vec<String>,
    #[serde(default)]
    improvements: Vec<String>,
    #[serde(default)]
    examples: Vec<String>,
}

#[derive(Deserialize)]
struct RawOverall {
    overall_performance: RawPerformance,
    areas: BTreeMap<String, RawArea>,
    #[serde(default)]
    key_strengths: Vec<String>,
    #[serde(default)]
    key_improvements: Vec<String>,
}

fn narrative_score(v: f64, what: &str) -> Result<Score, String> {
    Score::from_decimal(v).ok_or_else(|| format!("{what} score {v} is outside 0-5"))
}

fn parse_overall(raw: &str, state: &EvaluatorState) -> Result<OverallFeedback, String> {
    let r: RawOverall = parse_object(raw)?;
    let mut per_area = BTreeMap::new();
    for area in FeedbackArea::SUBSTANTIVE {
        let code = area.stage().as_str();
        let a = r.areas.get(code).ok_or_else(|| format!("area {code} missing"))?;
        // Whether an area was addressed follows the classified stages, not
        // the narrative's own claim.
        let report = if state.addressed(area) {
            let score = match a.score {
                Some(v) if a.addressed => Some(narrative_score(v, code)?),
                _ => None,
            };
            AreaReport {
                addressed: true,
                score,
                machine_score: state.area_mean(area),
                strengths: a.strengths.clone(),
                improvements: a.improvements.clone(),
                examples: a.examples.clone(),
            }
        } else {
            AreaReport::not_addressed()
        };
        per_area.insert(area, report);
    }
    let fb = OverallFeedback {
        per_area,
        overall_performance: OverallPerformance {
            summary: Some(r.overall_performance.summary),
            score: Some(narrative_score(r.overall_performance.score, "overall")?),
            machine_score: state.overall_mean(),
        },
        key_strengths: r.key_strengths,
        key_improvements: r.key_improvements,
        source: ReportSource::Narrative,
    };
    fb.validate().map_err(|e| e.to_string())?;
    Ok(fb)
}

/// A report built from the running scores alone. Criteria averaging 4 or
/// more are listed as strengths, below 3 as improvements.
pub fn machine_report(state: &EvaluatorState) -> OverallFeedback {
    let mut per_area = BTreeMap::new();
    let mut key_strengths = Vec::new();
    let mut key_improvements = Vec::new();
    let four = Score::integer(4).expect("in range");
    let three = Score::integer(3).expect("in range");
    for area in FeedbackArea::SUBSTANTIVE {
        if !state.addressed(area) {
            per_area.insert(area, AreaReport::not_addressed());
            continue;
        }
        let means = state.criterion_means(area);
        let strengths: Vec<String> = means.iter().filter(|(_, s)| *s >= four).map(|(t, _)| t.to_string()).collect();
        let improvements: Vec<String> = means.iter().filter(|(_, s)| *s < three).map(|(t, _)| t.to_string()).collect();
        key_strengths.extend(strengths.iter().map(|s| format!("{}: {s}", area.title())));
        key_improvements.extend(improvements.iter().map(|s| format!("{}: {s}", area.title())));
        per_area.insert(
            area,
            AreaReport {
                addressed: true,
                score: None,
                machine_score: state.area_mean(area),
                strengths,
                improvements,
                examples: Vec::new(),
            },
        );
    }
    OverallFeedback {
        per_area,
        overall_performance: OverallPerformance {
            summary: None,
            score: None,
            machine_score: state.overall_mean(),
        },
        key_strengths,
        key_improvements,
        source: ReportSource::MachineFallback,
    }
}

/// End-of-session review. Narrative output that stays malformed after one
/// repair prompt is replaced by [`machine_report`].
pub fn generate_overall_feedback(
    chat: &dyn ChatProvider,
    templates: &PromptTemplates,
    state: &EvaluatorState,
    case: &CaseScenario,
    history: &[Turn],
) -> Result<OverallFeedback, EvalError> {
    if history.is_empty() {
        return Err(EvalError::EmptyHistory);
    }
    let req = build_overall_prompt(templates, case, history);
    let first = chat.chat(&req)?;
    match parse_overall(&first, state) {
        Ok(fb) => Ok(fb),
        Err(err) => {
            tracing::debug!(error = %err, "overall feedback invalid, re-prompting");
            let second = chat.chat(&with_repair(templates, &req, &err, &first))?;
            Ok(parse_overall(&second, state).unwrap_or_else(|err| {
                tracing::warn!(error = %err, "overall feedback invalid after repair, using machine report");
                machine_report(state)
            }))
        }
    }
}

/// One criterion score from one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub turn_index: usize,
    pub area: FeedbackArea,
    pub criterion_id: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaAggregate {
    pub turns: usize,
    pub scores: usize,
    pub mean: Score,
}

/// Flat export of every criterion score plus per-area aggregates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSchema {
    pub note: String,
    pub rows: Vec<ScoreRow>,
    pub areas: BTreeMap<FeedbackArea, AreaAggregate>,
}

pub const SCORE_NOTE: &str = "Criterion scores are rubric anchor points from an automated evaluator. \
Use them alongside qualitative and human assessment, not as absolute judgments.";

pub fn score_schema_export(state: &EvaluatorState) -> ScoreSchema {
    let mut rows = Vec::new();
    let mut areas = BTreeMap::new();
    for (area, turns) in &state.per_area_running {
        for t in turns {
            rows.extend(t.scores.iter().map(|(id, s)| ScoreRow {
                turn_index: t.turn_index,
                area: *area,
                criterion_id: id.clone(),
                score: *s,
            }));
        }
        if let Some(mean) = state.area_mean(*area) {
            areas.insert(
                *area,
                AreaAggregate {
                    turns: turns.len(),
                    scores: turns.iter().map(|t| t.scores.len()).sum(),
                    mean,
                },
            );
        }
    }
    rows.sort_by(|a, b| (a.turn_index, a.area, &a.criterion_id).cmp(&(b.turn_index, b.area, &b.criterion_id)));
    ScoreSchema {
        note: SCORE_NOTE.to_string(),
        rows,
        areas,
    }
}
