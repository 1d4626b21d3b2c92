//! Batch evaluation of a recorded dialog, without a simulated patient.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{classify_stage, ClassifyError, StageRequest};
use crate::domain::{CaseScenario, FeedbackRecord, OverallFeedback, Speaker, StageLabelSet, Turn};
use crate::evaluator::{
    generate_overall_feedback, generate_turn_feedback, score_schema_export, EvalError, EvaluatorState, ScoreSchema,
};
use crate::prompts::PromptTemplates;
use crate::provider::{ChatProvider, ProviderError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogLine {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("dialog line {0}: expected a {1:?} turn")]
    Alternation(usize, Speaker),
    #[error("dialog line {0}: text is empty")]
    EmptyLine(usize),
    #[error("dialog has no clinician turns")]
    Empty,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{0}")]
    Evaluation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEvaluation {
    pub turns: Vec<Turn>,
    pub stages: Vec<StageLabelSet>,
    pub feedback: Vec<FeedbackRecord>,
    pub overall: OverallFeedback,
    pub scores: ScoreSchema,
}

pub fn check_dialog(lines: &[DialogLine]) -> Result<(), TranscriptError> {
    for (i, l) in lines.iter().enumerate() {
        if l.speaker != Speaker::at(i) {
            return Err(TranscriptError::Alternation(i, Speaker::at(i)));
        }
        if l.text.trim().is_empty() {
            return Err(TranscriptError::EmptyLine(i));
        }
    }
    if lines.is_empty() {
        return Err(TranscriptError::Empty);
    }
    Ok(())
}

fn eval_error(e: EvalError) -> TranscriptError {
    match e {
        EvalError::Provider(p) => TranscriptError::Provider(p),
        other => TranscriptError::Evaluation(other.to_string()),
    }
}

/// Scores every clinician line against the stage of the patient line before
/// it, then writes the overall review.
pub fn evaluate_dialog(
    chat: &dyn ChatProvider,
    templates: &PromptTemplates,
    case: &CaseScenario,
    lines: &[DialogLine],
) -> Result<TranscriptEvaluation, TranscriptError> {
    check_dialog(lines)?;
    let turns: Vec<Turn> = lines
        .iter()
        .enumerate()
        .map(|(index, l)| Turn {
            index,
            speaker: l.speaker,
            transcript: l.text.trim().to_string(),
            audio_ref: None,
            created_at: DateTime::<Utc>::UNIX_EPOCH,
        })
        .collect();
    let mut state = EvaluatorState::default();
    let mut stages = Vec::new();
    let mut feedback = Vec::new();
    for (event, t) in turns.iter().enumerate().filter(|(i, _)| i % 2 == 0).map(|(i, t)| (i / 2, t)) {
        let labels = if event == 0 {
            StageLabelSet::opening()
        } else {
            let req = StageRequest::new(turns[t.index - 1].transcript.clone(), event);
            classify_stage(chat, templates, &req)
                .map_err(|e| match e {
                    ClassifyError::Provider(p) => TranscriptError::Provider(p),
                    other => TranscriptError::Evaluation(other.to_string()),
                })?
                .labels
        };
        let (rec, next) = generate_turn_feedback(chat, templates, &state, case, &turns[..t.index], t, &labels)
            .map_err(eval_error)?;
        state = next;
        stages.push(labels);
        feedback.push(rec);
    }
    let overall = generate_overall_feedback(chat, templates, &state, case, &turns).map_err(eval_error)?;
    Ok(TranscriptEvaluation {
        scores: score_schema_export(&state),
        turns,
        stages,
        feedback,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(speaker: Speaker, text: &str) -> DialogLine {
        DialogLine {
            speaker,
            text: text.into(),
        }
    }

    #[test]
    fn dialog_must_alternate_from_the_clinician() {
        assert!(matches!(
            check_dialog(&[line(Speaker::Patient, "hi")]),
            Err(TranscriptError::Alternation(0, Speaker::Clinician))
        ));
        assert!(matches!(
            check_dialog(&[line(Speaker::Clinician, "hi"), line(Speaker::Patient, " ")]),
            Err(TranscriptError::EmptyLine(1))
        ));
        assert!(matches!(check_dialog(&[]), Err(TranscriptError::Empty)));
        let parsed: Vec<DialogLine> = serde_json::from_str(r#"[{"speaker":"clinician","text":"Hello"}]"#).unwrap();
        assert!(check_dialog(&parsed).is_ok());
    }
}
