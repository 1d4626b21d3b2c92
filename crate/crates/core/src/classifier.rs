//! Conversation-stage classification of patient messages.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{validate_stage_labels, FeedbackArea, StageLabelSet};
use crate::prompts::{fill, PromptTemplates};
use crate::provider::{ChatProvider, ChatRequest, ProviderError};
use crate::structured::{json_object, strip_fence};

/// Classification is deterministic enough at zero temperature.
const TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRequest {
    pub patient_message: String,
    pub turn_index: usize,
    pub is_first_patient_message: bool,
}

impl StageRequest {
    pub fn new(patient_message: impl Into<String>, turn_index: usize) -> Self {
        StageRequest {
            patient_message: patient_message.into(),
            turn_index,
            is_first_patient_message: turn_index == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("patient message is empty")]
    EmptyMessage,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub labels: StageLabelSet,
    /// Provider calls made, 1 or 2.
    pub attempts: u8,
    pub fell_back: bool,
}

pub fn build_stage_prompt(templates: &PromptTemplates, req: &StageRequest) -> Result<ChatRequest, ClassifyError> {
    if req.patient_message.trim().is_empty() {
        return Err(ClassifyError::EmptyMessage);
    }
    let position = if req.is_first_patient_message {
        "first message of the conversation".to_string()
    } else {
        format!("message {} of the conversation (not the first)", req.turn_index + 1)
    };
    let user = fill(
        &templates.contracts.stage,
        &[
            ("message_position", &position),
            ("patient_message", &req.patient_message),
        ],
    );
    Ok(ChatRequest::new(templates.conv_stage.clone(), user).with_temperature(TEMPERATURE))
}

/// Extracts the raw `stages` string from model output: either a JSON object
/// with a `stages` field (string or list of strings) or the bare codes.
pub fn stages_field(raw: &str) -> Result<String, String> {
    let body = strip_fence(raw);
    if body.contains('{') {
        let v = json_object(body)?;
        return match v.get("stages") {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|i| i.as_str().map(str::to_string).ok_or("stage list holds a non-string"))
                .collect::<Result<Vec<_>, _>>()
                .map(|v| v.join(","))
                .map_err(str::to_string),
            Some(_) => Err("`stages` must be a string".into()),
            None => Err("missing `stages` field".into()),
        };
    }
    Ok(body.trim_matches(|c| c == '"' || c == '\'').to_string())
}

fn parse_labels(raw: &str, turn_index: usize) -> Result<StageLabelSet, String> {
    let field = stages_field(raw)?;
    validate_stage_labels(&field, turn_index).map_err(|e| e.to_string())
}

/// Classifies one patient message. Invalid output gets one repair prompt,
/// after which the fallback label set `{IS}` is used.
pub fn classify_stage(
    chat: &dyn ChatProvider,
    templates: &PromptTemplates,
    req: &StageRequest,
) -> Result<ClassificationOutcome, ClassifyError> {
    let prompt = build_stage_prompt(templates, req)?;
    let first = chat.chat(&prompt)?;
    let err = match parse_labels(&first, req.turn_index) {
        Ok(labels) => {
            return Ok(ClassificationOutcome {
                labels,
                attempts: 1,
                fell_back: false,
            })
        }
        Err(e) => e,
    };
    tracing::debug!(error = %err, "stage output invalid, re-prompting");
    let mut repair = prompt.clone();
    repair.user.push_str(&fill(
        &templates.contracts.repair,
        &[("error", &err), ("previous", &first)],
    ));
    let second = chat.chat(&repair)?;
    Ok(match parse_labels(&second, req.turn_index) {
        Ok(labels) => ClassificationOutcome {
            labels,
            attempts: 2,
            fell_back: false,
        },
        Err(e) => {
            tracing::warn!(error = %e, "stage output invalid after repair, using fallback");
            ClassificationOutcome {
                labels: StageLabelSet::fallback(req.turn_index),
                attempts: 2,
                fell_back: true,
            }
        }
    })
}

/// Feedback areas selected by a label set, in label order.
pub fn stages_to_areas(labels: &StageLabelSet) -> Vec<FeedbackArea> {
    let mut out = Vec::with_capacity(2);
    for &c in labels.codes() {
        let area = FeedbackArea::for_stage(c);
        if !out.contains(&area) {
            out.push(area);
        }
    }
    out
}
