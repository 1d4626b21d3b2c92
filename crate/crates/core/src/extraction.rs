//! Builds a case from a free-text description of a medical error.

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{CaseError, CaseId, CaseOrigin, CaseScenario, Interlocutor, PatientProfile};
use crate::prompts::{fill, PromptTemplates};
use crate::provider::{ChatProvider, ChatRequest, ProviderError};
use crate::structured::parse_object;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("case description is empty")]
    EmptyDescription,
    #[error("could not extract a valid case: {0}")]
    Invalid(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Deserialize)]
struct RawProfile {
    name: String,
    #[serde(default)]
    age: Option<u32>,
    #[serde(default)]
    gender: String,
    #[serde(default)]
    background: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawSpeaker {
    Patient,
    Caregiver,
}

#[derive(Deserialize)]
struct RawCase {
    specialty: String,
    patient_profile: RawProfile,
    speaker: RawSpeaker,
    #[serde(default)]
    relationship: Option<String>,
    medical_situation: String,
    medical_error: String,
    patient_knowledge: String,
    #[serde(default)]
    cause_known: bool,
}

pub fn build_profile_prompt(templates: &PromptTemplates, description: &str) -> ChatRequest {
    let user = fill(&templates.contracts.profile, &[("description", description)]);
    ChatRequest::new(templates.profile.clone(), user).with_temperature(0.0)
}

fn to_case(raw: &str, case_id: &CaseId) -> Result<CaseScenario, String> {
    let r: RawCase = parse_object(raw)?;
    let interlocutor = match r.speaker {
        RawSpeaker::Patient => Interlocutor::Patient,
        RawSpeaker::Caregiver => Interlocutor::Caregiver {
            relationship: r.relationship.unwrap_or_default(),
        },
    };
    let case = CaseScenario {
        case_id: case_id.clone(),
        specialty: r.specialty,
        patient_profile: PatientProfile {
            name: r.patient_profile.name,
            age: r.patient_profile.age,
            gender: r.patient_profile.gender,
            background: r.patient_profile.background,
        },
        interlocutor,
        medical_situation: r.medical_situation,
        medical_error: r.medical_error,
        patient_knowledge: r.patient_knowledge,
        cause_known: r.cause_known,
        origin: CaseOrigin::Bespoke,
        initial_affect: None,
    };
    case.validate().map_err(|e: CaseError| e.to_string())?;
    Ok(case)
}

/// Runs the profile prompt, with one repair prompt on unusable output.
pub fn extract_case(
    chat: &dyn ChatProvider,
    templates: &PromptTemplates,
    description: &str,
    case_id: CaseId,
) -> Result<CaseScenario, ExtractError> {
    if description.trim().is_empty() {
        return Err(ExtractError::EmptyDescription);
    }
    let req = build_profile_prompt(templates, description);
    let first = chat.chat(&req)?;
    match to_case(&first, &case_id) {
        Ok(c) => Ok(c),
        Err(err) => {
            let mut repair = req.clone();
            repair.user.push_str(&fill(
                &templates.contracts.repair,
                &[("error", &err), ("previous", &first)],
            ));
            let second = chat.chat(&repair)?;
            to_case(&second, &case_id).map_err(ExtractError::Invalid)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::scripted::{FixtureScript, ScriptedSession};
    use serde_json::json;
    use std::sync::Arc;

    fn scripted(responses: Vec<serde_json::Value>) -> ScriptedSession {
        ScriptedSession::new(Arc::new(FixtureScript::new(
            responses.into_iter().map(FixtureScript::chat).collect(),
        )))
    }

    fn extracted(speaker: &str) -> serde_json::Value {
        json!({
            "specialty": "endocrinology",
            "patient_profile": {"name": "Sam Ortiz", "age": 58, "gender": "male", "background": "type 2 diabetes"},
            "speaker": speaker,
            "relationship": if speaker == "caregiver" { json!("spouse") } else { json!(null) },
            "medical_situation": "Admitted for a foot infection; blood sugar dropped overnight.",
            "medical_error": "Insulin was given twice because the first dose was not charted.",
            "patient_knowledge": "He knows his sugar dropped and he needed glucose.",
            "cause_known": true
        })
    }

    #[test]
    fn patient_case_from_description() {
        let p = scripted(vec![extracted("patient")]);
        let c = extract_case(
            &p,
            PromptTemplates::builtin(),
            "my patient got a double insulin dose",
            CaseId("b-1".into()),
        )
        .unwrap();
        assert_eq!(c.interlocutor, Interlocutor::Patient);
        assert_eq!(c.origin, CaseOrigin::Bespoke);
        let sent = p.captured()[0].payload["user"].as_str().unwrap().to_string();
        assert!(sent.contains("my patient got a double insulin dose"));
    }

    #[test]
    fn caregiver_needs_relationship() {
        let mut bad = extracted("caregiver");
        bad["relationship"] = json!("");
        let p = scripted(vec![bad.clone(), bad]);
        let err = extract_case(&p, PromptTemplates::builtin(), "x", CaseId("b".into())).unwrap_err();
        assert!(matches!(err, ExtractError::Invalid(m) if m.contains("relationship")));
        let p = scripted(vec![extracted("caregiver")]);
        let c = extract_case(&p, PromptTemplates::builtin(), "x", CaseId("b".into())).unwrap();
        assert_eq!(c.interlocutor.identity(), "caregiver of the patient (spouse)");
    }

    #[test]
    fn empty_description_is_rejected() {
        let p = scripted(vec![]);
        assert_eq!(
            extract_case(&p, PromptTemplates::builtin(), " ", CaseId("b".into())),
            Err(ExtractError::EmptyDescription)
        );
    }
}
