use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::affect::AffectiveState;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseId(pub String);

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub name: String,
    #[serde(default)]
    pub age: Option<u32>,
    pub gender: String,
    #[serde(default)]
    pub background: String,
}

impl PatientProfile {
    /// One-line description used in patient prompts.
    pub fn describe(&self) -> String {
        let mut parts = vec![format!("Name: {}", self.name)];
        if let Some(age) = self.age {
            parts.push(format!("Age: {age}"));
        }
        if !self.gender.trim().is_empty() {
            parts.push(format!("Gender: {}", self.gender));
        }
        if !self.background.trim().is_empty() {
            parts.push(format!("Background: {}", self.background));
        }
        parts.join("; ")
    }
}

/// Who the clinician is speaking to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interlocutor {
    Patient,
    Caregiver { relationship: String },
}

impl Interlocutor {
    pub fn identity(&self) -> String {
        match self {
            Interlocutor::Patient => "the patient".to_string(),
            Interlocutor::Caregiver { relationship } => {
                format!("caregiver of the patient ({relationship})")
            }
        }
    }

    /// Speaker label used in conversation transcripts.
    pub fn label(&self) -> &'static str {
        match self {
            Interlocutor::Patient => "Patient",
            Interlocutor::Caregiver { .. } => "Caregiver",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseOrigin {
    Predefined,
    Bespoke,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaseError {
    #[error("case field `{0}` must not be empty")]
    EmptyField(&'static str),
}

/// An error-disclosure scenario.
///
/// `medical_error` is physician-side knowledge and never reaches the patient
/// agent; `patient_knowledge` is what the patient or caregiver knows so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseScenario {
    pub case_id: CaseId,
    pub specialty: String,
    pub patient_profile: PatientProfile,
    pub interlocutor: Interlocutor,
    pub medical_situation: String,
    pub medical_error: String,
    pub patient_knowledge: String,
    pub cause_known: bool,
    pub origin: CaseOrigin,
    /// Starting affect; the default applies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_affect: Option<AffectiveState>,
}

impl CaseScenario {
    pub fn validate(&self) -> Result<(), CaseError> {
        let required = [
            ("case_id", &self.case_id.0),
            ("medical_error", &self.medical_error),
            ("patient_knowledge", &self.patient_knowledge),
            ("medical_situation", &self.medical_situation),
        ];
        for (name, value) in required {
            if value.trim().is_empty() {
                return Err(CaseError::EmptyField(name));
            }
        }
        if let Interlocutor::Caregiver { relationship } = &self.interlocutor {
            if relationship.trim().is_empty() {
                return Err(CaseError::EmptyField("interlocutor.relationship"));
            }
        }
        Ok(())
    }

    pub fn initial_affect(&self) -> AffectiveState {
        self.initial_affect.unwrap_or_default()
    }
}
