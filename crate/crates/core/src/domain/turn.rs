use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Content address of a stored audio blob (hex SHA-256).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlobRef(pub String);

impl fmt::Display for BlobRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Clinician,
    Patient,
}

impl Speaker {
    /// Speaker of the turn at `index`; clinicians open the conversation.
    pub fn at(index: usize) -> Self {
        if index % 2 == 0 {
            Speaker::Clinician
        } else {
            Speaker::Patient
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker: Speaker,
    pub transcript: String,
    pub audio_ref: Option<BlobRef>,
    pub created_at: DateTime<Utc>,
}

/// A generated patient reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientUtterance {
    pub ssml_text: String,
    pub plain_text: String,
    pub voice_instructions: String,
    pub is_closing: bool,
    pub audio_ref: Option<BlobRef>,
}

/// Renders turns as `Label: text` lines.
pub fn history_text(turns: &[Turn], patient_label: &str) -> String {
    turns
        .iter()
        .map(|t| {
            let who = match t.speaker {
                Speaker::Clinician => "Physician",
                Speaker::Patient => patient_label,
            };
            format!("{who}: {}", t.transcript)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Checks index contiguity and strict alternation starting with the
/// clinician.
pub fn turns_well_formed(turns: &[Turn]) -> bool {
    turns
        .iter()
        .enumerate()
        .all(|(i, t)| t.index == i && t.speaker == Speaker::at(i))
}
