use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Conversation stage reflected in a patient message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageCode {
    #[serde(rename = "IS")]
    InformationSeeking,
    #[serde(rename = "EE")]
    EmotionalExpression,
    #[serde(rename = "TA")]
    TrustAccountability,
    #[serde(rename = "R")]
    Resolution,
    #[serde(rename = "START")]
    Start,
    #[serde(rename = "END")]
    End,
}

impl StageCode {
    pub const ALL: [StageCode; 6] = [
        StageCode::InformationSeeking,
        StageCode::EmotionalExpression,
        StageCode::TrustAccountability,
        StageCode::Resolution,
        StageCode::Start,
        StageCode::End,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageCode::InformationSeeking => "IS",
            StageCode::EmotionalExpression => "EE",
            StageCode::TrustAccountability => "TA",
            StageCode::Resolution => "R",
            StageCode::Start => "START",
            StageCode::End => "END",
        }
    }

    /// START and END are control stages; the other four are substantive.
    pub fn is_control(self) -> bool {
        matches!(self, StageCode::Start | StageCode::End)
    }
}

impl fmt::Display for StageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageCode {
    type Err = StageLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageCode::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| StageLabelError::UnknownCode(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StageLabelError {
    #[error("no stage code given")]
    Empty,
    #[error("unknown stage code {0:?}")]
    UnknownCode(String),
    #[error("stage code {0} listed more than once")]
    DuplicateCode(StageCode),
    #[error("{0} stage codes given, at most two are allowed")]
    TooManyStages(usize),
    #[error("START must stand alone and is only valid for the first message")]
    IllegalStart,
    #[error("END must stand alone")]
    IllegalEnd,
}

/// Validated stage codes for one classification event.
///
/// `turn_index` is the 0-based ordinal of the classification event within a
/// session. Event 0 labels the conversation opener, which is the only
/// position where START is legal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawStageLabelSet")]
pub struct StageLabelSet {
    codes: Vec<StageCode>,
    turn_index: usize,
}

#[derive(Deserialize)]
struct RawStageLabelSet {
    codes: Vec<StageCode>,
    turn_index: usize,
}

impl TryFrom<RawStageLabelSet> for StageLabelSet {
    type Error = StageLabelError;

    fn try_from(raw: RawStageLabelSet) -> Result<Self, Self::Error> {
        StageLabelSet::new(raw.codes, raw.turn_index)
    }
}

impl StageLabelSet {
    /// Checks every label-set rule on an already-parsed code list.
    pub fn new(codes: Vec<StageCode>, turn_index: usize) -> Result<Self, StageLabelError> {
        if codes.is_empty() {
            return Err(StageLabelError::Empty);
        }
        for (i, c) in codes.iter().enumerate() {
            if codes[..i].contains(c) {
                return Err(StageLabelError::DuplicateCode(*c));
            }
        }
        if codes.len() > 2 {
            return Err(StageLabelError::TooManyStages(codes.len()));
        }
        if codes.contains(&StageCode::Start) && (codes.len() > 1 || turn_index > 0) {
            return Err(StageLabelError::IllegalStart);
        }
        if codes.contains(&StageCode::End) && codes.len() > 1 {
            return Err(StageLabelError::IllegalEnd);
        }
        Ok(StageLabelSet { codes, turn_index })
    }

    /// The label set used for the opening clinician turn.
    pub fn opening() -> Self {
        StageLabelSet {
            codes: vec![StageCode::Start],
            turn_index: 0,
        }
    }

    /// The classifier's fallback when the provider never produces a legal
    /// answer.
    pub fn fallback(turn_index: usize) -> Self {
        StageLabelSet {
            codes: vec![StageCode::InformationSeeking],
            turn_index,
        }
    }

    pub fn codes(&self) -> &[StageCode] {
        &self.codes
    }

    pub fn turn_index(&self) -> usize {
        self.turn_index
    }

    pub fn contains(&self, code: StageCode) -> bool {
        self.codes.contains(&code)
    }

    /// Comma-joined codes, e.g. `IS,EE`.
    pub fn render(&self) -> String {
        self.codes
            .iter()
            .map(|c| c.as_str())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for StageLabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Parses a comma-separated `stages` field into a legal label set.
///
/// Codes are trimmed and uppercased before lookup.
pub fn validate_stage_labels(raw: &str, turn_index: usize) -> Result<StageLabelSet, StageLabelError> {
    if raw.trim().is_empty() {
        return Err(StageLabelError::Empty);
    }
    let codes = raw
        .split(',')
        .map(|part| part.trim().to_uppercase().parse::<StageCode>())
        .collect::<Result<Vec<_>, _>>()?;
    StageLabelSet::new(codes, turn_index)
}
