//! Feedback areas and their rubric criteria.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::stage::StageCode;

/// Rubric domain selected by a conversation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackArea {
    AcknowledgmentExplanation,
    EmotionalSupport,
    TrustAccountability,
    Resolution,
    Opening,
    Closing,
}

/// One rubric line. `optional` criteria may be reported as not applicable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Criterion {
    pub id: &'static str,
    pub text: &'static str,
    pub details: &'static [&'static str],
    pub optional: bool,
}

const fn crit(id: &'static str, text: &'static str) -> Criterion {
    Criterion {
        id,
        text,
        details: &[],
        optional: false,
    }
}

const IS_CRITERIA: &[Criterion] = &[
    crit("is_explains_clearly", "Explains what happened clearly and specifically"),
    crit("is_discloses_transparently", "Discloses errors transparently"),
    crit("is_system_factors", "Explains system factors and team involvement"),
    crit("is_missing_information", "Addresses missing or uncertain information"),
];

const EE_CRITERIA: &[Criterion] = &[
    crit(
        "ee_acknowledges_emotions",
        "Acknowledges and validates the patient's emotions (fear/upset/sadness)",
    ),
    crit("ee_validates_feelings", "Validates patient feelings"),
    crit("ee_handles_blame", "Handles blame appropriately"),
    crit("ee_understands_perspective", "Shows understanding of patient's perspective"),
    crit("ee_genuine_empathy", "Demonstrates genuine empathy"),
];

const TA_CRITERIA: &[Criterion] = &[
    crit("ta_specific_apology", "Offers specific, genuine apology"),
    crit("ta_accepts_responsibility", "Accepts appropriate responsibility"),
    crit("ta_addresses_trust", "Addresses trust concerns directly"),
    crit("ta_collaborative_approach", "Takes collaborative approach with patient"),
    crit("ta_rebuilds_trust", "Makes concrete efforts to rebuild trust"),
];

const R_CRITERIA: &[Criterion] = &[
    crit(
        "r_next_steps",
        "Clearly communicates the next steps with clear timeframes (\"I will schedule today\" or \"I'll return in 30-60 minutes\" OR \"We will follow up with you when the results are ready in 3-5 days\")",
    ),
    Criterion {
        id: "r_future_prevention",
        text: "Future prevention, if ANY of the following is true IF ASKED:",
        details: &[
            "Mention prevention measures for the future?",
            "Commit to investigating the error?",
            "Specific improvements that will be made?",
        ],
        optional: true,
    },
];

const START_CRITERIA: &[Criterion] = &[
    crit("start_warm_opening", "Warm and welcoming opening"),
    crit("start_explains_purpose", "Brief explanation of the purpose of the chat"),
];

const END_CRITERIA: &[Criterion] = &[crit("end_warm_closing", "Warm and welcoming closing")];

impl FeedbackArea {
    pub const ALL: [FeedbackArea; 6] = [
        FeedbackArea::AcknowledgmentExplanation,
        FeedbackArea::EmotionalSupport,
        FeedbackArea::TrustAccountability,
        FeedbackArea::Resolution,
        FeedbackArea::Opening,
        FeedbackArea::Closing,
    ];

    /// The four areas reported on in the overall review.
    pub const SUBSTANTIVE: [FeedbackArea; 4] = [
        FeedbackArea::AcknowledgmentExplanation,
        FeedbackArea::EmotionalSupport,
        FeedbackArea::TrustAccountability,
        FeedbackArea::Resolution,
    ];

    pub fn for_stage(code: StageCode) -> Self {
        match code {
            StageCode::InformationSeeking => FeedbackArea::AcknowledgmentExplanation,
            StageCode::EmotionalExpression => FeedbackArea::EmotionalSupport,
            StageCode::TrustAccountability => FeedbackArea::TrustAccountability,
            StageCode::Resolution => FeedbackArea::Resolution,
            StageCode::Start => FeedbackArea::Opening,
            StageCode::End => FeedbackArea::Closing,
        }
    }

    pub fn stage(self) -> StageCode {
        match self {
            FeedbackArea::AcknowledgmentExplanation => StageCode::InformationSeeking,
            FeedbackArea::EmotionalSupport => StageCode::EmotionalExpression,
            FeedbackArea::TrustAccountability => StageCode::TrustAccountability,
            FeedbackArea::Resolution => StageCode::Resolution,
            FeedbackArea::Opening => StageCode::Start,
            FeedbackArea::Closing => StageCode::End,
        }
    }

    pub fn is_substantive(self) -> bool {
        !self.stage().is_control()
    }

    pub fn title(self) -> &'static str {
        match self {
            FeedbackArea::AcknowledgmentExplanation => "Acknowledgment & Explanation",
            FeedbackArea::EmotionalSupport => "Emotional Support",
            FeedbackArea::TrustAccountability => "Trust & Accountability",
            FeedbackArea::Resolution => "Resolution",
            FeedbackArea::Opening => "Opening",
            FeedbackArea::Closing => "Closing",
        }
    }

    pub fn criteria(self) -> &'static [Criterion] {
        match self {
            FeedbackArea::AcknowledgmentExplanation => IS_CRITERIA,
            FeedbackArea::EmotionalSupport => EE_CRITERIA,
            FeedbackArea::TrustAccountability => TA_CRITERIA,
            FeedbackArea::Resolution => R_CRITERIA,
            FeedbackArea::Opening => START_CRITERIA,
            FeedbackArea::Closing => END_CRITERIA,
        }
    }

    /// Finds the area owning a criterion id.
    pub fn of_criterion(id: &str) -> Option<FeedbackArea> {
        FeedbackArea::ALL
            .into_iter()
            .find(|a| a.criteria().iter().any(|c| c.id == id))
    }

    pub fn criterion(id: &str) -> Option<&'static Criterion> {
        FeedbackArea::ALL
            .iter()
            .flat_map(|a| a.criteria())
            .find(|c| c.id == id)
    }
}

impl fmt::Display for FeedbackArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}
