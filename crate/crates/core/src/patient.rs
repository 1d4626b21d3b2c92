//! The patient agent: affect, prompt, markup reply and synthesized voice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymmetry::{KnowledgePartition, Stopwords};
use crate::domain::markup::{strip_tags_lenient, wrap_plain};
use crate::domain::turn::history_text;
use crate::domain::{
    sentence_count, strip_markup, truncate_sentences, validate_markup, AffectDimension, AffectiveState,
    CaseScenario, Direction, EvaluatorDigest, Intensity, PatientUtterance, Turn,
};
use crate::prompts::{fill, PromptTemplates};
use crate::provider::{Capability, ChatProvider, ChatRequest, ProviderError, SpeechSynthesizer};
use crate::structured::{parse_object, strip_fence};

pub const MAX_SENTENCES: usize = 3;
pub const DEFAULT_TURN_BUDGET: u32 = 5;
/// 0.2 in [`Intensity`] units.
pub const DEFAULT_ETA: Intensity = Intensity::from_units_const(2_000);

const TEMPERATURE: f64 = 0.8;
const FINAL_TURN_NOTE: &str = " (this is your final turn: close the conversation now)";
const NO_FEEDBACK: &str = "No evaluation available yet.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatientError {
    #[error("patient turn budget of {0} already used")]
    BudgetExhausted(u32),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientContext {
    pub case: CaseScenario,
    pub partition: KnowledgePartition,
    pub affect: AffectiveState,
    /// The most recent turns, oldest first.
    pub memory: Vec<Turn>,
    pub patient_turn_count: u32,
    pub turn_budget: u32,
    pub eta: Intensity,
}

/// One step of the affect dynamics: trust moves with the direction sign,
/// the four distress dimensions against it, all clamped to [0, 1].
pub fn update_affect(affect: &AffectiveState, direction: Direction, eta: Intensity) -> AffectiveState {
    let step = i64::from(eta.units()) * direction.sign();
    let mut next = *affect;
    for (dim, v) in affect.iter() {
        let delta = if dim == AffectDimension::Trust { step } else { -step };
        next.set(dim, Intensity::from_units(i64::from(v.units()) + delta));
    }
    next
}

/// Fallback voice instructions derived from affect alone.
pub fn describe_affect(affect: &AffectiveState) -> String {
    let distress = [
        (AffectDimension::Anger, "angry", "speak quickly and tersely"),
        (AffectDimension::Anxiety, "anxious", "speak quickly"),
        (AffectDimension::Grief, "sad", "speak slowly"),
        (AffectDimension::Confusion, "confused", "speak hesitantly"),
    ];
    // ties go to the earlier entry
    let (dim, word, pace) = distress
        .iter()
        .rev()
        .max_by_key(|(d, _, _)| affect.get(*d))
        .copied()
        .expect("non-empty");
    let level = affect.get(dim).as_f64();
    if level >= 0.7 {
        format!("Very {word}; {pace}.")
    } else if level >= 0.4 {
        format!("Somewhat {word}, guarded; {pace}.")
    } else if affect.get(AffectDimension::Trust).as_f64() >= 0.6 {
        "Calm and reassured; speak at a relaxed, even pace.".to_string()
    } else {
        "Reserved and cautious; speak at a measured pace.".to_string()
    }
}

fn identity_line(case: &CaseScenario) -> String {
    format!("{}, {}", case.interlocutor.identity(), case.patient_profile.name)
}

fn context_info(case: &CaseScenario) -> String {
    format!("- Patient: {}", case.patient_profile.describe())
}

fn render_digest(digest: Option<&EvaluatorDigest>) -> String {
    match digest {
        None => NO_FEEDBACK.to_string(),
        Some(d) => {
            let keywords = if d.keywords.is_empty() {
                "none".to_string()
            } else {
                d.keywords.join(", ")
            };
            format!(
                "- Quality of the physician's last message: {}\n- Keywords: {keywords}",
                d.direction.as_str()
            )
        }
    }
}

fn affect_lines(affect: &AffectiveState) -> String {
    affect
        .iter()
        .map(|(d, v)| format!("- {}: {v}", d.name()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Everything the patient prompt may contain apart from conversation text
/// and digest keywords. These words are visible to the patient side by
/// construction, so they seed the knowledge partition.
pub fn patient_visible_texts(case: &CaseScenario, templates: &PromptTemplates) -> Vec<String> {
    let mut out = vec![
        templates.patient.response.clone(),
        templates.patient.history.clone(),
        templates.contracts.patient.clone(),
        templates.contracts.repair.clone(),
        identity_line(case),
        context_info(case),
        case.medical_situation.clone(),
        case.patient_knowledge.clone(),
        render_digest(Some(&EvaluatorDigest::neutral(0))),
        NO_FEEDBACK.to_string(),
        FINAL_TURN_NOTE.to_string(),
        "positive mixed negative none".to_string(),
    ];
    out.extend(AffectDimension::ALL.iter().map(|d| d.name().to_string()));
    out
}

pub fn initial_partition(case: &CaseScenario, templates: &PromptTemplates, stop: &Stopwords) -> KnowledgePartition {
    let visible = patient_visible_texts(case, templates);
    let refs: Vec<&str> = visible.iter().map(String::as_str).collect();
    KnowledgePartition::new(&case.medical_error, &refs, stop)
}

/// Renders the patient prompt. The affect shown is the state after
/// reacting to `digest`.
pub fn build_patient_prompt(
    templates: &PromptTemplates,
    ctx: &PatientContext,
    digest: Option<&EvaluatorDigest>,
) -> ChatRequest {
    let affect = match digest {
        Some(d) => update_affect(&ctx.affect, d.direction, ctx.eta),
        None => ctx.affect,
    };
    let case = &ctx.case;
    let history = fill(
        &templates.patient.history,
        &[
            ("identity", &identity_line(case)),
            ("patient_context_info", &context_info(case)),
            ("medical_situation", &case.medical_situation),
            ("patient_knowledge", &case.patient_knowledge),
            ("evaluation", &render_digest(digest)),
            ("history_text", &history_text(&ctx.memory, case.interlocutor.label())),
        ],
    );
    let turn_number = ctx.patient_turn_count + 1;
    let note = if turn_number >= ctx.turn_budget { FINAL_TURN_NOTE } else { "" };
    let contract = fill(
        &templates.contracts.patient,
        &[
            ("turn_number", &turn_number.to_string()),
            ("turn_budget", &ctx.turn_budget.to_string()),
            ("final_turn_note", note),
            ("affect_lines", &affect_lines(&affect)),
        ],
    );
    ChatRequest::new(templates.patient.response.clone(), format!("{history}\n\n{contract}"))
        .with_temperature(TEMPERATURE)
}

#[derive(Deserialize)]
struct RawReply {
    ssml: String,
    #[serde(default)]
    descriptive_instructions: String,
    #[serde(default)]
    is_closing: bool,
}

fn check_reply(r: &RawReply) -> Result<(), String> {
    validate_markup(&r.ssml).map_err(|e| format!("ssml markup invalid: {e}"))?;
    let n = sentence_count(&r.ssml);
    if n == 0 {
        return Err("ssml has no spoken text".into());
    }
    if n > MAX_SENTENCES {
        return Err(format!("ssml has {n} sentences, at most {MAX_SENTENCES} are allowed"));
    }
    Ok(())
}

/// Best usable markup from a reply that failed validation twice.
fn salvage(raw: &str) -> (String, String, bool) {
    let (ssml, instructions, closing) = match parse_object::<RawReply>(raw) {
        Ok(r) => (r.ssml, r.descriptive_instructions, r.is_closing),
        Err(_) => (strip_fence(raw).to_string(), String::new(), false),
    };
    let ssml = match truncate_sentences(&ssml, MAX_SENTENCES) {
        Ok(t) => t,
        Err(_) => {
            let plain = wrap_plain(&strip_tags_lenient(&ssml));
            truncate_sentences(&plain, MAX_SENTENCES).unwrap_or(plain)
        }
    };
    (ssml, instructions, closing)
}

/// Generates the next patient reply and the updated context.
///
/// The reply is forced to close the conversation once the patient turn
/// count reaches the budget.
pub fn generate_patient_utterance(
    chat: &dyn ChatProvider,
    templates: &PromptTemplates,
    ctx: &PatientContext,
    digest: Option<&EvaluatorDigest>,
) -> Result<(PatientUtterance, PatientContext), PatientError> {
    if ctx.patient_turn_count >= ctx.turn_budget {
        return Err(PatientError::BudgetExhausted(ctx.turn_budget));
    }
    let req = build_patient_prompt(templates, ctx, digest);
    let first = chat.chat(&req)?;
    let parsed = parse_object::<RawReply>(&first).and_then(|r| check_reply(&r).map(|_| r));
    let (ssml, instructions, closing) = match parsed {
        Ok(r) => (r.ssml, r.descriptive_instructions, r.is_closing),
        Err(err) => {
            tracing::debug!(error = %err, "patient reply invalid, re-prompting");
            let mut repair = req.clone();
            repair.user.push_str(&fill(
                &templates.contracts.repair,
                &[("error", &err), ("previous", &first)],
            ));
            let second = chat.chat(&repair)?;
            match parse_object::<RawReply>(&second).and_then(|r| check_reply(&r).map(|_| r)) {
                Ok(r) => (r.ssml, r.descriptive_instructions, r.is_closing),
                Err(err) => {
                    tracing::warn!(error = %err, "patient reply invalid after repair, salvaging");
                    salvage(&second)
                }
            }
        }
    };
    let plain_text = strip_markup(&ssml).unwrap_or_else(|_| strip_tags_lenient(&ssml));
    if plain_text.trim().is_empty() {
        return Err(PatientError::Provider(ProviderError::InvalidResponse {
            capability: Capability::Chat,
            message: "patient reply has no text".into(),
        }));
    }
    let mut next = ctx.clone();
    if let Some(d) = digest {
        next.affect = update_affect(&ctx.affect, d.direction, ctx.eta);
    }
    next.patient_turn_count += 1;
    let voice_instructions = if instructions.trim().is_empty() {
        describe_affect(&next.affect)
    } else {
        instructions.trim().to_string()
    };
    let utt = PatientUtterance {
        ssml_text: ssml,
        plain_text,
        voice_instructions,
        is_closing: closing || next.patient_turn_count >= ctx.turn_budget,
        audio_ref: None,
    };
    Ok((utt, next))
}

/// Sends the markup and voice instructions to the synthesizer verbatim.
pub fn synthesize_patient_audio(tts: &dyn SpeechSynthesizer, utt: &PatientUtterance) -> Result<Vec<u8>, ProviderError> {
    tts.synthesize(&utt.ssml_text, &utt.voice_instructions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::case::tests::case;
    use crate::domain::Interlocutor;
    use crate::provider::scripted::{FixtureFault, FixtureScript, ScriptedSession};
    use serde_json::json;
    use std::sync::Arc;

    fn t() -> &'static PromptTemplates {
        PromptTemplates::builtin()
    }

    fn ctx() -> PatientContext {
        let c = case();
        PatientContext {
            partition: initial_partition(&c, t(), Stopwords::builtin()),
            affect: c.initial_affect(),
            case: c,
            memory: vec![],
            patient_turn_count: 0,
            turn_budget: DEFAULT_TURN_BUDGET,
            eta: DEFAULT_ETA,
        }
    }

    fn scripted(responses: Vec<serde_json::Value>) -> ScriptedSession {
        ScriptedSession::new(Arc::new(FixtureScript::new(
            responses.into_iter().map(FixtureScript::chat).collect(),
        )))
    }

    fn reply(ssml: &str, closing: bool) -> serde_json::Value {
        json!({"ssml": ssml, "descriptive_instructions": "angry, speak quickly", "is_closing": closing})
    }

    fn digest(direction: Direction) -> EvaluatorDigest {
        EvaluatorDigest {
            turn_index: 0,
            keywords: vec!["empathy".into()],
            direction,
        }
    }

    #[test]
    fn positive_step_from_uniform_half() {
        let half = AffectiveState::uniform(Intensity::from_f64(0.5));
        let next = update_affect(&half, Direction::Positive, DEFAULT_ETA);
        assert_eq!(next.trust, Intensity::from_f64(0.7));
        for d in [AffectDimension::Anger, AffectDimension::Anxiety, AffectDimension::Confusion, AffectDimension::Grief] {
            assert_eq!(next.get(d), Intensity::from_f64(0.3));
        }
        assert_eq!(update_affect(&half, Direction::Mixed, DEFAULT_ETA), half);
    }

    #[test]
    fn negative_step_clamps() {
        let mut a = AffectiveState::default();
        a.anger = Intensity::from_f64(0.95);
        assert_eq!(update_affect(&a, Direction::Negative, DEFAULT_ETA).anger, Intensity::ONE);
    }

    #[test]
    fn prompt_hides_error_and_names_caregiver() {
        let mut c = ctx();
        let p = build_patient_prompt(t(), &c, Some(&digest(Direction::Mixed)));
        assert!(p.text().contains(&c.case.patient_knowledge));
        assert!(!p.text().contains(&c.case.medical_error));
        assert_eq!(p, build_patient_prompt(t(), &c, Some(&digest(Direction::Mixed))));
        c.case.interlocutor = Interlocutor::Caregiver {
            relationship: "daughter".into(),
        };
        assert!(build_patient_prompt(t(), &c, None).text().contains("daughter"));
    }

    #[test]
    fn prompt_has_no_physician_only_words() {
        let c = ctx();
        assert!(!c.partition.physician_only_words().is_empty());
        let p = build_patient_prompt(t(), &c, Some(&digest(Direction::Negative)));
        assert!(c.partition.leaks_in(&p.text()).is_empty(), "{:?}", c.partition.leaks_in(&p.text()));
    }

    #[test]
    fn sample_reply_keeps_emphasis() {
        let s = "<speak>I understand that these things take time, but it's been <emphasis>three weeks</emphasis> and I'm still waiting for an update.</speak>";
        let p = scripted(vec![reply(s, false)]);
        let (u, next) = generate_patient_utterance(&p, t(), &ctx(), Some(&digest(Direction::Negative))).unwrap();
        assert_eq!(u.ssml_text.matches("<emphasis>").count(), 1);
        assert!(u.plain_text.contains("three weeks and"));
        assert_eq!(next.patient_turn_count, 1);
        assert_eq!(u.voice_instructions, "angry, speak quickly");
        assert!(!u.is_closing);
    }

    #[test]
    fn final_turn_is_forced_closed() {
        let mut c = ctx();
        c.patient_turn_count = 4;
        let p = scripted(vec![reply("<speak>Okay.</speak>", false)]);
        let (u, next) = generate_patient_utterance(&p, t(), &c, None).unwrap();
        assert!(u.is_closing);
        assert_eq!(next.patient_turn_count, 5);
        assert!(p.captured()[0].payload["user"].as_str().unwrap().contains("final turn"));
        assert_eq!(
            generate_patient_utterance(&p, t(), &next, None).unwrap_err(),
            PatientError::BudgetExhausted(5)
        );
    }

    #[test]
    fn long_reply_is_truncated_after_repair() {
        let four = "<speak>One. Two. Three. <emphasis>Four</emphasis>.</speak>";
        let p = scripted(vec![reply(four, false), reply(four, false)]);
        let (u, _) = generate_patient_utterance(&p, t(), &ctx(), None).unwrap();
        assert_eq!(u.plain_text, "One. Two. Three.");
        assert!(validate_markup(&u.ssml_text).is_ok());
    }

    #[test]
    fn broken_markup_is_stripped_and_wrapped() {
        let bad = "<speak>I am <emphasis>upset.</speak>";
        let p = scripted(vec![reply(bad, false), reply(bad, true)]);
        let (u, _) = generate_patient_utterance(&p, t(), &ctx(), None).unwrap();
        assert_eq!(u.ssml_text, "<speak>I am upset.</speak>");
        assert!(u.is_closing);
    }

    #[test]
    fn missing_instructions_fall_back_to_affect() {
        let p = scripted(vec![json!({"ssml": "<speak>Fine.</speak>"})]);
        let (u, _) = generate_patient_utterance(&p, t(), &ctx(), None).unwrap();
        assert!(!u.voice_instructions.is_empty());
    }

    #[test]
    fn audio_forwards_instructions() {
        let p = ScriptedSession::new(Arc::new(FixtureScript::new(vec![])));
        let utt = PatientUtterance {
            ssml_text: "<speak>Hi.</speak>".into(),
            plain_text: "Hi.".into(),
            voice_instructions: "angry, speak quickly".into(),
            is_closing: false,
            audio_ref: None,
        };
        let bytes = synthesize_patient_audio(&p, &utt).unwrap();
        assert_eq!(bytes, crate::provider::sentinel_audio(&utt.ssml_text, &utt.voice_instructions));
        assert_eq!(p.captured()[0].payload["instructions"], "angry, speak quickly");
        let failing = ScriptedSession::new(Arc::new(FixtureScript::new(vec![FixtureScript::fault(
            Capability::Synthesize,
            FixtureFault::Http { status: 503 },
        )])));
        assert!(synthesize_patient_audio(&failing, &utt).is_err());
    }

    #[test]
    fn fallback_descriptions() {
        assert!(describe_affect(&AffectiveState::uniform(Intensity::from_f64(0.9))).starts_with("Very angry"));
        let mut calm = AffectiveState::uniform(Intensity::ZERO);
        calm.trust = Intensity::ONE;
        assert!(describe_affect(&calm).starts_with("Calm"));
    }
}
