//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Runs offline against scripted providers.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use candor_core::asymmetry::{make_digest, update_partition, Stopwords};
use candor_core::classifier::{classify_stage, stages_to_areas, StageRequest};
use candor_core::domain::{
    normalize_phrase_match, validate_stage_labels, AffectiveState, CaseScenario, Direction, FeedbackArea,
    FeedbackRecord, ImprovementArea, Intensity, Score, Speaker, StageCode, StageLabelSet, Turn, TurnFeedback,
};
use candor_core::evaluator::{generate_turn_feedback, score_schema_export, EvaluatorState};
use candor_core::orchestrator::{ClinicianInput, FaultHook, OrchestratorError};
use candor_core::patient::{build_patient_prompt, initial_partition, update_affect, PatientContext};
use candor_core::prompts::PromptTemplates;
use candor_core::provider::scripted::{FixtureFault, FixtureScript, ScriptedSession};
use candor_core::provider::Capability;
use candor_core::report::session_markdown;
use candor_core::session::{Phase, PipelineStep, SessionOptions};
use candor_core::store::replay_bytes;
use chrono::{TimeZone, Utc};
use num_rational::Ratio;
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::json;

type Outcome = Result<String, String>;

fn templates() -> &'static PromptTemplates {
    PromptTemplates::builtin()
}

fn scripted(responses: Vec<serde_json::Value>) -> ScriptedSession {
    ScriptedSession::new(Arc::new(FixtureScript::new(
        responses.into_iter().map(FixtureScript::chat).collect(),
    )))
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:?}, limit {limit:?}"))
    }
}

// Legal label sets, stated independently of the validator.
fn legal(codes: &[StageCode], first: bool) -> bool {
    let has = |c| codes.contains(&c);
    match codes.len() {
        1 => !has(StageCode::Start) || first,
        2 => !has(StageCode::Start) && !has(StageCode::End),
        _ => false,
    }
}

fn stage_rule_conformance() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    for mask in 1u32..64 {
        let codes: Vec<StageCode> = StageCode::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, c)| *c)
            .collect();
        let raw = codes.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(",");
        for first in [true, false] {
            cases += 1;
            let idx = if first { 0 } else { 1 };
            let got = validate_stage_labels(&raw, idx);
            if got.is_ok() != legal(&codes, first) {
                return Err(format!("{raw} first={first}: validator says {got:?}"));
            }
            if let Ok(set) = got {
                if set.codes() != codes || set.turn_index() != idx {
                    return Err(format!("{raw}: returned {set:?}"));
                }
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{cases}/126 cases exact in {:?}", start.elapsed()))
}

fn random_code_text(rng: &mut StdRng, codes: &[StageCode]) -> String {
    let seps = [",", ", ", " , ", ",\t"];
    let body = codes
        .iter()
        .map(|c| {
            if rng.random_bool(0.3) {
                c.as_str().to_lowercase()
            } else {
                c.as_str().to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(seps.choose(rng).unwrap());
    match rng.random_range(0..5) {
        0 => body,
        1 => format!("  {body}\n"),
        2 => json!({ "stages": body }).to_string(),
        3 => format!("Here you go:\n```json\n{}\n```", json!({ "stages": body })),
        _ => json!({ "stages": codes.iter().map(|c| c.as_str()).collect::<Vec<_>>() }).to_string(),
    }
}

fn random_junk(rng: &mut StdRng) -> String {
    let n = rng.random_range(0..40);
    match rng.random_range(0..4) {
        0 => (0..n).map(|_| rng.random::<char>()).collect(),
        1 => (0..n).map(|_| rng.random_range(b' '..=b'~') as char).collect(),
        2 => {
            let parts = ["IS", "EE", "TA", "R", "START", "END", "XX", ",", "{", "}", "\"stages\"", ":", " ", "[", "]"];
            (0..n % 12).map(|_| *parts.choose(rng).unwrap()).collect()
        }
        _ => {
            let k = rng.random_range(3..=6);
            let codes: Vec<StageCode> = (0..k).map(|_| *StageCode::ALL.choose(rng).unwrap()).collect();
            random_code_text(rng, &codes)
        }
    }
}

fn classifier_fuzz() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let (mut exact, mut fallbacks, mut repaired) = (0, 0, 0);
    for i in 0..10_000 {
        let idx = rng.random_range(0..4usize);
        let req = StageRequest::new("How could you do this to me?", idx);
        // A third of the cases get a known-legal answer first.
        let known: Option<Vec<StageCode>> = (i % 3 == 0).then(|| loop {
            let k = rng.random_range(1..=2);
            let mut codes: Vec<StageCode> = Vec::new();
            while codes.len() < k {
                let c = *StageCode::ALL.choose(&mut rng).unwrap();
                if !codes.contains(&c) {
                    codes.push(c);
                }
            }
            if legal(&codes, idx == 0) {
                break codes;
            }
        });
        let first = match &known {
            Some(codes) => random_code_text(&mut rng, codes),
            None => random_junk(&mut rng),
        };
        let second = random_junk(&mut rng);
        let p = scripted(vec![json!(first), json!(second)]);
        let out = classify_stage(&p, templates(), &req).map_err(|e| format!("case {i}: {e}"))?;
        let labels = &out.labels;
        if StageLabelSet::new(labels.codes().to_vec(), idx).as_ref() != Ok(labels) || labels.turn_index() != idx {
            return Err(format!("case {i}: illegal result {labels:?} for {first:?} / {second:?}"));
        }
        let calls = p.captured().len();
        if calls != out.attempts as usize {
            return Err(format!("case {i}: {calls} provider calls but {} attempts", out.attempts));
        }
        if out.fell_back && (out.attempts != 2 || labels.codes() != [StageCode::InformationSeeking]) {
            return Err(format!("case {i}: fallback after {} attempts", out.attempts));
        }
        if let Some(codes) = &known {
            if out.attempts != 1 || labels.codes() != codes.as_slice() {
                return Err(format!("case {i}: legal answer {first:?} gave {out:?}"));
            }
            exact += 1;
        }
        fallbacks += usize::from(out.fell_back);
        repaired += usize::from(out.attempts == 2 && !out.fell_back);
    }
    if fallbacks == 0 {
        return Err("fallback path never exercised".into());
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "10000 strings, 0 violations ({exact} known-legal exact, {repaired} repaired, {fallbacks} fallbacks) in {:?}",
        start.elapsed()
    ))
}

fn stage_area_mapping() -> Outcome {
    use FeedbackArea::*;
    use StageCode::*;
    let table = [
        (InformationSeeking, AcknowledgmentExplanation, "Acknowledgment & Explanation"),
        (EmotionalExpression, EmotionalSupport, "Emotional Support"),
        (StageCode::TrustAccountability, FeedbackArea::TrustAccountability, "Trust & Accountability"),
        (StageCode::Resolution, FeedbackArea::Resolution, "Resolution"),
        (Start, Opening, "Opening"),
        (End, Closing, "Closing"),
    ];
    for (code, area, title) in table {
        let idx = usize::from(code != Start);
        let set = StageLabelSet::new(vec![code], idx).map_err(|e| e.to_string())?;
        if stages_to_areas(&set) != [area] || area.title() != title || FeedbackArea::for_stage(code) != area {
            return Err(format!("{code:?} maps to {:?} ({})", stages_to_areas(&set), area.title()));
        }
    }
    let pair = StageLabelSet::new(vec![InformationSeeking, StageCode::Resolution], 2).unwrap();
    if stages_to_areas(&pair) != [AcknowledgmentExplanation, FeedbackArea::Resolution] {
        return Err("pair order not preserved".into());
    }
    let counts: Vec<usize> = FeedbackArea::SUBSTANTIVE.iter().map(|a| a.criteria().len()).collect();
    if counts != [4, 5, 5, 2] || Opening.criteria().len() != 2 || Closing.criteria().len() != 1 {
        return Err(format!("criterion counts {counts:?}"));
    }
    Ok("4 substantive rows plus START/END exact".into())
}

// Independent word matcher for the phrase oracle.
fn oracle_words(s: &str) -> Vec<String> {
    s.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect()
}

fn oracle_matches(phrase: &str, transcript: &str) -> bool {
    let (p, t) = (oracle_words(phrase), oracle_words(transcript));
    !p.is_empty() && t.windows(p.len()).any(|w| w == p.as_slice())
}

fn word(rng: &mut StdRng, letters: &[u8]) -> String {
    (0..rng.random_range(2..7)).map(|_| *letters.choose(rng).unwrap() as char).collect()
}

fn decorate(rng: &mut StdRng, words: &[String]) -> String {
    words
        .iter()
        .map(|w| {
            let w = if rng.random_bool(0.3) { w.to_uppercase() } else { w.clone() };
            let punct = [",", ".", "!", "?", "", "", ""].choose(rng).unwrap().to_string();
            w + &punct
        })
        .collect::<Vec<_>>()
        .join(if rng.random_bool(0.2) { "  " } else { " " })
}

fn clinician(index: usize, text: &str) -> Turn {
    Turn {
        index,
        speaker: Speaker::Clinician,
        transcript: text.to_string(),
        audio_ref: None,
        created_at: Utc.timestamp_opt(0, 0).unwrap(),
    }
}

fn improvement() -> serde_json::Value {
    json!({"subtitle": "Pause after key news", "description": "d", "suggestion": "s", "example_phrasing": "e"})
}

fn phrase_anchoring() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xfeed);
    let case = common::golden_case();
    let (mut kept_total, mut dropped_total) = (0, 0);
    for i in 0..1_000 {
        let vocab: Vec<String> = (0..12).map(|_| word(&mut rng, b"abcdefghijklm")).collect();
        let spoken: Vec<String> = (0..rng.random_range(4..30)).map(|_| vocab.choose(&mut rng).unwrap().clone()).collect();
        let transcript = decorate(&mut rng, &spoken);
        let mut phrases: Vec<(String, bool)> = Vec::new();
        for _ in 0..rng.random_range(1..6) {
            if rng.random_bool(0.5) {
                let a = rng.random_range(0..spoken.len());
                let b = rng.random_range(a + 1..=spoken.len().min(a + 5));
                phrases.push((decorate(&mut rng, &spoken[a..b]), true));
            } else {
                let n = rng.random_range(1..4);
                let foreign: Vec<String> = (0..n).map(|_| word(&mut rng, b"nopqrstuvwxyz")).collect();
                phrases.push((decorate(&mut rng, &foreign), false));
            }
        }
        let split = rng.random_range(0..=phrases.len());
        let (strong, weak) = phrases.split_at(split);
        let reply = json!({
            "criterion_scores": {"start_warm_opening": rng.random_range(1..=5), "start_explains_purpose": rng.random_range(1..=5)},
            "strengths": ["Warm"],
            "improvements": [improvement()],
            "encouragement": "Good start.",
            "strength_phrases": strong.iter().map(|p| &p.0).collect::<Vec<_>>(),
            "improvement_phrases": weak.iter().map(|p| &p.0).collect::<Vec<_>>(),
        });
        let p = scripted(vec![reply]);
        let latest = clinician(0, &transcript);
        let (rec, _) = generate_turn_feedback(
            &p,
            templates(),
            &EvaluatorState::default(),
            &case,
            &[],
            &latest,
            &StageLabelSet::opening(),
        )
        .map_err(|e| format!("case {i}: {e}"))?;
        let fb = rec.feedback().ok_or_else(|| format!("case {i}: feedback unavailable"))?;
        for (given, kept) in [(strong, &fb.strength_phrases), (weak, &fb.improvement_phrases)] {
            let expected: Vec<&String> = given.iter().filter(|p| p.1).map(|p| &p.0).collect();
            if kept.iter().collect::<Vec<_>>() != expected {
                return Err(format!("case {i}: kept {kept:?}, expected {expected:?} in {transcript:?}"));
            }
            for k in kept {
                if normalize_phrase_match(k, &transcript).is_none() || !oracle_matches(k, &transcript) {
                    return Err(format!("case {i}: kept phrase {k:?} does not match"));
                }
            }
            for (g, _) in given.iter().filter(|p| !p.1) {
                if oracle_matches(g, &transcript) {
                    return Err(format!("case {i}: injected phrase {g:?} matches"));
                }
            }
            kept_total += kept.len();
            dropped_total += given.len() - kept.len();
        }
    }
    Ok(format!("1000 pairs, 0 violations ({kept_total} anchored kept, {dropped_total} injected dropped)"))
}

fn pseudo(rng: &mut StdRng, syllables: &[&str]) -> String {
    (0..rng.random_range(2..4)).map(|_| *syllables.choose(rng).unwrap()).collect()
}

fn leak_freedom() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x1eaf);
    let stop = Stopwords::builtin();
    let secret_syl = ["zor", "vek", "qua", "xil", "bram", "dox"];
    let patient_syl = ["mel", "tano", "rin", "sul", "pen", "gol"];
    let mut disclosed_in_digest = 0;
    for i in 0..1_000 {
        let secrets: Vec<String> = (0..8).map(|_| pseudo(&mut rng, &secret_syl)).collect();
        let known: Vec<String> = (0..8).map(|_| pseudo(&mut rng, &patient_syl)).collect();
        let mut error_words: Vec<&String> = secrets.iter().collect();
        error_words.extend(known.iter().take(2));
        let mut case: CaseScenario = common::golden_case();
        case.medical_error = error_words.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
        case.medical_situation = known[..4].join(" ");
        case.patient_knowledge = known[4..].join(" ");
        case.patient_profile.background = known[2].clone();

        let mut part = initial_partition(&case, templates(), stop);
        let mut memory = Vec::new();
        let mut said: BTreeSet<String> = BTreeSet::new();
        for turn in 0..3 {
            let mut words: Vec<String> = (0..5).map(|_| known.choose(&mut rng).unwrap().clone()).collect();
            if rng.random_bool(0.5) {
                words.push(secrets.choose(&mut rng).unwrap().clone());
            }
            let text = words.join(" ");
            said.extend(words.iter().cloned());
            part = update_partition(&part, &text, stop);
            memory.push(clinician(turn * 2, &text));

            let mix = |rng: &mut StdRng| -> String {
                (0..4)
                    .map(|_| {
                        if rng.random_bool(0.5) {
                            secrets.choose(rng).unwrap().clone()
                        } else {
                            known.choose(rng).unwrap().clone()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let fb = TurnFeedback {
                turn_index: turn * 2,
                stages: StageLabelSet::opening(),
                overall_score: Score::integer(rng.random_range(1..=5)).unwrap(),
                criterion_scores: BTreeMap::new(),
                not_applicable: vec![],
                strengths: vec![mix(&mut rng)],
                improvements: vec![ImprovementArea {
                    subtitle: mix(&mut rng),
                    description: mix(&mut rng),
                    suggestion: mix(&mut rng),
                    example_phrasing: mix(&mut rng),
                }],
                encouragement: mix(&mut rng),
                strength_phrases: vec![],
                improvement_phrases: vec![],
            };
            let digest = make_digest(&fb, &part, stop);
            let undisclosed: BTreeSet<&String> = secrets.iter().filter(|s| !said.contains(*s)).collect();
            for k in &digest.keywords {
                if undisclosed.contains(k) || part.is_physician_only(k) {
                    return Err(format!("case {i}: digest leaks {k:?}"));
                }
                disclosed_in_digest += usize::from(secrets.contains(k));
            }
            let ctx = PatientContext {
                case: case.clone(),
                partition: part.clone(),
                affect: AffectiveState::default(),
                memory: memory.clone(),
                patient_turn_count: turn as u32,
                turn_budget: 5,
                eta: Intensity::from_units(2_000),
            };
            let prompt = build_patient_prompt(templates(), &ctx, Some(&digest)).text();
            let tokens: BTreeSet<String> = oracle_words(&prompt).into_iter().collect();
            if let Some(leak) = undisclosed.iter().find(|s| tokens.contains(s.as_str())) {
                return Err(format!("case {i}: patient prompt contains {leak:?}"));
            }
            if !part.leaks_in(&prompt).is_empty() {
                return Err(format!("case {i}: partition reports leaks {:?}", part.leaks_in(&prompt)));
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "1000 cases, 0 violations ({disclosed_in_digest} disclosed terms allowed through) in {:?}",
        start.elapsed()
    ))
}

fn affect_dynamics() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xaffec7);
    let one = Ratio::from_integer(1i64);
    let zero = Ratio::from_integer(0i64);
    for i in 0..1_000 {
        let units: Vec<i64> = (0..5).map(|_| rng.random_range(0..=10_000)).collect();
        let state = AffectiveState {
            anxiety: Intensity::from_units(units[0]),
            anger: Intensity::from_units(units[1]),
            trust: Intensity::from_units(units[2]),
            confusion: Intensity::from_units(units[3]),
            grief: Intensity::from_units(units[4]),
        };
        let eta_units = if i % 2 == 0 { 2_000 } else { rng.random_range(0..=10_000) };
        let score = Score::new(rng.random_range(0..=50), 10).unwrap();
        let dir = Direction::from_score(score);
        let r = score.ratio();
        let sign: i64 = if r >= Ratio::from_integer(4) {
            1
        } else if r <= Ratio::from_integer(2) {
            -1
        } else {
            0
        };
        let next = update_affect(&state, dir, Intensity::from_units(eta_units));
        let eta = Ratio::new(eta_units, 10_000);
        let before = [state.anxiety, state.anger, state.trust, state.confusion, state.grief];
        let after = [next.anxiety, next.anger, next.trust, next.confusion, next.grief];
        for (d, (b, a)) in before.iter().zip(after).enumerate() {
            let v = Ratio::new(i64::from(b.units()), 10_000);
            let delta = if d == 2 { eta * sign } else { -eta * sign };
            let expect = (v + delta).clamp(zero, one);
            let got = Ratio::new(i64::from(a.units()), 10_000);
            if got != expect || got < zero || got > one {
                return Err(format!("case {i} dim {d}: {v} with {dir:?} gave {got}, oracle {expect}"));
            }
            let moved = got - v;
            let ok = match (sign, d == 2) {
                (0, _) => moved == zero,
                (1, true) | (-1, false) => moved >= zero,
                _ => moved <= zero,
            };
            if !ok {
                return Err(format!("case {i} dim {d}: not monotone"));
            }
        }
    }
    Ok("1000 updates exact against rational oracle, bounded and monotone".into())
}

fn turn_budget() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0xb0d9e7);
    let lines = [
        "<speak>I am not going anywhere until I understand this.</speak>",
        "<speak>Keep talking. I have more questions.</speak>",
        "<speak>No. <emphasis>Explain</emphasis> it again.</speak>",
        "Plain text with no markup at all, and far too many sentences. One. Two. Three. Four.",
        "<speak>I will stay. I will stay. I will stay. I will stay.</speak>",
    ];
    let mut sessions = 0;
    for i in 0..40 {
        let budget = if i < 20 { 5 } else { rng.random_range(1..=8) };
        let mut entries = Vec::new();
        for turn in 0..budget + 2 {
            if turn > 0 {
                entries.push(FixtureScript::chat("not a stage"));
                entries.push(FixtureScript::chat("still not a stage"));
            }
            entries.push(FixtureScript::chat("no feedback"));
            entries.push(FixtureScript::chat("no feedback"));
            let reply = |rng: &mut StdRng| {
                json!({"ssml": lines.choose(rng).unwrap(), "descriptive_instructions": "stubborn", "is_closing": false})
            };
            entries.push(FixtureScript::chat(reply(&mut rng)));
            entries.push(FixtureScript::chat(reply(&mut rng)));
        }
        entries.push(FixtureScript::chat("no overall either"));
        entries.push(FixtureScript::chat("no overall either"));
        let d = tempfile::tempdir().unwrap();
        let o = common::orchestrator(d.path(), FixtureScript::new(entries));
        let options = SessionOptions {
            turn_budget: budget,
            ..Default::default()
        };
        let s = o.create_session(common::golden_case(), options).map_err(|e| e.to_string())?;
        let mut closed_at = None;
        for k in 1..=budget + 1 {
            let r = o
                .submit_clinician_turn(&s.session_id, ClinicianInput::Text("Please go on.".into()))
                .map_err(|e| format!("session {i} turn {k}: {e}"))?;
            if r.utterance.is_closing != r.ended {
                return Err(format!("session {i} turn {k}: closing and ended disagree"));
            }
            if r.ended {
                closed_at = Some(k);
                break;
            }
        }
        if closed_at != Some(budget) {
            return Err(format!("session {i}: budget {budget}, closed at {closed_at:?}"));
        }
        let st = o.session(&s.session_id).unwrap();
        if st.phase != Phase::Ended || st.overall.is_none() {
            return Err(format!("session {i}: not ended with a report"));
        }
        sessions += 1;
    }
    Ok(format!("{sessions} adversarial sessions, all closed exactly at the budget"))
}

struct ArmedFault {
    step: PipelineStep,
    armed: AtomicBool,
}

impl FaultHook for ArmedFault {
    fn before_step(&self, _: &str, step: PipelineStep) -> Result<(), String> {
        if step == self.step && self.armed.load(Ordering::SeqCst) {
            Err("injected fault".into())
        } else {
            Ok(())
        }
    }
}

fn blob_names(dir: &std::path::Path) -> BTreeSet<String> {
    std::fs::read_dir(dir.join("blobs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect()
}

fn atomicity_and_replay() -> Outcome {
    let start = Instant::now();
    let dialog = common::golden_dialog();
    let mut injected = 0;
    for k in 0..dialog.len() {
        for step in PipelineStep::ALL {
            let d = tempfile::tempdir().unwrap();
            let hook = Arc::new(ArmedFault {
                step,
                armed: AtomicBool::new(false),
            });
            let o = common::orchestrator(d.path(), common::golden_script()).with_fault_hook(hook.clone());
            let s = o.create_session(common::golden_case(), Default::default()).unwrap();
            for t in &dialog[..k] {
                o.submit_clinician_turn(&s.session_id, ClinicianInput::Text(t.clone())).unwrap();
            }
            let id = &s.session_id;
            let before_state = o.session(id).unwrap();
            let log = o.store().log_path(id).unwrap();
            let before_log = std::fs::read(&log).unwrap();
            let before_blobs = blob_names(d.path());
            hook.armed.store(true, Ordering::SeqCst);
            match o.submit_clinician_turn(id, ClinicianInput::Text(dialog[k].clone())) {
                Err(OrchestratorError::Aborted { step: s, .. }) if s == step => {}
                other => return Err(format!("turn {k} {step:?}: expected abort, got {other:?}")),
            }
            let after_log = std::fs::read(&log).unwrap();
            let tail: Vec<serde_json::Value> = after_log[before_log.len()..]
                .split(|b| *b == b'\n')
                .filter(|l| !l.is_empty())
                .map(|l| serde_json::from_slice(l).unwrap())
                .collect();
            if !after_log.starts_with(&before_log)
                || tail.len() != 1
                || tail[0]["record"]["type"] != "turn_aborted"
            {
                return Err(format!("turn {k} {step:?}: log gained {} records", tail.len()));
            }
            let replayed = o.store().replay(id).map_err(|e| e.to_string())?.state;
            if o.session(id).unwrap() != before_state || replayed != before_state {
                return Err(format!("turn {k} {step:?}: state changed"));
            }
            if blob_names(d.path()) != before_blobs {
                return Err(format!("turn {k} {step:?}: blobs changed"));
            }
            injected += 1;
        }
    }
    // A provider outage during the patient reply behaves the same way.
    let d = tempfile::tempdir().unwrap();
    let mut script = common::golden_script();
    script.entries[1] = FixtureScript::fault(Capability::Chat, FixtureFault::Http { status: 503 });
    let o = common::orchestrator(d.path(), script);
    let s = o.create_session(common::golden_case(), Default::default()).unwrap();
    match o.submit_clinician_turn(&s.session_id, ClinicianInput::Text(dialog[0].clone())) {
        Err(OrchestratorError::Aborted {
            step: PipelineStep::PatientUtterance,
            provider: Some(_),
            ..
        }) => {}
        other => return Err(format!("provider outage: {other:?}")),
    }
    if o.store().replay(&s.session_id).unwrap().state != s {
        return Err("provider outage changed state".into());
    }

    let work = tempfile::tempdir().unwrap();
    let golden_log = std::fs::read(common::golden_dir().join("session.log")).unwrap();
    let entries = replay_bytes(&golden_log).map_err(|e| e.to_string())?.entries;
    let again = candor_core::replay::reexecute(
        &entries,
        &candor_core::store::SessionStore::open(work.path().join("blobs")).unwrap(),
        Arc::new(candor_core::provider::scripted::ScriptedFactory::new(common::golden_script())),
        templates(),
        Stopwords::builtin(),
        &work.path().join("replay"),
    )
    .map_err(|e| e.to_string())?;
    let diffs = candor_core::replay::diff_artifacts(
        &candor_core::replay::artifact_lines(&entries),
        &candor_core::replay::artifact_lines(&again),
    );
    let replayed_log = std::fs::read(work.path().join("replay/golden-1.log")).unwrap();
    if !diffs.is_empty() || replayed_log != golden_log {
        return Err(format!("golden replay: {} artifact diffs", diffs.len()));
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{injected} injected faults plus a provider outage left state unchanged; golden replay byte-identical ({} records) in {:?}",
        entries.len(),
        start.elapsed()
    ))
}

fn golden_session() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let (o, id, results) = common::run_golden(d.path());
    let seen: BTreeSet<StageCode> = results.iter().flat_map(|r| r.stages.codes().to_vec()).collect();
    if seen.len() != 6 {
        return Err(format!("stages exercised: {seen:?}"));
    }
    let state = o.session(&id).unwrap();
    let overall = state.overall.clone().ok_or("no overall report")?;
    if !FeedbackArea::SUBSTANTIVE.iter().all(|a| overall.per_area[a].addressed) {
        return Err("an area is not addressed".into());
    }
    let feedback = serde_json::to_string_pretty(&state.feedback).unwrap() + "\n";
    let report = serde_json::to_string_pretty(&overall).unwrap() + "\n";
    let md = session_markdown(&state.turns, &state.feedback, Some(&overall));
    let log = String::from_utf8(std::fs::read(o.store().log_path(&id).unwrap()).unwrap()).unwrap();
    for (name, text) in [
        ("turn_feedback.json", &feedback),
        ("overall.json", &report),
        ("report.md", &md),
        ("session.log", &log),
    ] {
        common::check_golden(name, text)?;
    }
    Ok(format!("{} turns, 4 feedback cards and overall report match golden files", state.turns.len()))
}

fn random_record(rng: &mut StdRng, turn: usize) -> FeedbackRecord {
    let pool = [
        vec![StageCode::InformationSeeking],
        vec![StageCode::EmotionalExpression, StageCode::TrustAccountability],
        vec![StageCode::Resolution],
        vec![StageCode::InformationSeeking, StageCode::Resolution],
        vec![StageCode::End],
    ];
    let stages = StageLabelSet::new(pool.choose(rng).unwrap().clone(), turn + 1).unwrap();
    let mut scores = BTreeMap::new();
    let mut na = Vec::new();
    for area in stages_to_areas(&stages) {
        for c in area.criteria() {
            if c.optional && rng.random_bool(0.3) {
                na.push(c.id.to_string());
            } else {
                scores.insert(c.id.to_string(), rng.random_range(1..=5u8));
            }
        }
    }
    FeedbackRecord::Available(TurnFeedback {
        turn_index: 2 * (turn + 1),
        stages,
        overall_score: Score::mean(scores.values().copied()).unwrap(),
        criterion_scores: scores,
        not_applicable: na,
        strengths: vec!["s".into()],
        improvements: vec![],
        encouragement: "e".into(),
        strength_phrases: vec![],
        improvement_phrases: vec![],
    })
}

fn check_aggregation(state: &EvaluatorState) -> Result<(), String> {
    let schema = score_schema_export(state);
    let mut sums: BTreeMap<FeedbackArea, (u64, u64)> = BTreeMap::new();
    for row in &schema.rows {
        let e = sums.entry(row.area).or_default();
        e.0 += u64::from(row.score);
        e.1 += 1;
    }
    for (area, (sum, n)) in &sums {
        let oracle = Ratio::new(*sum, *n);
        let agg = schema.areas.get(area).ok_or("missing aggregate")?;
        if agg.mean.ratio() != oracle || state.area_mean(*area).map(|s| s.ratio()) != Some(oracle) || agg.scores as u64 != *n {
            return Err(format!("{area:?}: oracle {oracle}, export {}", agg.mean.ratio()));
        }
    }
    let (s, n) = sums
        .iter()
        .filter(|(a, _)| a.is_substantive())
        .fold((0, 0), |acc, (_, (s, n))| (acc.0 + s, acc.1 + n));
    let overall = (n > 0).then(|| Ratio::new(s, n));
    if state.overall_mean().map(|s| s.ratio()) != overall {
        return Err(format!("overall: oracle {overall:?}, evaluator {:?}", state.overall_mean()));
    }
    Ok(())
}

fn score_aggregation() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let (o, id, _) = common::run_golden(d.path());
    let state = o.session(&id).unwrap();
    check_aggregation(&state.evaluator)?;
    let overall = state.overall.unwrap();
    for (area, r) in &overall.per_area {
        if r.machine_score != state.evaluator.area_mean(*area) {
            return Err(format!("{area:?}: report machine score differs from evaluator mean"));
        }
    }
    if overall.overall_performance.machine_score != state.evaluator.overall_mean() {
        return Err("overall machine score differs".into());
    }
    let mut rng = StdRng::seed_from_u64(0x5c0e);
    for _ in 0..1_000 {
        let mut st = EvaluatorState::default();
        for t in 0..rng.random_range(1..8) {
            st.apply(&random_record(&mut rng, t));
        }
        check_aggregation(&st)?;
    }
    Ok("golden session plus 1000 random sessions: area and overall means exact".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("stage-rule conformance", stage_rule_conformance),
        ("classifier robustness fuzz", classifier_fuzz),
        ("stage to area mapping", stage_area_mapping),
        ("phrase anchoring", phrase_anchoring),
        ("leak-freedom", leak_freedom),
        ("affect dynamics", affect_dynamics),
        ("turn budget", turn_budget),
        ("atomicity and replay", atomicity_and_replay),
        ("end-to-end golden session", golden_session),
        ("score aggregation oracle", score_aggregation),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
