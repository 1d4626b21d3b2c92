//! Markdown rendering of feedback for people reading reports outside the UI.

use std::fmt::Write;

use crate::domain::{FeedbackArea, FeedbackRecord, OverallFeedback, Score, Turn};

fn score(s: Option<Score>) -> String {
    s.map(|s| format!("{}/5", s.display())).unwrap_or_else(|| "n/a".into())
}

fn list(out: &mut String, heading: &str, items: &[String]) {
    if items.is_empty() {
        return;
    }
    let _ = writeln!(out, "**{heading}**\n");
    for i in items {
        let _ = writeln!(out, "- {i}");
    }
    out.push('\n');
}

/// One feedback card for a clinician turn.
pub fn turn_markdown(turn: &Turn, record: &FeedbackRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "### Turn {} ({})\n", turn.index, record.stages().render());
    let _ = writeln!(out, "> {}\n", turn.transcript);
    let fb = match record {
        FeedbackRecord::Unavailable { reason, .. } => {
            let _ = writeln!(out, "_Feedback unavailable: {reason}_\n");
            return out;
        }
        FeedbackRecord::Available(fb) => fb,
    };
    let _ = writeln!(out, "Score: {}\n", score(Some(fb.overall_score)));
    for (area, crits) in fb.scores_by_area() {
        let _ = writeln!(out, "{}:", area.title());
        for (id, v) in crits {
            let text = FeedbackArea::criterion(&id).map(|c| c.text).unwrap_or("");
            let _ = writeln!(out, "- {v}/5 {text}");
        }
        out.push('\n');
    }
    list(&mut out, "Strengths", &fb.strengths);
    if !fb.improvements.is_empty() {
        let _ = writeln!(out, "**Improvements**\n");
        for i in &fb.improvements {
            let _ = writeln!(out, "- {}: {} Try: {}", i.subtitle, i.description, i.suggestion);
            if !i.example_phrasing.is_empty() {
                let _ = writeln!(out, "  e.g. \"{}\"", i.example_phrasing);
            }
        }
        out.push('\n');
    }
    if !fb.encouragement.is_empty() {
        let _ = writeln!(out, "_{}_\n", fb.encouragement);
    }
    out
}

pub fn overall_markdown(report: &OverallFeedback) -> String {
    let mut out = String::from("## Overall feedback\n\n");
    let p = &report.overall_performance;
    let _ = writeln!(out, "Score: {} (machine {})\n", score(p.score), score(p.machine_score));
    if let Some(s) = &p.summary {
        let _ = writeln!(out, "{s}\n");
    }
    list(&mut out, "Key strengths", &report.key_strengths);
    list(&mut out, "Key improvements", &report.key_improvements);
    for (area, r) in &report.per_area {
        let _ = writeln!(out, "### {}\n", area.title());
        if !r.addressed {
            out.push_str("Not addressed.\n\n");
            continue;
        }
        let _ = writeln!(out, "Score: {} (machine {})\n", score(r.score), score(r.machine_score));
        list(&mut out, "Strengths", &r.strengths);
        list(&mut out, "Improvements", &r.improvements);
        list(&mut out, "Examples", &r.examples);
    }
    out
}

/// Turn cards followed by the overall report.
pub fn session_markdown(turns: &[Turn], feedback: &[FeedbackRecord], overall: Option<&OverallFeedback>) -> String {
    let mut out = String::from("# Feedback report\n\n");
    for rec in feedback {
        let idx = rec.stages().turn_index();
        // Stage event k belongs to clinician turn 2k.
        if let Some(t) = turns.get(idx * 2) {
            out.push_str(&turn_markdown(t, rec));
        }
    }
    if let Some(o) = overall {
        out.push_str(&overall_markdown(o));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AreaReport, OverallPerformance, ReportSource, Speaker, StageLabelSet};
    use chrono::Utc;
    use std::collections::BTreeMap;

    #[test]
    fn unaddressed_areas_have_no_score() {
        let mut per_area = BTreeMap::new();
        for a in FeedbackArea::SUBSTANTIVE {
            per_area.insert(a, AreaReport::not_addressed());
        }
        let r = OverallFeedback {
            per_area,
            overall_performance: OverallPerformance {
                summary: None,
                score: None,
                machine_score: Score::new(7, 2),
            },
            key_strengths: vec!["Calm".into()],
            key_improvements: vec![],
            source: ReportSource::MachineFallback,
        };
        let md = overall_markdown(&r);
        assert_eq!(md.matches("Not addressed.").count(), 4);
        assert!(md.contains("machine 3.5/5"));
    }

    #[test]
    fn unavailable_turn_says_so() {
        let t = Turn {
            index: 0,
            speaker: Speaker::Clinician,
            transcript: "Hello".into(),
            audio_ref: None,
            created_at: Utc::now(),
        };
        let rec = FeedbackRecord::Unavailable {
            turn_index: 0,
            stages: StageLabelSet::opening(),
            reason: "bad output".into(),
        };
        let md = session_markdown(&[t], &[rec], None);
        assert!(md.contains("### Turn 0 (START)"));
        assert!(md.contains("unavailable: bad output"));
    }
}
