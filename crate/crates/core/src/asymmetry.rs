//! Keeps physician-only case knowledge out of the patient agent.
//!
//! "Physician-only" is the word-level set difference between the error
//! description and everything the patient can see: their own knowledge,
//! the case facts shown to them, the prompt wording, and every word spoken
//! in the conversation so far. Feedback reaches the patient agent only as a
//! keyword digest with those words removed.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::text::normalized_words;
use crate::domain::{Direction, EvaluatorDigest, TurnFeedback};

const BUILTIN_STOPWORDS: &str = include_str!("../assets/stopwords.txt");

/// Maximum number of keywords in a digest.
pub const DIGEST_LIMIT: usize = 12;

/// Minimum length, in characters, of a content word.
pub const MIN_CONTENT_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords {
    words: BTreeSet<String>,
    hash: String,
}

impl Stopwords {
    /// Parses a one-word-per-line list. Blank lines and `#` comments are
    /// skipped; entries are normalized like any other word.
    pub fn parse(src: &str) -> Self {
        let words = src
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .flat_map(normalized_words)
            .collect();
        Stopwords {
            words,
            hash: hex::encode(Sha256::digest(src.as_bytes())),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn builtin() -> &'static Stopwords {
        static CELL: OnceLock<Stopwords> = OnceLock::new();
        CELL.get_or_init(|| Stopwords::parse(BUILTIN_STOPWORDS))
    }

    /// SHA-256 of the source file, recorded in session logs.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn is_content(&self, word: &str) -> bool {
        word.chars().count() >= MIN_CONTENT_LEN && !self.contains(word)
    }

    /// Content words of `text` in order of first appearance.
    pub fn content_words(&self, text: &str) -> Vec<String> {
        let mut seen = BTreeSet::new();
        normalized_words(text)
            .into_iter()
            .filter(|w| self.is_content(w) && seen.insert(w.clone()))
            .collect()
    }
}

/// What the patient may know versus what only the physician knows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgePartition {
    patient_words: BTreeSet<String>,
    physician_only_words: BTreeSet<String>,
}

impl KnowledgePartition {
    /// Builds the initial partition from the error description and every
    /// text the patient side can already see.
    pub fn new(medical_error: &str, patient_visible: &[&str], stop: &Stopwords) -> Self {
        let patient_words: BTreeSet<String> = patient_visible
            .iter()
            .flat_map(|t| stop.content_words(t))
            .collect();
        let physician_only_words = stop
            .content_words(medical_error)
            .into_iter()
            .filter(|w| !patient_words.contains(w))
            .collect();
        KnowledgePartition {
            patient_words,
            physician_only_words,
        }
    }

    pub fn patient_words(&self) -> &BTreeSet<String> {
        &self.patient_words
    }

    pub fn physician_only_words(&self) -> &BTreeSet<String> {
        &self.physician_only_words
    }

    /// True when `word` (already normalized) must not reach the patient.
    pub fn is_physician_only(&self, word: &str) -> bool {
        self.physician_only_words.contains(word)
    }

    /// Physician-only words occurring in `text`.
    pub fn leaks_in(&self, text: &str) -> BTreeSet<String> {
        normalized_words(text)
            .into_iter()
            .filter(|w| self.is_physician_only(w))
            .collect()
    }
}

/// Moves the content words of text said aloud into the patient's side.
pub fn update_partition(part: &KnowledgePartition, spoken: &str, stop: &Stopwords) -> KnowledgePartition {
    let mut next = part.clone();
    for w in stop.content_words(spoken) {
        next.physician_only_words.remove(&w);
        next.patient_words.insert(w);
    }
    next
}

/// Reduces turn feedback to sanitized keywords plus a quality direction.
///
/// Keywords come from the strengths and the improvement subtitles,
/// descriptions and suggestions. Example phrasings are skipped since they
/// often spell out case facts.
pub fn make_digest(fb: &TurnFeedback, part: &KnowledgePartition, stop: &Stopwords) -> EvaluatorDigest {
    let mut sources: Vec<&str> = fb.strengths.iter().map(String::as_str).collect();
    for imp in &fb.improvements {
        sources.extend([imp.subtitle.as_str(), imp.description.as_str(), imp.suggestion.as_str()]);
    }
    let mut seen = BTreeSet::new();
    let keywords = sources
        .iter()
        .flat_map(|s| stop.content_words(s))
        .filter(|w| !part.is_physician_only(w) && seen.insert(w.clone()))
        .take(DIGEST_LIMIT)
        .collect();
    EvaluatorDigest {
        turn_index: fb.turn_index,
        keywords,
        direction: Direction::from_score(fb.overall_score),
    }
}
