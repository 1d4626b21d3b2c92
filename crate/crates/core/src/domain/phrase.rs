use std::ops::Range;

use super::text::words;

/// Locates `phrase` in `transcript` ignoring case and punctuation.
///
/// Words must be contiguous. Returns the byte span in `transcript` from the
/// first matched word to the last, or `None` when the phrase has no words
/// or does not occur.
pub fn normalize_phrase_match(phrase: &str, transcript: &str) -> Option<Range<usize>> {
    let needle: Vec<String> = words(phrase).into_iter().map(|w| w.norm).collect();
    if needle.is_empty() {
        return None;
    }
    let hay = words(transcript);
    hay.windows(needle.len())
        .find(|win| win.iter().zip(&needle).all(|(w, n)| &w.norm == n))
        .map(|win| win[0].span.start..win[win.len() - 1].span.end)
}
