//! The two-tag speech markup dialect used for patient utterances:
//! `<speak>` wraps the whole response and `<emphasis>` marks stressed words.

use thiserror::Error;

use super::text::collapse_whitespace;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkupError {
    #[error("unterminated tag starting at byte {0}")]
    UnterminatedTag(usize),
    #[error("unsupported tag <{0}>")]
    UnknownTag(String),
    #[error("response must be wrapped in a single <speak> element")]
    MissingWrapper,
    #[error("unbalanced <{0}> tag")]
    Unbalanced(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Speak,
    Emphasis,
}

impl Tag {
    fn name(self) -> &'static str {
        match self {
            Tag::Speak => "speak",
            Tag::Emphasis => "emphasis",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token<'a> {
    Text(&'a str),
    Open(Tag, &'a str),
    Close(Tag, &'a str),
}

fn tokenize(src: &str) -> Result<Vec<Token<'_>>, MarkupError> {
    let mut out = Vec::new();
    let mut text_start = 0;
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let starts_tag = bytes[i] == b'<'
            && bytes
                .get(i + 1)
                .is_some_and(|b| b.is_ascii_alphabetic() || *b == b'/');
        if !starts_tag {
            i += 1;
            continue;
        }
        if text_start < i {
            out.push(Token::Text(&src[text_start..i]));
        }
        let end = src[i..]
            .find('>')
            .map(|off| i + off)
            .ok_or(MarkupError::UnterminatedTag(i))?;
        let raw = &src[i..=end];
        let inner = &src[i + 1..end];
        let (closing, body) = match inner.strip_prefix('/') {
            Some(rest) => (true, rest),
            None => (false, inner),
        };
        let name: String = body
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let tag = match name.as_str() {
            "speak" => Tag::Speak,
            "emphasis" => Tag::Emphasis,
            _ => return Err(MarkupError::UnknownTag(name)),
        };
        if body.trim_end().ends_with('/') {
            // self-closing elements carry no text in this dialect
            return Err(MarkupError::Unbalanced(tag.name()));
        }
        out.push(if closing {
            Token::Close(tag, raw)
        } else {
            Token::Open(tag, raw)
        });
        i = end + 1;
        text_start = i;
    }
    if text_start < src.len() {
        out.push(Token::Text(&src[text_start..]));
    }
    Ok(out)
}

/// Checks the wrapper and balance rules and returns the tokens.
fn parse_document(src: &str) -> Result<Vec<Token<'_>>, MarkupError> {
    let tokens = tokenize(src)?;
    let significant: Vec<&Token> = tokens
        .iter()
        .filter(|t| !matches!(t, Token::Text(s) if s.trim().is_empty()))
        .collect();
    match (significant.first(), significant.last()) {
        (Some(Token::Open(Tag::Speak, _)), Some(Token::Close(Tag::Speak, _))) if significant.len() >= 2 => {}
        _ => return Err(MarkupError::MissingWrapper),
    }
    let mut stack: Vec<Tag> = Vec::new();
    let mut speak_seen = false;
    for t in &tokens {
        match t {
            Token::Text(s) => {
                if stack.is_empty() && !s.trim().is_empty() {
                    return Err(MarkupError::MissingWrapper);
                }
            }
            Token::Open(Tag::Speak, _) => {
                if speak_seen {
                    return Err(MarkupError::MissingWrapper);
                }
                speak_seen = true;
                stack.push(Tag::Speak);
            }
            Token::Open(Tag::Emphasis, _) => {
                if stack.is_empty() {
                    return Err(MarkupError::MissingWrapper);
                }
                stack.push(Tag::Emphasis);
            }
            Token::Close(tag, _) => match stack.pop() {
                Some(open) if open == *tag => {}
                Some(open) => return Err(MarkupError::Unbalanced(open.name())),
                None => return Err(MarkupError::Unbalanced(tag.name())),
            },
        }
    }
    if let Some(open) = stack.last() {
        return Err(MarkupError::Unbalanced(open.name()));
    }
    Ok(tokens)
}

/// Validates a patient markup document.
pub fn validate_markup(src: &str) -> Result<(), MarkupError> {
    parse_document(src).map(|_| ())
}

/// Removes all tags and collapses whitespace.
///
/// Text without any tags is accepted as already plain, so the function is
/// idempotent on its own output. Partial markup is rejected.
pub fn strip_markup(src: &str) -> Result<String, MarkupError> {
    let tokens = tokenize(src)?;
    if tokens.iter().all(|t| matches!(t, Token::Text(_))) {
        return Ok(collapse_whitespace(src));
    }
    let tokens = parse_document(src)?;
    let joined: String = tokens
        .iter()
        .filter_map(|t| match t {
            Token::Text(s) => Some(*s),
            _ => None,
        })
        .collect();
    Ok(collapse_whitespace(&joined))
}

/// Best-effort removal of anything tag-shaped; used when a model keeps
/// returning broken markup.
pub fn strip_tags_lenient(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut in_tag = false;
    let chars: Vec<char> = src.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if in_tag {
            if c == '>' {
                in_tag = false;
            }
            continue;
        }
        let next = chars.get(i + 1).copied();
        if c == '<' && next.is_some_and(|n| n.is_ascii_alphabetic() || n == '/') && chars[i..].contains(&'>') {
            in_tag = true;
            continue;
        }
        out.push(c);
    }
    collapse_whitespace(&out)
}

/// Wraps plain text in `<speak>` tags.
pub fn wrap_plain(text: &str) -> String {
    format!("<speak>{}</speak>", collapse_whitespace(text))
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Counts sentences in text outside tags: segments closed by a run of
/// `.`, `!` or `?`, plus a trailing unterminated segment, counting only
/// segments that contain an alphanumeric character.
pub fn sentence_count(text: &str) -> usize {
    let plain = match tokenize(text) {
        Ok(tokens) => tokens
            .iter()
            .filter_map(|t| match t {
                Token::Text(s) => Some(*s),
                _ => None,
            })
            .collect::<String>(),
        Err(_) => strip_tags_lenient(text),
    };
    let mut count = 0;
    let mut has_content = false;
    for c in plain.chars() {
        if is_terminal(c) {
            if has_content {
                count += 1;
                has_content = false;
            }
        } else if c.is_alphanumeric() {
            has_content = true;
        }
    }
    count + usize::from(has_content)
}

/// Cuts a valid markup document after `max` sentences, closing any open
/// tags. Documents already within the cap are returned unchanged.
pub fn truncate_sentences(src: &str, max: usize) -> Result<String, MarkupError> {
    let tokens = parse_document(src)?;
    if sentence_count(src) <= max {
        return Ok(src.to_string());
    }
    let mut out = String::new();
    let mut stack: Vec<Tag> = Vec::new();
    let mut count = 0;
    let mut has_content = false;
    let mut in_run = false;
    'outer: for t in &tokens {
        match t {
            Token::Text(s) => {
                for c in s.chars() {
                    if is_terminal(c) {
                        if has_content {
                            in_run = true;
                        }
                    } else if in_run {
                        count += 1;
                        in_run = false;
                        has_content = false;
                        if count == max {
                            break 'outer;
                        }
                    }
                    if c.is_alphanumeric() {
                        has_content = true;
                    }
                    out.push(c);
                }
            }
            Token::Open(tag, raw) => {
                if in_run && count + 1 == max {
                    break 'outer;
                }
                stack.push(*tag);
                out.push_str(raw);
            }
            Token::Close(_, raw) => {
                stack.pop();
                out.push_str(raw);
            }
        }
    }
    let mut out = out.trim_end().to_string();
    while let Some(tag) = stack.pop() {
        out.push_str("</");
        out.push_str(tag.name());
        out.push('>');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = "<speak>I understand that these things take time, but it's been <emphasis>three weeks</emphasis> and I'm still waiting for an update.</speak>";

    #[test]
    fn strips_simple_wrapper() {
        assert_eq!(strip_markup("<speak>Hello.</speak>").unwrap(), "Hello.");
    }

    #[test]
    fn strips_reference_example() {
        assert_eq!(
            strip_markup(EXAMPLE).unwrap(),
            "I understand that these things take time, but it's been three weeks and I'm still waiting for an update."
        );
        assert_eq!(sentence_count(EXAMPLE), 1);
    }

    #[test]
    fn rejects_unbalanced() {
        assert_eq!(
            strip_markup("<speak>unclosed <emphasis>x</speak>"),
            Err(MarkupError::Unbalanced("emphasis"))
        );
        assert_eq!(strip_markup("<speak>x"), Err(MarkupError::MissingWrapper));
        assert_eq!(strip_markup("x <emphasis>y</emphasis>"), Err(MarkupError::MissingWrapper));
        assert_eq!(strip_markup("<speak>a</speak> tail"), Err(MarkupError::MissingWrapper));
        assert_eq!(strip_markup("<speak>a <b>x</b></speak>"), Err(MarkupError::UnknownTag("b".into())));
        assert_eq!(strip_markup("<speak>a <emphasis"), Err(MarkupError::UnterminatedTag(9)));
    }

    #[test]
    fn plain_text_passes_through() {
        assert_eq!(strip_markup("  a  <  b ").unwrap(), "a < b");
    }

    #[test]
    fn attributes_are_tolerated() {
        let s = r#"<speak>I <emphasis level="strong">need</emphasis> answers.</speak>"#;
        assert_eq!(strip_markup(s).unwrap(), "I need answers.");
    }

    #[test]
    fn counts_sentences() {
        assert_eq!(sentence_count("Wait... what?! No"), 3);
        assert_eq!(sentence_count("<speak>One. Two! Three? Four.</speak>"), 4);
        assert_eq!(sentence_count(""), 0);
        assert_eq!(sentence_count("..."), 0);
    }

    #[test]
    fn truncates_and_rebalances() {
        let s = "<speak>One. Two! <emphasis>Three? Four.</emphasis> Five.</speak>";
        assert_eq!(
            truncate_sentences(s, 3).unwrap(),
            "<speak>One. Two! <emphasis>Three?</emphasis></speak>"
        );
        let s = "<speak>One. Two. <emphasis>Three</emphasis>. Four.</speak>";
        assert_eq!(
            truncate_sentences(s, 3).unwrap(),
            "<speak>One. Two. <emphasis>Three</emphasis>.</speak>"
        );
        assert_eq!(truncate_sentences(EXAMPLE, 3).unwrap(), EXAMPLE);
    }

    #[test]
    fn lenient_strip_handles_garbage() {
        assert_eq!(strip_tags_lenient("<speak>hi <emphasis>there"), "hi there");
        assert_eq!(wrap_plain(" hi  there "), "<speak>hi there</speak>");
    }

    proptest::proptest! {
        #[test]
        fn strip_is_idempotent(words in proptest::collection::vec("[a-z]{1,6}[.!?]?", 1..12), emph in 0usize..12) {
            let mut body = String::new();
            for (i, w) in words.iter().enumerate() {
                if i == emph { body.push_str(&format!("<emphasis>{w}</emphasis> ")); } else { body.push_str(w); body.push(' '); }
            }
            let doc = format!("<speak>{body}</speak>");
            let once = strip_markup(&doc).unwrap();
            proptest::prop_assert_eq!(strip_markup(&once).unwrap(), once.clone());
            let cut = truncate_sentences(&doc, 3).unwrap();
            proptest::prop_assert!(validate_markup(&cut).is_ok());
            proptest::prop_assert!(sentence_count(&cut) <= 3);
        }
    }
}
