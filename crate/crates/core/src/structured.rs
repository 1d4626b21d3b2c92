//! Pulling a JSON object out of free-form model output.

use serde::de::DeserializeOwned;
use serde_json::Value;

/// The body of the first markdown code fence, or the trimmed input when
/// there is none. Text around the fence is dropped.
pub(crate) fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(open) = t.find("```") else {
        return t;
    };
    let rest = &t[open + 3..];
    let body = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    match body.find("```") {
        Some(close) => body[..close].trim(),
        None => body.trim(),
    }
}

/// The outermost `{...}` in `raw`, parsed.
pub(crate) fn json_object(raw: &str) -> Result<Value, String> {
    let t = strip_fence(raw);
    let (Some(start), Some(end)) = (t.find('{'), t.rfind('}')) else {
        return Err("response contains no JSON object".into());
    };
    if end < start {
        return Err("response contains no JSON object".into());
    }
    serde_json::from_str(&t[start..=end]).map_err(|e| format!("invalid JSON: {e}"))
}

pub(crate) fn parse_object<T: DeserializeOwned>(raw: &str) -> Result<T, String> {
    serde_json::from_value(json_object(raw)?).map_err(|e| format!("unexpected JSON shape: {e}"))
}
