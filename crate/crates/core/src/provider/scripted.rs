//! Deterministic providers driven by fixture files.
//!
//! A fixture script is an ordered list of canned responses, each tagged
//! with a capability. Every session gets its own cursor per capability, so
//! two sessions started from the same script see identical sequences.
//! Synthesis needs no entries: it returns sentinel bytes derived from the
//! request unless the script queues an explicit synthesis fault.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{
    Capability, ChatProvider, ChatRequest, ProviderError, ProviderFactory, Providers, SpeechRecognizer,
    SpeechSynthesizer,
};

pub const SENTINEL_PREFIX: &[u8] = b"CANDOR-SENTINEL-AUDIO:";

/// Sentinel audio for a synthesis request: a fixed prefix plus the hex
/// SHA-256 of the length-prefixed text and instructions.
pub fn sentinel_audio(text: &str, instructions: &str) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update((text.len() as u64).to_le_bytes());
    h.update(text.as_bytes());
    h.update((instructions.len() as u64).to_le_bytes());
    h.update(instructions.as_bytes());
    let mut out = SENTINEL_PREFIX.to_vec();
    out.extend_from_slice(hex::encode(h.finalize()).as_bytes());
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixtureFault {
    Timeout,
    Http { status: u16 },
    Transport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub capability: Capability,
    /// A string, or any JSON value which is returned in compact form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FixtureFault>,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("reading fixture: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing fixture: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("entry {index}: {message}")]
    Entry { index: usize, message: String },
}

/// One session's worth of canned provider responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureScript {
    #[serde(default)]
    pub name: String,
    pub entries: Vec<FixtureEntry>,
    /// Entry lists used instead of `entries` for providers issued to a
    /// named context, such as case extraction.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub contexts: BTreeMap<String, Vec<FixtureEntry>>,
}

impl FixtureScript {
    pub fn new(entries: Vec<FixtureEntry>) -> Self {
        FixtureScript {
            name: String::new(),
            entries,
            contexts: BTreeMap::new(),
        }
    }

    /// The script a provider issued for `context` replays.
    pub fn for_context(&self, context: &str) -> Option<FixtureScript> {
        self.contexts.get(context).map(|entries| FixtureScript {
            name: format!("{}#{context}", self.name),
            entries: entries.clone(),
            contexts: BTreeMap::new(),
        })
    }

    pub fn parse(src: &str) -> Result<Self, FixtureError> {
        let script: FixtureScript = serde_json::from_str(src)?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        for (index, e) in self.entries.iter().chain(self.contexts.values().flatten()).enumerate() {
            let message = match (&e.response, &e.error, e.capability) {
                (Some(_), Some(_), _) => "has both a response and an error",
                (None, None, Capability::Chat | Capability::Transcribe) => "needs a response or an error",
                _ => continue,
            };
            return Err(FixtureError::Entry {
                index,
                message: message.to_string(),
            });
        }
        Ok(())
    }

    pub fn chat(response: impl Into<Value>) -> FixtureEntry {
        FixtureEntry {
            capability: Capability::Chat,
            response: Some(response.into()),
            error: None,
        }
    }

    pub fn transcript(text: &str) -> FixtureEntry {
        FixtureEntry {
            capability: Capability::Transcribe,
            response: Some(Value::String(text.to_string())),
            error: None,
        }
    }

    pub fn fault(capability: Capability, fault: FixtureFault) -> FixtureEntry {
        FixtureEntry {
            capability,
            response: None,
            error: Some(fault),
        }
    }
}

/// A request observed by a scripted provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedRequest {
    pub capability: Capability,
    pub payload: Value,
}

#[derive(Default)]
struct Cursors {
    next: HashMap<Capability, usize>,
    captured: Vec<CapturedRequest>,
}

/// Scripted providers for a single session.
pub struct ScriptedSession {
    script: Arc<FixtureScript>,
    state: Mutex<Cursors>,
}

impl ScriptedSession {
    pub fn new(script: Arc<FixtureScript>) -> Self {
        ScriptedSession {
            script,
            state: Mutex::new(Cursors::default()),
        }
    }

    /// Every request seen so far, in order.
    pub fn captured(&self) -> Vec<CapturedRequest> {
        self.state.lock().expect("cursor lock").captured.clone()
    }

    /// Entries of `cap` not yet consumed.
    pub fn remaining(&self, cap: Capability) -> usize {
        let st = self.state.lock().expect("cursor lock");
        let used = st.next.get(&cap).copied().unwrap_or(0);
        self.script.entries.iter().filter(|e| e.capability == cap).count() - used
    }

    fn next(&self, cap: Capability, payload: Value) -> Option<FixtureEntry> {
        let mut st = self.state.lock().expect("cursor lock");
        st.captured.push(CapturedRequest {
            capability: cap,
            payload,
        });
        let pos = st.next.entry(cap).or_insert(0);
        let entry = self.script.entries.iter().filter(|e| e.capability == cap).nth(*pos).cloned();
        if entry.is_some() {
            *pos += 1;
        }
        entry
    }
}

fn fault_error(cap: Capability, fault: &FixtureFault) -> ProviderError {
    match fault {
        FixtureFault::Timeout => ProviderError::Timeout {
            capability: cap,
            after_ms: 0,
        },
        FixtureFault::Http { status } => ProviderError::Http {
            capability: cap,
            status: *status,
        },
        FixtureFault::Transport => ProviderError::Transport {
            capability: cap,
            message: "scripted transport fault".into(),
        },
    }
}

fn response_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ChatProvider for ScriptedSession {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let payload = serde_json::to_value(req).expect("chat request serializes");
        let entry = self
            .next(Capability::Chat, payload)
            .ok_or(ProviderError::FixtureExhausted(Capability::Chat))?;
        match (&entry.error, &entry.response) {
            (Some(f), _) => Err(fault_error(Capability::Chat, f)),
            (None, Some(v)) => Ok(response_text(v)),
            (None, None) => Err(ProviderError::FixtureExhausted(Capability::Chat)),
        }
    }
}

impl SpeechSynthesizer for ScriptedSession {
    fn synthesize(&self, text: &str, instructions: &str) -> Result<Vec<u8>, ProviderError> {
        let payload = serde_json::json!({ "input": text, "instructions": instructions });
        match self.next(Capability::Synthesize, payload) {
            Some(FixtureEntry { error: Some(f), .. }) => Err(fault_error(Capability::Synthesize, &f)),
            _ => Ok(sentinel_audio(text, instructions)),
        }
    }
}

impl SpeechRecognizer for ScriptedSession {
    fn transcribe(&self, audio: &[u8]) -> Result<String, ProviderError> {
        if audio.is_empty() {
            return Err(ProviderError::EmptyAudio);
        }
        let digest = hex::encode(Sha256::digest(audio));
        let payload = serde_json::json!({ "audio_sha256": digest, "bytes": audio.len() });
        let entry = self
            .next(Capability::Transcribe, payload)
            .ok_or(ProviderError::FixtureExhausted(Capability::Transcribe))?;
        match (&entry.error, &entry.response) {
            (Some(f), _) => Err(fault_error(Capability::Transcribe, f)),
            (None, Some(v)) => Ok(response_text(v)),
            (None, None) => Err(ProviderError::FixtureExhausted(Capability::Transcribe)),
        }
    }
}

/// Creates a fresh [`ScriptedSession`] over the same script for every
/// session. The most recently created sessions stay reachable for request
/// assertions.
pub struct ScriptedFactory {
    script: Arc<FixtureScript>,
    issued: Mutex<Vec<(String, Arc<ScriptedSession>)>>,
}

impl ScriptedFactory {
    pub fn new(script: FixtureScript) -> Self {
        ScriptedFactory {
            script: Arc::new(script),
            issued: Mutex::new(Vec::new()),
        }
    }

    pub fn script(&self) -> &FixtureScript {
        &self.script
    }

    /// The scripted session most recently issued for `context`.
    pub fn issued(&self, context: &str) -> Option<Arc<ScriptedSession>> {
        self.issued
            .lock()
            .expect("issued lock")
            .iter()
            .rev()
            .find(|(c, _)| c == context)
            .map(|(_, s)| s.clone())
    }
}

impl ProviderFactory for ScriptedFactory {
    fn session(&self, context: &str) -> Providers {
        let script = match self.script.for_context(context) {
            Some(sub) => Arc::new(sub),
            None => self.script.clone(),
        };
        let s = Arc::new(ScriptedSession::new(script));
        self.issued
            .lock()
            .expect("issued lock")
            .push((context.to_string(), s.clone()));
        Providers::from_gateway(s)
    }
}
