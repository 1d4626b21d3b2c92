//! Access to chat completion, speech synthesis and speech recognition.
//!
//! Nothing outside this module performs network I/O. Two implementations
//! exist: [`remote::RemoteGateway`] speaks HTTP, and
//! [`scripted::ScriptedSession`] replays fixture files deterministically.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod remote;
pub mod scripted;

pub use remote::{RemoteEndpoint, RemoteGateway};
pub use scripted::{sentinel_audio, CapturedRequest, FixtureEntry, FixtureFault, FixtureScript, ScriptedFactory, ScriptedSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Chat,
    Synthesize,
    Transcribe,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Chat => "chat",
            Capability::Synthesize => "synthesize",
            Capability::Transcribe => "transcribe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("{capability} request timed out after {after_ms} ms")]
    Timeout { capability: Capability, after_ms: u64 },
    #[error("{capability} request failed with HTTP status {status}")]
    Http { capability: Capability, status: u16 },
    #[error("{capability} transport error: {message}")]
    Transport { capability: Capability, message: String },
    #[error("fixture script has no more {0} entries")]
    FixtureExhausted(Capability),
    #[error("audio input is empty")]
    EmptyAudio,
    #[error("{capability} returned an unusable response: {message}")]
    InvalidResponse { capability: Capability, message: String },
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Timeout { .. } | ProviderError::Transport { .. } => true,
            ProviderError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.7,
            max_tokens: 1200,
        }
    }
}

/// A two-message chat prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    #[serde(default)]
    pub params: GenerationParams,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system: system.into(),
            user: user.into(),
            params: GenerationParams::default(),
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.params.temperature = t;
        self
    }

    /// Whole prompt text, system then user.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait SpeechSynthesizer: Send + Sync {
    fn synthesize(&self, text: &str, instructions: &str) -> Result<Vec<u8>, ProviderError>;
}

pub trait SpeechRecognizer: Send + Sync {
    fn transcribe(&self, audio: &[u8]) -> Result<String, ProviderError>;
}

/// The three capabilities bound for one session.
#[derive(Clone)]
pub struct Providers {
    pub chat: Arc<dyn ChatProvider>,
    pub tts: Arc<dyn SpeechSynthesizer>,
    pub stt: Arc<dyn SpeechRecognizer>,
}

impl Providers {
    pub fn from_gateway<G>(g: Arc<G>) -> Self
    where
        G: ChatProvider + SpeechSynthesizer + SpeechRecognizer + 'static,
    {
        Providers {
            chat: g.clone(),
            tts: g.clone(),
            stt: g,
        }
    }
}

/// Hands out providers per session so scripted cursors stay independent.
pub trait ProviderFactory: Send + Sync {
    fn session(&self, context: &str) -> Providers;
}

impl ProviderFactory for RemoteGateway {
    fn session(&self, _context: &str) -> Providers {
        Providers::from_gateway(Arc::new(self.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("scripted providers need `fixture_path`")]
    MissingFixture,
    #[error("invalid endpoint {0:?}")]
    BadEndpoint(String),
    #[error("loading fixture script: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Remote,
    #[default]
    Scripted,
}

/// Where a remote capability lives. Secrets are only ever read from the
/// environment variable named in `key_env`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    #[serde(default)]
    pub endpoint: Option<String>,
    pub endpoint_env: String,
    pub key_env: String,
    pub model: String,
}

impl EndpointConfig {
    fn named(cap: &str, model: &str) -> Self {
        EndpointConfig {
            endpoint: None,
            endpoint_env: format!("CANDOR_{cap}_ENDPOINT"),
            key_env: format!("CANDOR_{cap}_KEY"),
            model: model.to_string(),
        }
    }

    fn resolve(&self) -> Result<RemoteEndpoint, ConfigError> {
        let url = match &self.endpoint {
            Some(u) => u.clone(),
            None => std::env::var(&self.endpoint_env)
                .map_err(|_| ConfigError::MissingEnv(self.endpoint_env.clone()))?,
        };
        let url = url::Url::parse(&url).map_err(|_| ConfigError::BadEndpoint(url.clone()))?;
        let key = std::env::var(&self.key_env).map_err(|_| ConfigError::MissingEnv(self.key_env.clone()))?;
        Ok(RemoteEndpoint {
            url,
            key,
            model: self.model.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub fixture_path: Option<PathBuf>,
    pub timeout_ms: u64,
    pub retry_budget: u32,
    pub backoff_ms: u64,
    pub chat: EndpointConfig,
    pub tts: EndpointConfig,
    pub stt: EndpointConfig,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Scripted,
            fixture_path: None,
            timeout_ms: 30_000,
            retry_budget: 2,
            backoff_ms: 200,
            chat: EndpointConfig::named("CHAT", "gpt-4o"),
            tts: EndpointConfig::named("TTS", "gpt-4o-mini-tts"),
            stt: EndpointConfig::named("STT", "whisper-1"),
        }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Arc<dyn ProviderFactory>, ConfigError> {
        match self.kind {
            ProviderKind::Scripted => {
                let path = self.fixture_path.as_ref().ok_or(ConfigError::MissingFixture)?;
                let script = FixtureScript::load(path).map_err(|e| ConfigError::Fixture(e.to_string()))?;
                Ok(Arc::new(ScriptedFactory::new(script)))
            }
            ProviderKind::Remote => {
                let gw = RemoteGateway::new(
                    self.chat.resolve()?,
                    self.tts.resolve()?,
                    self.stt.resolve()?,
                    std::time::Duration::from_millis(self.timeout_ms),
                    self.retry_budget,
                    std::time::Duration::from_millis(self.backoff_ms),
                )
                .map_err(|e| ConfigError::BadEndpoint(e.to_string()))?;
                Ok(Arc::new(gw))
            }
        }
    }
}

/// Calls `f` once plus up to `budget` retries on retryable errors, sleeping
/// `base * 2^attempt` between tries.
pub fn with_retry<T>(
    budget: u32,
    base: std::time::Duration,
    mut f: impl FnMut() -> Result<T, ProviderError>,
) -> Result<T, ProviderError> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(e) if e.is_retryable() && attempt < budget => {
                tracing::warn!(error = %e, attempt, "provider call failed, retrying");
                std::thread::sleep(base * 2u32.pow(attempt));
                attempt += 1;
            }
            other => return other,
        }
    }
}
