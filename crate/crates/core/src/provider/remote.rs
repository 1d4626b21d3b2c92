//! HTTP providers speaking chat-completion style JSON.

use std::time::{Duration, Instant};

use reqwest::blocking::{multipart, Client, RequestBuilder, Response};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{with_retry, Capability, ChatProvider, ChatRequest, ProviderError, SpeechRecognizer, SpeechSynthesizer};

#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub url: url::Url,
    pub key: String,
    pub model: String,
}

#[derive(Clone)]
pub struct RemoteGateway {
    client: Client,
    chat: RemoteEndpoint,
    tts: RemoteEndpoint,
    stt: RemoteEndpoint,
    timeout: Duration,
    retry_budget: u32,
    backoff: Duration,
    voice: String,
}

fn digest_prefix(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..6])
}

impl RemoteGateway {
    pub fn new(
        chat: RemoteEndpoint,
        tts: RemoteEndpoint,
        stt: RemoteEndpoint,
        timeout: Duration,
        retry_budget: u32,
        backoff: Duration,
    ) -> Result<Self, reqwest::Error> {
        let client = Client::builder().timeout(timeout).connect_timeout(timeout).build()?;
        Ok(RemoteGateway {
            client,
            chat,
            tts,
            stt,
            timeout,
            retry_budget,
            backoff,
            voice: "alloy".to_string(),
        })
    }

    fn map_err(&self, cap: Capability, e: reqwest::Error) -> ProviderError {
        if e.is_timeout() {
            ProviderError::Timeout {
                capability: cap,
                after_ms: self.timeout.as_millis() as u64,
            }
        } else if let Some(status) = e.status() {
            ProviderError::Http {
                capability: cap,
                status: status.as_u16(),
            }
        } else {
            ProviderError::Transport {
                capability: cap,
                message: e.to_string(),
            }
        }
    }

    /// Sends with retries and logs latency plus a digest of the payload.
    fn send(
        &self,
        cap: Capability,
        payload_digest: &str,
        build: impl Fn() -> RequestBuilder,
    ) -> Result<Response, ProviderError> {
        let started = Instant::now();
        let result = with_retry(self.retry_budget, self.backoff, || {
            let resp = build().send().map_err(|e| self.map_err(cap, e))?;
            let status = resp.status();
            if status.is_success() {
                Ok(resp)
            } else {
                Err(ProviderError::Http {
                    capability: cap,
                    status: status.as_u16(),
                })
            }
        });
        tracing::info!(
            capability = %cap,
            latency_ms = started.elapsed().as_millis() as u64,
            payload = payload_digest,
            ok = result.is_ok(),
            "remote provider call"
        );
        result
    }

    fn invalid(cap: Capability, message: impl Into<String>) -> ProviderError {
        ProviderError::InvalidResponse {
            capability: cap,
            message: message.into(),
        }
    }
}

impl ChatProvider for RemoteGateway {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.chat.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_tokens,
        });
        let digest = digest_prefix(body.to_string().as_bytes());
        let resp = self.send(Capability::Chat, &digest, || {
            self.client
                .post(self.chat.url.clone())
                .bearer_auth(&self.chat.key)
                .json(&body)
        })?;
        let v: Value = resp
            .json()
            .map_err(|e| Self::invalid(Capability::Chat, e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Self::invalid(Capability::Chat, "missing choices[0].message.content"))
    }
}

impl SpeechSynthesizer for RemoteGateway {
    fn synthesize(&self, text: &str, instructions: &str) -> Result<Vec<u8>, ProviderError> {
        let body = json!({
            "model": self.tts.model,
            "voice": self.voice,
            "input": text,
            "instructions": instructions,
            "response_format": "wav",
        });
        let digest = digest_prefix(body.to_string().as_bytes());
        let resp = self.send(Capability::Synthesize, &digest, || {
            self.client
                .post(self.tts.url.clone())
                .bearer_auth(&self.tts.key)
                .json(&body)
        })?;
        let bytes = resp
            .bytes()
            .map_err(|e| Self::invalid(Capability::Synthesize, e.to_string()))?;
        if bytes.is_empty() {
            return Err(Self::invalid(Capability::Synthesize, "empty audio body"));
        }
        Ok(bytes.to_vec())
    }
}

impl SpeechRecognizer for RemoteGateway {
    fn transcribe(&self, audio: &[u8]) -> Result<String, ProviderError> {
        if audio.is_empty() {
            return Err(ProviderError::EmptyAudio);
        }
        let digest = digest_prefix(audio);
        let resp = self.send(Capability::Transcribe, &digest, || {
            let part = multipart::Part::bytes(audio.to_vec())
                .file_name("audio.wav")
                .mime_str("audio/wav")
                .expect("static mime type");
            let form = multipart::Form::new()
                .text("model", self.stt.model.clone())
                .part("file", part);
            self.client
                .post(self.stt.url.clone())
                .bearer_auth(&self.stt.key)
                .multipart(form)
        })?;
        let v: Value = resp
            .json()
            .map_err(|e| Self::invalid(Capability::Transcribe, e.to_string()))?;
        v.get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Self::invalid(Capability::Transcribe, "missing `text`"))
    }
}
