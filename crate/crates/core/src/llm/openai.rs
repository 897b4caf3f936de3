//! Clients for OpenAI-compatible HTTP APIs: chat completions (both the
//! vendor endpoint and aggregators that mirror it) plus the speech
//! endpoints.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{
    AudioClip, AudioFormat, ChatMessage, ChatProvider, CompletionRequest, LlmError, SpeechProvider,
};

pub const OPENAI_BASE_URL: &str = "https://api.openai.com/v1";
pub const OPENROUTER_BASE_URL: &str = "https://openrouter.ai/api/v1";
pub const STT_MODEL: &str = "whisper-1";
pub const TTS_MODEL: &str = "tts-1";

const ERROR_DETAIL_LIMIT: usize = 400;

#[derive(Debug, Clone)]
pub struct OpenAiCompatProvider {
    name: String,
    base_url: String,
    api_key: String,
    client: reqwest::Client,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireErrorBody {
    #[serde(default)]
    error: Option<WireError>,
}

#[derive(Deserialize, Default)]
struct WireError {
    #[serde(default)]
    message: Option<String>,
    #[serde(default)]
    code: Option<serde_json::Value>,
}

fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .expect("default TLS backend available")
}

fn truncate(s: &str) -> String {
    if s.chars().count() <= ERROR_DETAIL_LIMIT {
        s.to_string()
    } else {
        let mut out: String = s.chars().take(ERROR_DETAIL_LIMIT).collect();
        out.push('…');
        out
    }
}

/// Maps a non-success HTTP response onto the gateway error taxonomy.
pub(crate) fn classify_failure(provider: &str, status: u16, body: &str) -> LlmError {
    let parsed: WireErrorBody = serde_json::from_str(body).unwrap_or_default();
    let (message, code) = parsed
        .error
        .map(|e| {
            let code = match e.code {
                Some(serde_json::Value::String(s)) => s,
                Some(other) => other.to_string(),
                None => String::new(),
            };
            (e.message.unwrap_or_default(), code)
        })
        .unwrap_or_default();
    let detail = if message.is_empty() {
        truncate(&format!("HTTP {status}: {body}"))
    } else {
        truncate(&format!("HTTP {status}: {message}"))
    };
    let provider = provider.to_string();
    let lower = message.to_ascii_lowercase();
    if status == 401 || status == 403 {
        LlmError::AuthFailure { provider, detail }
    } else if status == 413
        || code == "context_length_exceeded"
        || lower.contains("maximum context length")
        || lower.contains("context length")
    {
        LlmError::ContextTooLong { provider, detail }
    } else {
        LlmError::ProviderUnavailable { provider, detail }
    }
}

fn transport_failure(provider: &str, err: reqwest::Error) -> LlmError {
    // reqwest includes the URL in its display; strip it so query-string
    // credentials never reach callers.
    LlmError::ProviderUnavailable {
        provider: provider.to_string(),
        detail: truncate(&err.without_url().to_string()),
    }
}

impl OpenAiCompatProvider {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            client: http_client(),
        }
    }

    pub fn openai(api_key: impl Into<String>) -> Self {
        Self::new("openai", OPENAI_BASE_URL, api_key)
    }

    pub fn openrouter(api_key: impl Into<String>) -> Self {
        Self::new("openrouter", OPENROUTER_BASE_URL, api_key)
    }
}

#[async_trait]
impl ChatProvider for OpenAiCompatProvider {
    fn name(&self) -> &str {
        &self.name
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<ChatMessage, LlmError> {
        request.validate()?;
        let body = WireRequest {
            model: request.model.as_str(),
            messages: request
                .transcript
                .messages()
                .iter()
                .map(|m| WireMessage { role: m.role.as_str(), content: &m.content })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| transport_failure(&self.name, e))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| transport_failure(&self.name, e))?;
        if !status.is_success() {
            return Err(classify_failure(&self.name, status.as_u16(), &text));
        }
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| {
            LlmError::MalformedResponse { provider: self.name.clone(), detail: e.to_string() }
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse {
                provider: self.name.clone(),
                detail: "response carried no message content".into(),
            })?;
        Ok(ChatMessage::assistant(content))
    }
}

/// Speech-to-text and text-to-speech over the OpenAI audio endpoints.
#[derive(Debug, Clone)]
pub struct OpenAiSpeech {
    base_url: String,
    api_key: String,
    output_format: AudioFormat,
    client: reqwest::Client,
}

#[derive(Deserialize)]
struct TranscriptionResponse {
    text: String,
}

impl OpenAiSpeech {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, output_format: AudioFormat) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            output_format,
            client: http_client(),
        }
    }

    pub fn openai(api_key: impl Into<String>) -> Self {
        Self::new(OPENAI_BASE_URL, api_key, AudioFormat::Wav)
    }
}

#[async_trait]
impl SpeechProvider for OpenAiSpeech {
    fn name(&self) -> &str {
        "openai-speech"
    }

    async fn transcribe(&self, clip: &AudioClip) -> Result<String, LlmError> {
        if clip.bytes.is_empty() {
            return Err(LlmError::UnsupportedFormat("empty audio payload".into()));
        }
        let part = reqwest::multipart::Part::bytes(clip.bytes.clone())
            .file_name(format!("speech.{}", clip.format.extension()))
            .mime_str(clip.format.mime())
            .map_err(|e| LlmError::UnsupportedFormat(e.to_string()))?;
        let form = reqwest::multipart::Form::new()
            .text("model", STT_MODEL)
            .text("response_format", "json")
            .part("file", part);
        let resp = self
            .client
            .post(format!("{}/audio/transcriptions", self.base_url))
            .bearer_auth(&self.api_key)
            .multipart(form)
            .send()
            .await
            .map_err(|e| transport_failure("openai-speech", e))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| transport_failure("openai-speech", e))?;
        if !status.is_success() {
            return Err(classify_failure("openai-speech", status.as_u16(), &text));
        }
        let parsed: TranscriptionResponse = serde_json::from_str(&text).map_err(|e| {
            LlmError::MalformedResponse { provider: "openai-speech".into(), detail: e.to_string() }
        })?;
        Ok(parsed.text)
    }

    async fn synthesize(&self, text: &str, voice: &str) -> Result<AudioClip, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let body = serde_json::json!({
            "model": TTS_MODEL,
            "input": text,
            "voice": voice,
            "response_format": self.output_format.extension(),
        });
        let resp = self
            .client
            .post(format!("{}/audio/speech", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| transport_failure("openai-speech", e))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| transport_failure("openai-speech", e))?;
        if !status.is_success() {
            return Err(classify_failure(
                "openai-speech",
                status.as_u16(),
                &String::from_utf8_lossy(&bytes),
            ));
        }
        let format = AudioFormat::sniff(&bytes).unwrap_or(self.output_format);
        AudioClip::new(bytes.to_vec(), format).map_err(|_| LlmError::MalformedResponse {
            provider: "openai-speech".into(),
            detail: "speech endpoint returned an empty body".into(),
        })
    }
}
