//! Single point of access to chat, speech-to-text and text-to-speech.
//!
//! Models are looked up in a declarative [`ModelRegistry`]; each entry names
//! the [`ProviderRoute`] that serves it, and each route is backed by a
//! [`ChatProvider`] registered by name in the gateway.

mod model;
pub mod openai;
mod provider;
mod speech;
mod template;
mod transcript;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use model::{ModelEntry, ModelId, ModelRegistry, ProviderRoute};
pub use openai::{OpenAiCompatProvider, OpenAiSpeech};
pub use provider::{
    ChatProvider, CompletionRequest, MockProvider, CANNED_LAB_TABLE, DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE, LAB_TABLE_MARKER,
};
pub use speech::{mp3_duration_estimate, wav_duration, AudioClip, AudioFormat, MockSpeech, SpeechProvider};
pub use template::{PromptTemplate, TemplateError};
pub use transcript::{ChatMessage, ChatTranscript, Role};

use crate::registry::StrategyRegistry;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("model registry error: {0}")]
    Registry(String),
    #[error("provider {provider} unavailable: {detail}")]
    ProviderUnavailable { provider: String, detail: String },
    #[error("provider {provider} rejected credentials: {detail}")]
    AuthFailure { provider: String, detail: String },
    #[error("context too long for provider {provider}: {detail}")]
    ContextTooLong { provider: String, detail: String },
    #[error("provider {provider} sent an unreadable response: {detail}")]
    MalformedResponse { provider: String, detail: String },
    #[error("unsupported audio: {0}")]
    UnsupportedFormat(String),
    #[error("text to synthesize is empty")]
    EmptyText,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Sampling defaults applied to every request the gateway builds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationDefaults {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationDefaults {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

pub struct LlmGateway {
    registry: Arc<ModelRegistry>,
    providers: StrategyRegistry<dyn ChatProvider>,
    speech: Arc<dyn SpeechProvider>,
    defaults: GenerationDefaults,
}

impl LlmGateway {
    pub fn new(registry: ModelRegistry, speech: Arc<dyn SpeechProvider>) -> Self {
        Self {
            registry: Arc::new(registry),
            providers: StrategyRegistry::new("chat provider"),
            speech,
            defaults: GenerationDefaults::default(),
        }
    }

    /// Binds `provider` to every model whose registry entry uses `route`.
    pub fn with_provider(mut self, route: ProviderRoute, provider: Arc<dyn ChatProvider>) -> Self {
        self.providers.register(route.as_str(), provider);
        self
    }

    pub fn with_defaults(mut self, defaults: GenerationDefaults) -> Self {
        self.defaults = defaults;
        self
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn has_provider(&self, route: ProviderRoute) -> bool {
        self.providers.contains(route.as_str())
    }

    pub fn route_model(&self, model: &ModelId) -> Result<ProviderRoute, LlmError> {
        self.registry.route_model(model)
    }

    /// Builds a request with the configured sampling defaults.
    pub fn request(&self, model: ModelId, transcript: ChatTranscript) -> CompletionRequest {
        CompletionRequest {
            model,
            transcript,
            temperature: self.defaults.temperature,
            max_tokens: self.defaults.max_tokens,
        }
    }

    pub async fn complete_chat(&self, request: &CompletionRequest) -> Result<ChatMessage, LlmError> {
        request.validate()?;
        let route = self.route_model(&request.model)?;
        let provider = self.providers.get(route.as_str()).map_err(|_| {
            LlmError::ProviderUnavailable {
                provider: route.to_string(),
                detail: "no provider configured for this route".into(),
            }
        })?;
        tracing::debug!(model = %request.model, %route, messages = request.transcript.len(), "chat completion");
        let reply = provider.complete(request).await?;
        if reply.role != Role::Assistant {
            return Err(LlmError::MalformedResponse {
                provider: provider.name().to_string(),
                detail: format!("expected an assistant message, got {}", reply.role.as_str()),
            });
        }
        Ok(reply)
    }

    /// One conversational turn: sends `system` (if any) + `history` + the new
    /// user message, and on success appends the user message and the reply
    /// to `history`. On failure `history` is left untouched.
    pub async fn converse(
        &self,
        model: &ModelId,
        system: Option<&str>,
        history: &mut ChatTranscript,
        user_text: &str,
    ) -> Result<ChatMessage, LlmError> {
        let mut outgoing = match system {
            Some(s) => ChatTranscript::with_system(s),
            None => ChatTranscript::new(),
        };
        for m in history.messages() {
            outgoing.push(m.clone())?;
        }
        outgoing.push_user(user_text);
        let reply = self.complete_chat(&self.request(model.clone(), outgoing)).await?;
        history.push_user(user_text);
        history.push(reply.clone())?;
        Ok(reply)
    }

    /// Single-shot chain: system prompt plus one user message.
    pub async fn run_chain(&self, model: &ModelId, system: &str, user_text: &str) -> Result<String, LlmError> {
        let mut t = ChatTranscript::with_system(system);
        t.push_user(user_text);
        Ok(self.complete_chat(&self.request(model.clone(), t)).await?.content)
    }

    pub async fn transcribe_audio(&self, clip: &AudioClip) -> Result<String, LlmError> {
        if clip.bytes.is_empty() {
            return Err(LlmError::UnsupportedFormat("empty audio payload".into()));
        }
        self.speech.transcribe(clip).await
    }

    pub async fn synthesize_speech(&self, text: &str, voice: &str) -> Result<AudioClip, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let clip = self.speech.synthesize(text, voice).await?;
        if clip.bytes.is_empty() {
            return Err(LlmError::MalformedResponse {
                provider: self.speech.name().to_string(),
                detail: "empty audio".into(),
            });
        }
        Ok(clip)
    }
}
