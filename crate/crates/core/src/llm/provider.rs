use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatTranscript, LlmError, ModelId, Role};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: ModelId,
    pub transcript: ChatTranscript,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(model: ModelId, transcript: ChatTranscript) -> Self {
        Self {
            model,
            transcript,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.transcript.is_empty() {
            return Err(LlmError::InvalidRequest("transcript must not be empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// A chat-completion backend. Implementations return the complete final
/// assistant message; any streaming happens below this interface.
#[async_trait]
pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;

    async fn complete(&self, request: &CompletionRequest) -> Result<ChatMessage, LlmError>;
}

/// Header line that lab-generation prompts ask the model to emit. The canned
/// mock answers such prompts with a fixed table.
pub const LAB_TABLE_MARKER: &str = "Test | Result | Reference Range";

pub const CANNED_LAB_TABLE: &str = "Complete Blood Count (CBC)
Test | Result | Reference Range
WBC | 8.3 x10^3/uL | 4.5-11.0 x10^3/uL
RBC | 4.8 x10^6/uL | 4.7-6.1 x10^6/uL
Hemoglobin | 13.5 g/dL | 13.5-17.5 g/dL
Hematocrit | 40.7% | 38.3-48.6%
MCV | 85 fL | 80-96 fL
MCH | 28 pg | 27-33 pg
MCHC | 33 g/dL | 33-36 g/dL
Platelets | 275 x10^3/uL | 150-450 x10^3/uL";

type Responder = dyn Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync;

#[derive(Clone)]
enum MockBehaviour {
    Echo,
    Canned,
    Fixed(String),
    Respond(Arc<Responder>),
    Fail(LlmError),
}

/// Deterministic in-process provider. Identical requests always produce
/// identical replies.
#[derive(Clone)]
pub struct MockProvider {
    behaviour: MockBehaviour,
    context_limit: Option<usize>,
    calls: Arc<AtomicUsize>,
}

impl fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.behaviour {
            MockBehaviour::Echo => "echo",
            MockBehaviour::Canned => "canned",
            MockBehaviour::Fixed(_) => "fixed",
            MockBehaviour::Respond(_) => "respond",
            MockBehaviour::Fail(_) => "fail",
        };
        f.debug_struct("MockProvider")
            .field("behaviour", &kind)
            .field("context_limit", &self.context_limit)
            .finish()
    }
}

impl MockProvider {
    fn with_behaviour(behaviour: MockBehaviour) -> Self {
        Self {
            behaviour,
            context_limit: None,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Replies with the content of the last user message.
    pub fn echo() -> Self {
        Self::with_behaviour(MockBehaviour::Echo)
    }

    /// Echo, except lab-table prompts get [`CANNED_LAB_TABLE`].
    pub fn canned() -> Self {
        Self::with_behaviour(MockBehaviour::Canned)
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        Self::with_behaviour(MockBehaviour::Fixed(reply.into()))
    }

    pub fn responder<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync + 'static,
    {
        Self::with_behaviour(MockBehaviour::Respond(Arc::new(f)))
    }

    pub fn failing(error: LlmError) -> Self {
        Self::with_behaviour(MockBehaviour::Fail(error))
    }

    /// Rejects transcripts longer than `chars` characters with `ContextTooLong`.
    pub fn with_context_limit(mut self, chars: usize) -> Self {
        self.context_limit = Some(chars);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn last_user(request: &CompletionRequest) -> String {
        request
            .transcript
            .last_user()
            .map(|m| m.content.clone())
            .unwrap_or_default()
    }
}

#[async_trait]
impl ChatProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<ChatMessage, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        if let Some(limit) = self.context_limit {
            let actual = request.transcript.char_len();
            if actual > limit {
                return Err(LlmError::ContextTooLong {
                    provider: "mock".into(),
                    detail: format!("{actual} characters exceeds the {limit}-character window"),
                });
            }
        }
        let content = match &self.behaviour {
            MockBehaviour::Echo => Self::last_user(request),
            MockBehaviour::Canned => {
                let wants_lab = request
                    .transcript
                    .messages()
                    .iter()
                    .any(|m| m.role == Role::System && m.content.contains(LAB_TABLE_MARKER));
                if wants_lab {
                    CANNED_LAB_TABLE.to_string()
                } else {
                    Self::last_user(request)
                }
            }
            MockBehaviour::Fixed(text) => text.clone(),
            MockBehaviour::Respond(f) => f(request)?,
            MockBehaviour::Fail(e) => return Err(e.clone()),
        };
        Ok(ChatMessage::assistant(content))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(user: &str) -> CompletionRequest {
        let mut t = ChatTranscript::with_system("sys");
        t.push_user(user);
        CompletionRequest::new(ModelId::new("mock-echo").unwrap(), t)
    }

    #[tokio::test]
    async fn echo_returns_last_user() {
        let p = MockProvider::echo();
        let reply = p.complete(&request("my arm itches")).await.unwrap();
        assert_eq!(reply, ChatMessage::assistant("my arm itches"));
        assert_eq!(p.calls(), 1);
    }

    #[tokio::test]
    async fn empty_transcript_rejected() {
        let p = MockProvider::echo();
        let req = CompletionRequest::new(ModelId::new("m").unwrap(), ChatTranscript::new());
        assert!(matches!(p.complete(&req).await, Err(LlmError::InvalidRequest(_))));
    }

    #[tokio::test]
    async fn validation_bounds() {
        let mut req = request("x");
        req.temperature = 2.5;
        assert!(req.validate().is_err());
        req.temperature = 2.0;
        req.max_tokens = 0;
        assert!(req.validate().is_err());
    }

    #[tokio::test]
    async fn context_limit_enforced() {
        let p = MockProvider::echo().with_context_limit(5);
        let err = p.complete(&request("far too long for the window")).await.unwrap_err();
        assert!(matches!(err, LlmError::ContextTooLong { .. }));
    }

    #[tokio::test]
    async fn canned_answers_lab_prompts_with_table() {
        let p = MockProvider::canned();
        let mut t = ChatTranscript::with_system(format!("Reply as a table:\n{LAB_TABLE_MARKER}"));
        t.push_user("CBC");
        let req = CompletionRequest::new(ModelId::new("m").unwrap(), t);
        assert_eq!(p.complete(&req).await.unwrap().content, CANNED_LAB_TABLE);
        assert_eq!(p.complete(&request("hello")).await.unwrap().content, "hello");
    }
}
