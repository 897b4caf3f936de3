use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Ordered chat memory. Holds at most one system message, always first, and
/// only grows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ChatTranscript {
    messages: Vec<ChatMessage>,
}

impl ChatTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_system(content: impl Into<String>) -> Self {
        Self { messages: vec![ChatMessage::system(content)] }
    }

    pub fn from_messages(messages: Vec<ChatMessage>) -> Result<Self, LlmError> {
        let mut t = Self::new();
        for m in messages {
            t.push(m)?;
        }
        Ok(t)
    }

    /// Appends `message`. A system message is only accepted into an empty
    /// transcript.
    pub fn push(&mut self, message: ChatMessage) -> Result<(), LlmError> {
        if message.role == Role::System && !self.messages.is_empty() {
            return Err(LlmError::InvalidRequest(
                "a system message may only open a transcript".into(),
            ));
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn push_user(&mut self, content: impl Into<String>) {
        self.messages.push(ChatMessage::user(content));
    }

    pub fn push_assistant(&mut self, content: impl Into<String>) {
        self.messages.push(ChatMessage::assistant(content));
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn system(&self) -> Option<&ChatMessage> {
        self.messages.first().filter(|m| m.role == Role::System)
    }

    pub fn last(&self) -> Option<&ChatMessage> {
        self.messages.last()
    }

    pub fn last_user(&self) -> Option<&ChatMessage> {
        self.messages.iter().rev().find(|m| m.role == Role::User)
    }

    pub fn count(&self, role: Role) -> usize {
        self.messages.iter().filter(|m| m.role == role).count()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Total characters across all message bodies.
    pub fn char_len(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }

    /// Plain-text rendering, one `Role: content` paragraph per message,
    /// system message omitted.
    pub fn render_dialogue(&self, user_label: &str, assistant_label: &str) -> String {
        self.messages
            .iter()
            .filter(|m| m.role != Role::System)
            .map(|m| {
                let who = if m.role == Role::User { user_label } else { assistant_label };
                format!("{who}: {}", m.content)
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

impl<'de> Deserialize<'de> for ChatTranscript {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let messages = Vec::<ChatMessage>::deserialize(deserializer)?;
        Self::from_messages(messages).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_only_first() {
        let mut t = ChatTranscript::with_system("you are a patient");
        t.push_user("hi");
        assert!(t.push(ChatMessage::system("again")).is_err());
        assert_eq!(t.len(), 2);
        assert_eq!(t.system().unwrap().content, "you are a patient");
    }

    #[test]
    fn deserialize_enforces_invariant() {
        let bad = r#"[{"role":"user","content":"a"},{"role":"system","content":"b"}]"#;
        assert!(serde_json::from_str::<ChatTranscript>(bad).is_err());
        let good = r#"[{"role":"system","content":"s"},{"role":"user","content":"a"}]"#;
        let t: ChatTranscript = serde_json::from_str(good).unwrap();
        assert_eq!(t.count(Role::User), 1);
    }

    #[test]
    fn dialogue_rendering_skips_system() {
        let mut t = ChatTranscript::with_system("secret");
        t.push_user("Where does it itch?");
        t.push_assistant("On my arms.");
        let text = t.render_dialogue("Clinician", "Patient");
        assert_eq!(text, "Clinician: Where does it itch?\n\nPatient: On my arms.");
        assert!(!text.contains("secret"));
    }
}
