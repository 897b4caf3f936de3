//! Feedback relay. A message is acknowledged only once a mailer accepts it.

use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const SENDGRID_BASE_URL: &str = "https://api.sendgrid.com";
pub const MAX_BODY_CHARS: usize = 10_000;
pub const MAX_CONTACT_CHARS: usize = 320;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MailerError {
    #[error("feedback could not be delivered: {0}")]
    Unavailable(String),
    #[error("invalid feedback: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackMessage {
    pub sender_contact: String,
    pub body: String,
    pub submitted_at: DateTime<Utc>,
}

impl FeedbackMessage {
    pub fn new(sender_contact: &str, body: &str, submitted_at: DateTime<Utc>) -> Result<Self, MailerError> {
        let body = body.trim();
        if body.is_empty() {
            return Err(MailerError::Invalid("message body is empty".into()));
        }
        if body.chars().count() > MAX_BODY_CHARS {
            return Err(MailerError::Invalid(format!("message body exceeds {MAX_BODY_CHARS} characters")));
        }
        let contact = sender_contact.trim();
        if contact.chars().count() > MAX_CONTACT_CHARS || contact.contains(['\r', '\n']) {
            return Err(MailerError::Invalid("sender contact is not a single short line".into()));
        }
        Ok(Self { sender_contact: contact.to_string(), body: body.to_string(), submitted_at })
    }
}

#[async_trait]
pub trait Mailer: Send + Sync {
    fn name(&self) -> &str;

    async fn send(&self, message: &FeedbackMessage) -> Result<(), MailerError>;
}

/// Keeps messages in memory; the default when no mail service is configured.
#[derive(Debug, Default)]
pub struct MemoryMailer {
    sent: Mutex<Vec<FeedbackMessage>>,
}

impl MemoryMailer {
    pub fn messages(&self) -> Vec<FeedbackMessage> {
        self.sent.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

#[async_trait]
impl Mailer for MemoryMailer {
    fn name(&self) -> &str {
        "memory"
    }

    async fn send(&self, message: &FeedbackMessage) -> Result<(), MailerError> {
        self.sent.lock().unwrap_or_else(|p| p.into_inner()).push(message.clone());
        Ok(())
    }
}

/// Always refuses; stands in for a mail outage.
#[derive(Debug, Default)]
pub struct FailingMailer;

#[async_trait]
impl Mailer for FailingMailer {
    fn name(&self) -> &str {
        "failing"
    }

    async fn send(&self, _: &FeedbackMessage) -> Result<(), MailerError> {
        Err(MailerError::Unavailable("mail service is not accepting messages".into()))
    }
}

/// Transactional-email HTTP API in the SendGrid v3 shape.
pub struct HttpMailer {
    base_url: String,
    api_key: String,
    to: String,
    from: String,
    client: reqwest::Client,
}

impl HttpMailer {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, to: impl Into<String>, from: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            to: to.into(),
            from: from.into(),
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(20))
                .build()
                .expect("default TLS backend available"),
        }
    }

    pub fn payload(&self, m: &FeedbackMessage) -> serde_json::Value {
        let contact = if m.sender_contact.is_empty() { "anonymous" } else { &m.sender_contact };
        serde_json::json!({
            "personalizations": [{ "to": [{ "email": self.to }] }],
            "from": { "email": self.from },
            "subject": format!("MediTools feedback from {contact}"),
            "content": [{
                "type": "text/plain",
                "value": format!("From: {contact}\nSubmitted: {}\n\n{}", m.submitted_at.to_rfc3339(), m.body),
            }],
        })
    }
}

#[async_trait]
impl Mailer for HttpMailer {
    fn name(&self) -> &str {
        "http"
    }

    async fn send(&self, message: &FeedbackMessage) -> Result<(), MailerError> {
        let resp = self
            .client
            .post(format!("{}/v3/mail/send", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&self.payload(message))
            .send()
            .await
            .map_err(|e| MailerError::Unavailable(e.without_url().to_string()))?;
        let status = resp.status();
        if status.is_success() {
            Ok(())
        } else {
            Err(MailerError::Unavailable(format!("mail service returned HTTP {}", status.as_u16())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_validation() {
        let now = Utc::now();
        assert!(FeedbackMessage::new("a@b.test", "  ", now).is_err());
        assert!(FeedbackMessage::new("a\nBcc: x", "hi", now).is_err());
        assert!(FeedbackMessage::new("", &"x".repeat(MAX_BODY_CHARS + 1), now).is_err());
        let m = FeedbackMessage::new(" a@b.test ", " Great tool ", now).unwrap();
        assert_eq!((m.sender_contact.as_str(), m.body.as_str()), ("a@b.test", "Great tool"));
    }

    #[tokio::test]
    async fn memory_and_failing() {
        let m = FeedbackMessage::new("", "hello", Utc::now()).unwrap();
        let mem = MemoryMailer::default();
        mem.send(&m).await.unwrap();
        assert_eq!(mem.messages(), [m.clone()]);
        assert!(matches!(FailingMailer.send(&m).await, Err(MailerError::Unavailable(_))));
    }
}
