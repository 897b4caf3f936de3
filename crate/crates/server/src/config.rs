//! Service configuration, read from `MEDITOOLS_*` environment variables.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

/// Startup failure naming the variable that caused it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{var}: {detail}")]
pub struct StartupError {
    pub var: &'static str,
    pub detail: String,
}

impl StartupError {
    pub fn new(var: &'static str, detail: impl Into<String>) -> Self {
        Self { var, detail: detail.into() }
    }
}

/// Variables whose values are credentials and must never be echoed.
pub const SECRET_VARS: [&str; 6] = [
    "MEDITOOLS_OPENAI_KEY",
    "MEDITOOLS_OPENROUTER_KEY",
    "MEDITOOLS_SERPER_KEY",
    "MEDITOOLS_DIFFBOT_TOKEN",
    "MEDITOOLS_MAILER_KEY",
    "MEDITOOLS_NCBI_KEY",
];

#[derive(Clone, Default)]
pub struct Config {
    pub bind: Option<SocketAddr>,
    pub openai_key: Option<String>,
    pub openrouter_key: Option<String>,
    pub serper_key: Option<String>,
    pub diffbot_token: Option<String>,
    pub mailer_key: Option<String>,
    pub ncbi_key: Option<String>,
    pub image_root: Option<PathBuf>,
    pub state_dir: Option<PathBuf>,
    pub registry_path: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
    pub derm_config: Option<PathBuf>,
    pub news_model: Option<String>,
    pub news_topics: Option<Vec<String>>,
    pub feedback_to: Option<String>,
    pub feedback_from: Option<String>,
    /// Serve canned model replies and recorded upstream fixtures; no network.
    pub offline: bool,
    pub fixtures_dir: Option<PathBuf>,
    pub openai_base_url: Option<String>,
    pub openrouter_base_url: Option<String>,
    pub eutils_base_url: Option<String>,
    pub serper_base_url: Option<String>,
    pub diffbot_base_url: Option<String>,
    pub mailer_url: Option<String>,
}

impl std::fmt::Debug for Config {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let set = |o: &Option<String>| if o.is_some() { "<set>" } else { "<unset>" };
        f.debug_struct("Config")
            .field("bind", &self.bind)
            .field("openai_key", &set(&self.openai_key))
            .field("openrouter_key", &set(&self.openrouter_key))
            .field("serper_key", &set(&self.serper_key))
            .field("diffbot_token", &set(&self.diffbot_token))
            .field("mailer_key", &set(&self.mailer_key))
            .field("ncbi_key", &set(&self.ncbi_key))
            .field("image_root", &self.image_root)
            .field("state_dir", &self.state_dir)
            .field("registry_path", &self.registry_path)
            .field("offline", &self.offline)
            .finish_non_exhaustive()
    }
}

impl Config {
    pub fn from_env() -> Result<Self, StartupError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_map(map: &HashMap<String, String>) -> Result<Self, StartupError> {
        Self::from_lookup(|k| map.get(k).cloned())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, StartupError> {
        let text = |k: &str| get(k).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
        let path = |k: &str| text(k).map(PathBuf::from);
        let bind = match text("MEDITOOLS_BIND") {
            Some(b) => Some(
                b.parse()
                    .map_err(|_| StartupError::new("MEDITOOLS_BIND", format!("`{b}` is not a socket address")))?,
            ),
            None => None,
        };
        let offline = match text("MEDITOOLS_OFFLINE").as_deref() {
            None | Some("0") | Some("false") | Some("no") => false,
            Some("1") | Some("true") | Some("yes") => true,
            Some(other) => return Err(StartupError::new("MEDITOOLS_OFFLINE", format!("expected 1 or 0, got `{other}`"))),
        };
        Ok(Self {
            bind,
            openai_key: text("MEDITOOLS_OPENAI_KEY"),
            openrouter_key: text("MEDITOOLS_OPENROUTER_KEY"),
            serper_key: text("MEDITOOLS_SERPER_KEY"),
            diffbot_token: text("MEDITOOLS_DIFFBOT_TOKEN"),
            mailer_key: text("MEDITOOLS_MAILER_KEY"),
            ncbi_key: text("MEDITOOLS_NCBI_KEY"),
            image_root: path("MEDITOOLS_IMAGE_ROOT"),
            state_dir: path("MEDITOOLS_STATE_DIR"),
            registry_path: path("MEDITOOLS_REGISTRY_PATH"),
            prompt_dir: path("MEDITOOLS_PROMPT_DIR"),
            derm_config: path("MEDITOOLS_DERM_CONFIG"),
            news_model: text("MEDITOOLS_NEWS_MODEL"),
            news_topics: text("MEDITOOLS_NEWS_TOPICS")
                .map(|t| t.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()),
            feedback_to: text("MEDITOOLS_FEEDBACK_TO"),
            feedback_from: text("MEDITOOLS_FEEDBACK_FROM"),
            offline,
            fixtures_dir: path("MEDITOOLS_FIXTURES_DIR"),
            openai_base_url: text("MEDITOOLS_OPENAI_BASE_URL"),
            openrouter_base_url: text("MEDITOOLS_OPENROUTER_BASE_URL"),
            eutils_base_url: text("MEDITOOLS_EUTILS_BASE_URL"),
            serper_base_url: text("MEDITOOLS_SERPER_BASE_URL"),
            diffbot_base_url: text("MEDITOOLS_DIFFBOT_BASE_URL"),
            mailer_url: text("MEDITOOLS_MAILER_URL"),
        })
    }

    pub fn bind_addr(&self) -> SocketAddr {
        self.bind.unwrap_or_else(|| DEFAULT_BIND.parse().expect("valid default"))
    }

    /// Every configured credential value.
    pub fn secrets(&self) -> Vec<String> {
        [
            &self.openai_key,
            &self.openrouter_key,
            &self.serper_key,
            &self.diffbot_token,
            &self.mailer_key,
            &self.ncbi_key,
        ]
        .into_iter()
        .flatten()
        .cloned()
        .collect()
    }
}
