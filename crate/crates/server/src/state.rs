//! Shared service state and its construction from [`Config`].

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use meditools_core::catalog::Catalog;
use meditools_core::derm::{DermConfig, DermPrompts, DermSim};
use meditools_core::extract::{
    strip_html, ContentExtractor, DiffbotExtractor, FallbackExtractor, HtmlFetchExtractor, MockExtractor,
    DIFFBOT_BASE_URL,
};
use meditools_core::llm::openai::{OPENAI_BASE_URL, OPENROUTER_BASE_URL};
use meditools_core::llm::{
    AudioClip, AudioFormat, ChatProvider, LlmError, LlmGateway, MockProvider, MockSpeech, ModelRegistry,
    OpenAiCompatProvider, OpenAiSpeech, PromptTemplate, ProviderRoute, SpeechProvider,
};
use meditools_core::news::{
    default_topics, FixtureSearch, NewsError, NewsSearch, NewsService, SerperSearch, SERPER_BASE_URL,
};
use meditools_core::pubmed::{
    default_paper_prompt, pmc_full_text_url, EutilsTransport, FixtureTransport, HttpTransport, Pmcid, PubmedClient,
    EUTILS_BASE_URL,
};
use meditools_core::registry::StrategyRegistry;
use meditools_core::session::SessionStore;
use rand::{Rng, SeedableRng};

use crate::config::{Config, StartupError};
use crate::mailer::{HttpMailer, Mailer, MemoryMailer, SENDGRID_BASE_URL};

pub const BUNDLED_REGISTRY: &str = include_str!("../config/models.toml");
pub const OFFLINE_PATIENT_TRANSCRIPT: &str = "It started about two weeks ago and it itches at night.";
const OFFLINE_PAGE_TEXT: &str = "Recorded article text used when the service runs without network access. \
It describes a recent clinical development and its expected effect on everyday practice.";

/// Everything a request handler needs.
#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    pub gateway: Arc<LlmGateway>,
    pub derm: Arc<DermSim>,
    pub pubmed: Arc<PubmedClient>,
    pub news: Arc<NewsService>,
    pub mailer: Arc<dyn Mailer>,
    pub paper_prompt: PromptTemplate,
    pub secrets: Arc<Vec<String>>,
    pub state_dir: Option<PathBuf>,
    pub offline: bool,
    rng: Arc<Mutex<rand::rngs::StdRng>>,
}

impl AppState {
    /// Builds the service from configuration; failures name the variable.
    pub fn from_config(config: &Config) -> Result<Self, StartupError> {
        let image_root = config
            .image_root
            .as_deref()
            .ok_or_else(|| StartupError::new("MEDITOOLS_IMAGE_ROOT", "not set"))?;
        let catalog = Catalog::scan(image_root).map_err(|e| StartupError::new("MEDITOOLS_IMAGE_ROOT", e.to_string()))?;

        let registry = match &config.registry_path {
            Some(p) => ModelRegistry::load(p),
            None => ModelRegistry::from_toml_str(BUNDLED_REGISTRY),
        }
        .map_err(|e| StartupError::new("MEDITOOLS_REGISTRY_PATH", e.to_string()))?;
        if registry.is_empty() {
            return Err(StartupError::new("MEDITOOLS_REGISTRY_PATH", "registry lists no models"));
        }

        let fixtures = if config.offline { Some(fixtures_dir(config)?) } else { None };
        let gateway = Arc::new(build_gateway(config, registry)?);

        let derm_config = match &config.derm_config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| StartupError::new("MEDITOOLS_DERM_CONFIG", e.to_string()))?;
                toml::from_str::<DermConfig>(&text).map_err(|e| StartupError::new("MEDITOOLS_DERM_CONFIG", e.to_string()))?
            }
            None => DermConfig::default(),
        };
        let prompts = match &config.prompt_dir {
            Some(d) => DermPrompts::load_dir(d).map_err(|e| StartupError::new("MEDITOOLS_PROMPT_DIR", e.to_string()))?,
            None => DermPrompts::default(),
        };
        let paper_prompt = match &config.prompt_dir {
            Some(d) if d.join("paper_chat.txt").exists() => PromptTemplate::load(&d.join("paper_chat.txt"))
                .map_err(|e| StartupError::new("MEDITOOLS_PROMPT_DIR", e.to_string()))?,
            _ => default_paper_prompt(),
        };

        let store = Arc::new(SessionStore::default());
        let derm = DermSim::new(store.clone(), Arc::new(catalog), gateway.clone(), derm_config, prompts)
            .map_err(|e| StartupError::new("MEDITOOLS_DERM_CONFIG", e.to_string()))?;

        let extractor = build_extractor(config, fixtures.as_deref())?;
        let pubmed = PubmedClient::new(build_transport(config, fixtures.as_deref())?, extractor.clone());

        let news_model = match (&config.news_model, config.offline) {
            (Some(m), _) => m.clone(),
            (None, true) => first_model(&gateway, ProviderRoute::Mock).unwrap_or_else(|| "gpt-4o".into()),
            (None, false) => "gpt-4o".into(),
        };
        let news_model = gateway
            .registry()
            .lookup(&news_model)
            .map_err(|e| StartupError::new("MEDITOOLS_NEWS_MODEL", e.to_string()))?
            .id
            .clone();
        let mut news = NewsService::new(build_search(config, fixtures.as_deref())?, extractor, gateway.clone(), news_model);
        news = news.with_topics(config.news_topics.clone().unwrap_or_else(default_topics));
        if let Some(d) = &config.prompt_dir {
            let p = d.join("news_summary.txt");
            if p.exists() {
                news = news.with_prompt(PromptTemplate::load(&p).map_err(|e| StartupError::new("MEDITOOLS_PROMPT_DIR", e.to_string()))?);
            }
        }

        Ok(Self {
            store,
            gateway,
            derm: Arc::new(derm),
            pubmed: Arc::new(pubmed),
            news: Arc::new(news),
            mailer: build_mailer(config)?,
            paper_prompt,
            secrets: Arc::new(config.secrets()),
            state_dir: config.state_dir.clone(),
            offline: config.offline,
            rng: Arc::new(Mutex::new(rand::rngs::StdRng::from_os_rng())),
        })
    }

    /// Reseeds case generation, for reproducible runs.
    pub fn with_seed(self, seed: u64) -> Self {
        *self.rng.lock().unwrap_or_else(|p| p.into_inner()) = rand::rngs::StdRng::seed_from_u64(seed);
        self
    }

    pub fn with_mailer(mut self, mailer: Arc<dyn Mailer>) -> Self {
        self.mailer = mailer;
        self
    }

    /// A fresh seed drawn from the shared generator.
    pub fn next_seed(&self) -> u64 {
        self.rng.lock().unwrap_or_else(|p| p.into_inner()).random()
    }

    /// Loads a snapshot from the state directory, if one is configured.
    pub fn restore_sessions(&self) -> Result<usize, StartupError> {
        match &self.state_dir {
            Some(d) => self.store.load_snapshot(d).map_err(|e| StartupError::new("MEDITOOLS_STATE_DIR", e.to_string())),
            None => Ok(0),
        }
    }

    pub fn save_sessions(&self) -> Result<bool, meditools_core::session::SessionError> {
        match &self.state_dir {
            Some(d) => self.store.save_snapshot(d).map(|_| true),
            None => Ok(false),
        }
    }

    pub fn redact(&self, text: &str) -> String {
        self.secrets
            .iter()
            .filter(|s| !s.is_empty())
            .fold(text.to_string(), |acc, s| acc.replace(s.as_str(), "[redacted]"))
    }
}

fn first_model(gateway: &LlmGateway, route: ProviderRoute) -> Option<String> {
    gateway.registry().entries().iter().find(|e| e.route == route).map(|e| e.id.to_string())
}

fn fixtures_dir(config: &Config) -> Result<PathBuf, StartupError> {
    let dir = config.fixtures_dir.clone().unwrap_or_else(|| PathBuf::from("fixtures"));
    if dir.join("pubmed/index.toml").is_file() && dir.join("news/index.toml").is_file() {
        Ok(dir)
    } else {
        Err(StartupError::new(
            "MEDITOOLS_FIXTURES_DIR",
            format!("{} does not contain pubmed/ and news/ fixture indexes", dir.display()),
        ))
    }
}

/// Speech stand-in for deployments without a speech vendor key.
struct NoSpeech;

#[async_trait]
impl SpeechProvider for NoSpeech {
    fn name(&self) -> &str {
        "none"
    }

    async fn transcribe(&self, _: &AudioClip) -> Result<String, LlmError> {
        Err(LlmError::ProviderUnavailable { provider: "speech".into(), detail: "no speech service configured".into() })
    }

    async fn synthesize(&self, _: &str, _: &str) -> Result<AudioClip, LlmError> {
        Err(LlmError::ProviderUnavailable { provider: "speech".into(), detail: "no speech service configured".into() })
    }
}

fn build_gateway(config: &Config, registry: ModelRegistry) -> Result<LlmGateway, StartupError> {
    if config.offline {
        let canned: Arc<dyn ChatProvider> = Arc::new(MockProvider::canned());
        let mut gw = LlmGateway::new(registry, Arc::new(MockSpeech::new(OFFLINE_PATIENT_TRANSCRIPT)));
        for route in ProviderRoute::ALL {
            gw = gw.with_provider(route, canned.clone());
        }
        return Ok(gw);
    }
    let speech: Arc<dyn SpeechProvider> = match &config.openai_key {
        Some(k) => Arc::new(OpenAiSpeech::new(
            config.openai_base_url.as_deref().unwrap_or(OPENAI_BASE_URL),
            k,
            AudioFormat::Wav,
        )),
        None => Arc::new(NoSpeech),
    };
    let mut gw = LlmGateway::new(registry, speech).with_provider(ProviderRoute::Mock, Arc::new(MockProvider::canned()));
    if let Some(k) = &config.openai_key {
        let base = config.openai_base_url.as_deref().unwrap_or(OPENAI_BASE_URL);
        gw = gw.with_provider(ProviderRoute::OpenAiDirect, Arc::new(OpenAiCompatProvider::new("openai", base, k)));
    }
    if let Some(k) = &config.openrouter_key {
        let base = config.openrouter_base_url.as_deref().unwrap_or(OPENROUTER_BASE_URL);
        gw = gw.with_provider(ProviderRoute::Aggregator, Arc::new(OpenAiCompatProvider::new("openrouter", base, k)));
    }
    Ok(gw)
}

fn build_extractor(config: &Config, fixtures: Option<&Path>) -> Result<Arc<dyn ContentExtractor>, StartupError> {
    let mut registry: StrategyRegistry<dyn ContentExtractor> = StrategyRegistry::new("extractor");
    if let Some(dir) = fixtures {
        let mut mock = MockExtractor::new().with_default_text(OFFLINE_PAGE_TEXT);
        let pages = std::fs::read_dir(dir.join("pubmed")).map_err(|e| StartupError::new("MEDITOOLS_FIXTURES_DIR", e.to_string()))?;
        for entry in pages.flatten() {
            let name = entry.file_name().to_string_lossy().to_string();
            let Some(id) = name.strip_prefix("pmc_").and_then(|n| n.strip_suffix(".html")) else { continue };
            let Ok(pmcid) = Pmcid::parse(id) else { continue };
            let html = std::fs::read_to_string(entry.path()).map_err(|e| StartupError::new("MEDITOOLS_FIXTURES_DIR", e.to_string()))?;
            let (title, text) = strip_html(&html);
            mock = mock.with_page(&pmc_full_text_url(&pmcid), title.as_deref(), &text);
        }
        registry.register("fixture", Arc::new(mock));
        return registry.get("fixture").map_err(|e| StartupError::new("MEDITOOLS_FIXTURES_DIR", e.to_string()));
    }
    let html: Arc<dyn ContentExtractor> = Arc::new(HtmlFetchExtractor::default());
    registry.register("html", html.clone());
    let chosen = match &config.diffbot_token {
        Some(t) => {
            let base = config.diffbot_base_url.as_deref().unwrap_or(DIFFBOT_BASE_URL);
            registry.register("diffbot", Arc::new(FallbackExtractor::new(Arc::new(DiffbotExtractor::new(base, t)), html)));
            "diffbot"
        }
        None => "html",
    };
    registry.get(chosen).map_err(|e| StartupError::new("MEDITOOLS_DIFFBOT_TOKEN", e.to_string()))
}

fn build_transport(config: &Config, fixtures: Option<&Path>) -> Result<Arc<dyn EutilsTransport>, StartupError> {
    if let Some(dir) = fixtures {
        let t = FixtureTransport::load_dir(&dir.join("pubmed")).map_err(|e| StartupError::new("MEDITOOLS_FIXTURES_DIR", e.to_string()))?;
        return Ok(Arc::new(t));
    }
    let base = config.eutils_base_url.as_deref().unwrap_or(EUTILS_BASE_URL);
    Ok(Arc::new(HttpTransport::new(base, config.ncbi_key.clone())))
}

/// News search for deployments without a search key: every query fails.
struct NoSearch;

#[async_trait]
impl NewsSearch for NoSearch {
    fn name(&self) -> &str {
        "none"
    }

    async fn search(&self, _: &str, _: usize) -> Result<Vec<meditools_core::news::SearchHit>, NewsError> {
        Err(NewsError::UpstreamUnavailable("no news search service configured".into()))
    }
}

fn build_search(config: &Config, fixtures: Option<&Path>) -> Result<Arc<dyn NewsSearch>, StartupError> {
    if let Some(dir) = fixtures {
        let s = FixtureSearch::load_dir(&dir.join("news")).map_err(|e| StartupError::new("MEDITOOLS_FIXTURES_DIR", e.to_string()))?;
        return Ok(Arc::new(s));
    }
    Ok(match &config.serper_key {
        Some(k) => Arc::new(SerperSearch::new(config.serper_base_url.as_deref().unwrap_or(SERPER_BASE_URL), k)),
        None => Arc::new(NoSearch),
    })
}

fn build_mailer(config: &Config) -> Result<Arc<dyn Mailer>, StartupError> {
    let mut registry: StrategyRegistry<dyn Mailer> = StrategyRegistry::new("mailer");
    registry.register("memory", Arc::new(MemoryMailer::default()));
    let chosen = match (&config.mailer_key, config.offline) {
        (Some(key), false) => {
            let to = config
                .feedback_to
                .clone()
                .ok_or_else(|| StartupError::new("MEDITOOLS_FEEDBACK_TO", "required when MEDITOOLS_MAILER_KEY is set"))?;
            let from = config.feedback_from.clone().unwrap_or_else(|| to.clone());
            let base = config.mailer_url.as_deref().unwrap_or(SENDGRID_BASE_URL);
            registry.register("http", Arc::new(HttpMailer::new(base, key, to, from)));
            "http"
        }
        _ => "memory",
    };
    registry.get(chosen).map_err(|e| StartupError::new("MEDITOOLS_MAILER_KEY", e.to_string()))
}

