//! Turning a web page into plain text.
//!
//! Two live strategies exist: an article-extraction API (Diffbot style) and a
//! direct fetch followed by HTML tag stripping. [`FallbackExtractor`] chains
//! them.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use scraper::{ElementRef, Html, Node, Selector};
use serde::Deserialize;

pub const DIFFBOT_BASE_URL: &str = "https://api.diffbot.com/v3";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("could not reach {url}: {detail}")]
    Unreachable { url: String, detail: String },
    #[error("upstream returned HTTP {status} for {url}")]
    Status { url: String, status: u16 },
    #[error("no text could be extracted from {0}")]
    Empty(String),
    #[error("extraction response unreadable: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedPage {
    pub url: String,
    pub title: Option<String>,
    pub text: String,
}

#[async_trait]
pub trait ContentExtractor: Send + Sync {
    fn name(&self) -> &str;

    async fn extract(&self, url: &str) -> Result<ExtractedPage, ExtractError>;
}

fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(Duration::from_secs(30))
        .user_agent(concat!("meditools/", env!("CARGO_PKG_VERSION")))
        .build()
        .expect("default TLS backend available")
}

fn unreachable(url: &str, err: reqwest::Error) -> ExtractError {
    ExtractError::Unreachable { url: url.to_string(), detail: err.without_url().to_string() }
}

fn non_empty(page: ExtractedPage) -> Result<ExtractedPage, ExtractError> {
    if page.text.trim().is_empty() {
        Err(ExtractError::Empty(page.url))
    } else {
        Ok(page)
    }
}

/// Calls an article-extraction API: `GET {base}/article?token=..&url=..`.
#[derive(Debug, Clone)]
pub struct DiffbotExtractor {
    base_url: String,
    token: String,
    client: reqwest::Client,
}

#[derive(Deserialize)]
struct DiffbotResponse {
    #[serde(default)]
    objects: Vec<DiffbotObject>,
}

#[derive(Deserialize)]
struct DiffbotObject {
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    text: Option<String>,
}

impl DiffbotExtractor {
    pub fn new(base_url: impl Into<String>, token: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token: token.into(),
            client: http_client(),
        }
    }
}

#[async_trait]
impl ContentExtractor for DiffbotExtractor {
    fn name(&self) -> &str {
        "diffbot"
    }

    async fn extract(&self, url: &str) -> Result<ExtractedPage, ExtractError> {
        let resp = self
            .client
            .get(format!("{}/article", self.base_url))
            .query(&[("token", self.token.as_str()), ("url", url)])
            .send()
            .await
            .map_err(|e| unreachable(url, e))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ExtractError::Status { url: url.to_string(), status: status.as_u16() });
        }
        let body: DiffbotResponse = resp
            .json()
            .await
            .map_err(|e| ExtractError::Malformed(e.without_url().to_string()))?;
        let obj = body.objects.into_iter().next().ok_or_else(|| ExtractError::Empty(url.to_string()))?;
        non_empty(ExtractedPage {
            url: url.to_string(),
            title: obj.title.filter(|t| !t.trim().is_empty()),
            text: obj.text.unwrap_or_default(),
        })
    }
}

/// Fetches the page directly and strips markup.
#[derive(Debug, Clone)]
pub struct HtmlFetchExtractor {
    client: reqwest::Client,
}

impl Default for HtmlFetchExtractor {
    fn default() -> Self {
        Self { client: http_client() }
    }
}

#[async_trait]
impl ContentExtractor for HtmlFetchExtractor {
    fn name(&self) -> &str {
        "html"
    }

    async fn extract(&self, url: &str) -> Result<ExtractedPage, ExtractError> {
        let resp = self.client.get(url).send().await.map_err(|e| unreachable(url, e))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ExtractError::Status { url: url.to_string(), status: status.as_u16() });
        }
        let html = resp.text().await.map_err(|e| unreachable(url, e))?;
        let (title, text) = strip_html(&html);
        non_empty(ExtractedPage { url: url.to_string(), title, text })
    }
}

/// Tries `primary`, then `fallback` if the primary fails for any reason.
pub struct FallbackExtractor {
    primary: Arc<dyn ContentExtractor>,
    fallback: Arc<dyn ContentExtractor>,
}

impl FallbackExtractor {
    pub fn new(primary: Arc<dyn ContentExtractor>, fallback: Arc<dyn ContentExtractor>) -> Self {
        Self { primary, fallback }
    }
}

#[async_trait]
impl ContentExtractor for FallbackExtractor {
    fn name(&self) -> &str {
        "fallback"
    }

    async fn extract(&self, url: &str) -> Result<ExtractedPage, ExtractError> {
        match self.primary.extract(url).await {
            Ok(page) => Ok(page),
            Err(e) => {
                tracing::info!(extractor = self.primary.name(), error = %e, "primary extraction failed, falling back");
                self.fallback.extract(url).await
            }
        }
    }
}

/// Serves canned pages by URL. Unknown URLs are unreachable unless a default
/// text is set.
#[derive(Debug, Default)]
pub struct MockExtractor {
    pages: HashMap<String, Result<ExtractedPage, ExtractError>>,
    default_text: Option<String>,
    calls: AtomicUsize,
}

impl MockExtractor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_page(mut self, url: &str, title: Option<&str>, text: &str) -> Self {
        self.pages.insert(
            url.to_string(),
            Ok(ExtractedPage { url: url.to_string(), title: title.map(str::to_string), text: text.to_string() }),
        );
        self
    }

    pub fn with_error(mut self, url: &str, error: ExtractError) -> Self {
        self.pages.insert(url.to_string(), Err(error));
        self
    }

    /// Any URL not explicitly configured yields this text.
    pub fn with_default_text(mut self, text: &str) -> Self {
        self.default_text = Some(text.to_string());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ContentExtractor for MockExtractor {
    fn name(&self) -> &str {
        "mock"
    }

    async fn extract(&self, url: &str) -> Result<ExtractedPage, ExtractError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let page = match self.pages.get(url) {
            Some(result) => result.clone()?,
            None => match &self.default_text {
                Some(text) => ExtractedPage { url: url.to_string(), title: None, text: text.clone() },
                None => {
                    return Err(ExtractError::Unreachable {
                        url: url.to_string(),
                        detail: "no such page in mock".into(),
                    })
                }
            },
        };
        non_empty(page)
    }
}

const SKIPPED: &[&str] = &[
    "script", "style", "noscript", "template", "svg", "nav", "header", "footer", "aside", "form", "button",
    "iframe", "head",
];
const BLOCKS: &[&str] = &[
    "p", "div", "section", "article", "main", "h1", "h2", "h3", "h4", "h5", "h6", "li", "ul", "ol", "br", "tr",
    "table", "blockquote", "pre", "figcaption", "dd", "dt",
];

fn walk(el: ElementRef<'_>, out: &mut String) {
    for child in el.children() {
        match child.value() {
            Node::Text(t) => out.push_str(t),
            Node::Element(e) => {
                let name = e.name();
                if SKIPPED.contains(&name) {
                    continue;
                }
                let block = BLOCKS.contains(&name);
                if block {
                    out.push('\n');
                }
                if let Some(child_el) = ElementRef::wrap(child) {
                    walk(child_el, out);
                }
                if block {
                    out.push('\n');
                }
            }
            _ => {}
        }
    }
}

/// Extracts `(title, body text)` from an HTML document. Prefers the
/// `<article>` or `<main>` element when present; drops scripts, styles and
/// page chrome; collapses whitespace to single spaces and blank-line
/// separated blocks.
pub fn strip_html(html: &str) -> (Option<String>, String) {
    let doc = Html::parse_document(html);
    let title_sel = Selector::parse("title").expect("static selector");
    let title = doc
        .select(&title_sel)
        .next()
        .map(|t| t.text().collect::<String>().split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|t| !t.is_empty());

    let content_sel = Selector::parse("article, main").expect("static selector");
    let body_sel = Selector::parse("body").expect("static selector");
    let root = doc
        .select(&content_sel)
        .next()
        .or_else(|| doc.select(&body_sel).next())
        .unwrap_or_else(|| doc.root_element());

    let mut raw = String::new();
    walk(root, &mut raw);
    let text = raw
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    (title, text)
}
