//! Personalized medical news: one search per topic, recency filtering,
//! equal allocation of the requested total, and per-article summaries.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::extract::ContentExtractor;
use crate::llm::{LlmError, LlmGateway, ModelId, PromptTemplate};

pub const SERPER_BASE_URL: &str = "https://google.serper.dev";
pub const QUERY_PHRASE: &str = "latest advancements updates";
pub const MAX_KEYWORDS: usize = 5;
pub const MIN_TOTAL: u32 = 3;
pub const MAX_TOTAL: u32 = 10;
pub const OVERFETCH: usize = 3;
pub const DEFAULT_WORD_CAP: usize = 120;
/// Article text beyond this many characters is not sent to the summarizer.
pub const MAX_ARTICLE_CHARS: usize = 24_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NewsError {
    #[error("invalid news request: {0}")]
    InvalidParams(String),
    #[error("news search unavailable: {0}")]
    UpstreamUnavailable(String),
    #[error("could not fetch {url}: {detail}")]
    FetchFailed { url: String, detail: String },
    #[error("summary for {0} came back empty")]
    EmptySummary(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recency {
    Week1,
    Week2,
    Month1,
    #[default]
    AnyTime,
}

impl Recency {
    pub const ALL: [Recency; 4] = [Self::Week1, Self::Week2, Self::Month1, Self::AnyTime];

    /// Window length in days; `None` for no bound.
    pub fn days(self) -> Option<i64> {
        match self {
            Recency::Week1 => Some(7),
            Recency::Week2 => Some(14),
            Recency::Month1 => Some(31),
            Recency::AnyTime => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsParams {
    pub topics: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub recency: Recency,
    pub total: u32,
}

impl NewsParams {
    /// Checks bounds, and topic membership when `allowed_topics` is
    /// nonempty (case-insensitive).
    pub fn validate(&self, allowed_topics: &[String]) -> Result<(), NewsError> {
        let bad = |m: String| Err(NewsError::InvalidParams(m));
        if self.topics.is_empty() {
            return bad("select at least one topic".into());
        }
        if self.topics.iter().any(|t| t.trim().is_empty()) {
            return bad("topic names must not be blank".into());
        }
        if !allowed_topics.is_empty() {
            if let Some(t) = self
                .topics
                .iter()
                .find(|t| !allowed_topics.iter().any(|a| a.eq_ignore_ascii_case(t.trim())))
            {
                return bad(format!("unknown topic `{t}`"));
            }
        }
        if self.keywords.len() > MAX_KEYWORDS {
            return bad(format!("at most {MAX_KEYWORDS} keywords are allowed"));
        }
        if self.keywords.iter().any(|k| k.trim().is_empty()) {
            return bad("keywords must not be blank".into());
        }
        if !(MIN_TOTAL..=MAX_TOTAL).contains(&self.total) {
            return bad(format!("total must be between {MIN_TOTAL} and {MAX_TOTAL}"));
        }
        Ok(())
    }
}

/// One search hit as returned by the search service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub link: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default)]
    pub date: Option<String>,
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub title: String,
    pub url: String,
    pub published: Option<DateTime<Utc>>,
    pub snippet: String,
}

impl NewsItem {
    pub fn from_hit(hit: &SearchHit, now: DateTime<Utc>) -> Self {
        Self {
            title: hit.title.trim().to_string(),
            url: hit.link.trim().to_string(),
            published: hit.date.as_deref().and_then(|d| parse_news_date(d, now)),
            snippet: hit.snippet.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsSummary {
    pub title: String,
    pub url: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicResults {
    pub topic: String,
    pub allocated: u32,
    pub summaries: Vec<NewsSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsReport {
    pub summaries: Vec<TopicResults>,
    pub warnings: Vec<String>,
}

pub fn build_query(topic: &str, keywords: &[String]) -> String {
    std::iter::once(topic)
        .chain(std::iter::once(QUERY_PHRASE))
        .chain(keywords.iter().map(String::as_str))
        .flat_map(str::split_whitespace)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Equal split of `total`; the last `total % n` topics get one extra.
pub fn allocate_counts(total: u32, n_topics: usize) -> Vec<u32> {
    if n_topics == 0 {
        return Vec::new();
    }
    let n = n_topics as u32;
    let (base, rem) = (total / n, total % n);
    (0..n).map(|i| base + u32::from(i >= n - rem)).collect()
}

/// Keeps items whose publication day is at most the window's length before
/// `now`'s day. Undated items survive only under [`Recency::AnyTime`].
pub fn filter_recency(items: &[NewsItem], recency: Recency, now: DateTime<Utc>) -> Vec<NewsItem> {
    let Some(days) = recency.days() else {
        return items.to_vec();
    };
    let today = now.date_naive();
    items
        .iter()
        .filter(|i| i.published.is_some_and(|p| (today - p.date_naive()).num_days() <= days))
        .cloned()
        .collect()
}

/// Understands relative forms ("3 days ago", "yesterday") and common
/// absolute forms ("Jul 5, 2024", "2024-07-05", RFC 3339, RFC 2822).
pub fn parse_news_date(raw: &str, now: DateTime<Utc>) -> Option<DateTime<Utc>> {
    let s = raw.trim();
    let lower = s.to_ascii_lowercase();
    match lower.as_str() {
        "" => return None,
        "just now" | "now" | "today" => return Some(now),
        "yesterday" => return Some(now - TimeDelta::days(1)),
        _ => {}
    }
    if let Some(rest) = lower.strip_suffix(" ago") {
        let mut parts = rest.split_whitespace();
        let n: i64 = match parts.next()? {
            "a" | "an" => 1,
            num => num.parse().ok()?,
        };
        let unit = parts.next()?.trim_end_matches('s');
        if parts.next().is_some() || n < 0 {
            return None;
        }
        let delta = match unit {
            "second" | "sec" => TimeDelta::seconds(n),
            "minute" | "min" => TimeDelta::minutes(n),
            "hour" | "hr" => TimeDelta::hours(n),
            "day" => TimeDelta::days(n),
            "week" => TimeDelta::weeks(n),
            "month" => TimeDelta::days(30 * n),
            "year" => TimeDelta::days(365 * n),
            _ => return None,
        };
        return now.checked_sub_signed(delta);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    if let Ok(dt) = DateTime::parse_from_rfc2822(s) {
        return Some(dt.with_timezone(&Utc));
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Some(dt.and_utc());
    }
    const DATE_FORMATS: &[&str] = &["%b %d, %Y", "%B %d, %Y", "%d %b %Y", "%d %B %Y", "%Y-%m-%d", "%m/%d/%Y"];
    DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc())
}

#[async_trait]
pub trait NewsSearch: Send + Sync {
    fn name(&self) -> &str;

    async fn search(&self, query: &str, num: usize) -> Result<Vec<SearchHit>, NewsError>;
}

#[derive(Deserialize)]
struct SerperResponse {
    #[serde(default)]
    news: Vec<SearchHit>,
}

/// Serper-style news search: `POST {base}/news` with an `X-API-KEY` header.
pub struct SerperSearch {
    base_url: String,
    api_key: String,
    client: reqwest::Client,
}

impl SerperSearch {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("default TLS backend available"),
        }
    }
}

/// Parses a Serper news response body.
pub fn parse_serper(json: &str) -> Result<Vec<SearchHit>, NewsError> {
    serde_json::from_str::<SerperResponse>(json)
        .map(|r| r.news)
        .map_err(|e| NewsError::UpstreamUnavailable(format!("unreadable search response: {e}")))
}

#[async_trait]
impl NewsSearch for SerperSearch {
    fn name(&self) -> &str {
        "serper"
    }

    async fn search(&self, query: &str, num: usize) -> Result<Vec<SearchHit>, NewsError> {
        let unavailable = |e: reqwest::Error| NewsError::UpstreamUnavailable(e.without_url().to_string());
        let resp = self
            .client
            .post(format!("{}/news", self.base_url))
            .header("X-API-KEY", &self.api_key)
            .json(&serde_json::json!({ "q": query, "num": num }))
            .send()
            .await
            .map_err(unavailable)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(NewsError::UpstreamUnavailable(format!("search returned HTTP {}", status.as_u16())));
        }
        let body = resp.text().await.map_err(unavailable)?;
        parse_serper(&body)
    }
}

#[derive(Deserialize)]
struct FixtureIndex {
    recorded_at: Option<DateTime<Utc>>,
    #[serde(default)]
    search: Vec<FixtureEntry>,
}

#[derive(Deserialize)]
struct FixtureEntry {
    query: String,
    file: String,
}

/// Canned hits keyed by query. A query with no exact entry falls back to
/// the longest recorded query that prefixes it, so keyword-extended
/// searches still find their topic. Anything else returns nothing.
#[derive(Debug, Default)]
pub struct FixtureSearch {
    hits: HashMap<String, Vec<SearchHit>>,
    failing: Vec<String>,
    outage: bool,
    recorded_at: Option<DateTime<Utc>>,
    calls: AtomicUsize,
}

impl FixtureSearch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_hits(mut self, query: &str, hits: Vec<SearchHit>) -> Self {
        self.hits.insert(query.to_string(), hits);
        self
    }

    /// Reads a Serper-format response body for `query`.
    pub fn with_serper_json(self, query: &str, json: &str) -> Result<Self, NewsError> {
        Ok(self.with_hits(query, parse_serper(json)?))
    }

    /// Reads `index.toml` (`recorded_at`, `[[search]] query/file`) from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, NewsError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| NewsError::UpstreamUnavailable(format!("fixture {name}: {e}")))
        };
        let index: FixtureIndex = toml::from_str(&read("index.toml")?)
            .map_err(|e| NewsError::UpstreamUnavailable(format!("fixture index: {e}")))?;
        let mut f = Self { recorded_at: index.recorded_at, ..Self::default() };
        for e in index.search {
            f = f.with_serper_json(&e.query, &read(&e.file)?)?;
        }
        Ok(f)
    }

    /// When the responses were captured; relative dates assume this instant.
    pub fn recorded_at(&self) -> Option<DateTime<Utc>> {
        self.recorded_at
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.hits.keys().map(String::as_str)
    }

    pub fn with_failure(mut self, query: &str) -> Self {
        self.failing.push(query.to_string());
        self
    }

    /// Every search fails.
    pub fn with_outage(mut self) -> Self {
        self.outage = true;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl NewsSearch for FixtureSearch {
    fn name(&self) -> &str {
        "fixture"
    }

    async fn search(&self, query: &str, num: usize) -> Result<Vec<SearchHit>, NewsError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.outage || self.failing.iter().any(|q| q == query) {
            return Err(NewsError::UpstreamUnavailable("simulated search outage".into()));
        }
        let mut hits = match self.hits.get(query) {
            Some(h) => h.clone(),
            None => self
                .hits
                .iter()
                .filter(|(k, _)| query.starts_with(k.as_str()) && query[k.len()..].starts_with(' '))
                .max_by_key(|(k, _)| k.len())
                .map(|(_, h)| h.clone())
                .unwrap_or_default(),
        };
        hits.truncate(num);
        Ok(hits)
    }
}

fn cap_words(text: &str, cap: usize) -> String {
    text.split_whitespace().take(cap).collect::<Vec<_>>().join(" ")
}

fn clip_chars(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

pub fn default_summary_prompt() -> PromptTemplate {
    PromptTemplate::parse(include_str!("../prompts/news_summary.txt")).expect("bundled prompt is valid")
}

pub struct NewsService {
    search: Arc<dyn NewsSearch>,
    extractor: Arc<dyn ContentExtractor>,
    gateway: Arc<LlmGateway>,
    model: ModelId,
    prompt: PromptTemplate,
    word_cap: usize,
    topics: Vec<String>,
}

impl NewsService {
    pub fn new(
        search: Arc<dyn NewsSearch>,
        extractor: Arc<dyn ContentExtractor>,
        gateway: Arc<LlmGateway>,
        model: ModelId,
    ) -> Self {
        Self {
            search,
            extractor,
            gateway,
            model,
            prompt: default_summary_prompt(),
            word_cap: DEFAULT_WORD_CAP,
            topics: default_topics(),
        }
    }

    pub fn with_prompt(mut self, prompt: PromptTemplate) -> Self {
        self.prompt = prompt;
        self
    }

    pub fn with_word_cap(mut self, cap: usize) -> Self {
        self.word_cap = cap.max(1);
        self
    }

    /// Allowed topics; an empty list accepts any topic.
    pub fn with_topics(mut self, topics: Vec<String>) -> Self {
        self.topics = topics;
        self
    }

    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    pub fn model(&self) -> &ModelId {
        &self.model
    }

    pub fn search_name(&self) -> &str {
        self.search.name()
    }

    /// Extracts the page and summarizes it within the word cap.
    pub async fn summarize_article(&self, item: &NewsItem) -> Result<NewsSummary, NewsError> {
        let page = self
            .extractor
            .extract(&item.url)
            .await
            .map_err(|e| NewsError::FetchFailed { url: item.url.clone(), detail: e.to_string() })?;
        let cap = self.word_cap.to_string();
        let system = self.prompt.render_pairs(&[("word_cap", &cap)]).map_err(LlmError::from)?;
        let raw = self.gateway.run_chain(&self.model, &system, clip_chars(&page.text, MAX_ARTICLE_CHARS)).await?;
        let summary = cap_words(&raw, self.word_cap);
        if summary.is_empty() {
            return Err(NewsError::EmptySummary(item.url.clone()));
        }
        let title = if item.title.is_empty() { page.title.unwrap_or_else(|| item.url.clone()) } else { item.title.clone() };
        Ok(NewsSummary { title, url: item.url.clone(), summary })
    }

    async fn run_topic(
        &self,
        topic: &str,
        count: u32,
        params: &NewsParams,
        now: DateTime<Utc>,
    ) -> Result<Vec<NewsSummary>, NewsError> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let query = build_query(topic, &params.keywords);
        let hits = self.search.search(&query, count as usize * OVERFETCH).await?;
        let items: Vec<NewsItem> = hits
            .iter()
            .map(|h| NewsItem::from_hit(h, now))
            .filter(|i| !i.url.is_empty())
            .collect();
        let mut out = Vec::new();
        for item in filter_recency(&items, params.recency, now) {
            if out.len() as u32 >= count {
                break;
            }
            match self.summarize_article(&item).await {
                Ok(s) => out.push(s),
                Err(e) => tracing::warn!(topic, url = %item.url, error = %e, "skipping article"),
            }
        }
        Ok(out)
    }

    /// Runs every topic concurrently; results keep the topic order, and
    /// shortfall warnings follow all results.
    pub async fn gather_news(&self, params: &NewsParams, now: DateTime<Utc>) -> Result<NewsReport, NewsError> {
        params.validate(&self.topics)?;
        let counts = allocate_counts(params.total, params.topics.len());
        let runs = params
            .topics
            .iter()
            .zip(&counts)
            .map(|(topic, &count)| self.run_topic(topic.trim(), count, params, now));
        let outcomes = futures::future::join_all(runs).await;

        let searched = counts.iter().filter(|&&c| c > 0).count();
        let failed: Vec<&NewsError> = outcomes
            .iter()
            .zip(&counts)
            .filter(|(_, &c)| c > 0)
            .filter_map(|(o, _)| o.as_ref().err())
            .collect();
        if searched > 0 && failed.len() == searched {
            return Err(NewsError::UpstreamUnavailable(failed[0].to_string()));
        }

        let mut summaries = Vec::new();
        let mut warnings = Vec::new();
        for ((topic, &count), outcome) in params.topics.iter().zip(&counts).zip(outcomes) {
            let topic = topic.trim().to_string();
            let got = match outcome {
                Ok(s) => s,
                Err(e) => {
                    tracing::warn!(topic, error = %e, "topic search failed");
                    Vec::new()
                }
            };
            if (got.len() as u32) < count {
                warnings.push(format!(
                    "Only {} of {} requested {} articles could be found for the selected filters.",
                    got.len(),
                    count,
                    topic
                ));
            }
            summaries.push(TopicResults { topic, allocated: count, summaries: got });
        }
        Ok(NewsReport { summaries, warnings })
    }
}

pub fn default_topics() -> Vec<String> {
    [
        "Dermatology",
        "Cardiology",
        "Rheumatology",
        "Immunology",
        "Oncology",
        "Neurology",
        "Endocrinology",
        "Gastroenterology",
        "Pulmonology",
        "Nephrology",
        "Hematology",
        "Infectious Disease",
        "Pediatrics",
        "Psychiatry",
        "Radiology",
        "Emergency Medicine",
        "Family Medicine",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Plain-text rendering: a `<Topic> Results:` heading per topic, then
/// TITLE / LINK / SUMMARY blocks, then any warnings.
pub fn format_blocks(report: &NewsReport) -> String {
    let mut out = String::new();
    for group in &report.summaries {
        out.push_str(&format!("{} Results:\n\n", group.topic));
        for s in &group.summaries {
            out.push_str(&format!("TITLE: {}\nLINK: {}\nSUMMARY: {}\n\n", s.title, s.url, s.summary));
        }
    }
    for w in &report.warnings {
        out.push_str(&format!("WARNING: {w}\n"));
    }
    out
}
