//! PubMed search over NCBI E-utilities, EFetch XML parsing, PMC full text,
//! and chat-with-paper request assembly.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use async_trait::async_trait;
use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use crate::extract::{ContentExtractor, ExtractError};
use crate::llm::{
    ChatMessage, ChatTranscript, CompletionRequest, LlmError, LlmGateway, ModelId, PromptTemplate,
};

pub const EUTILS_BASE_URL: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils";
pub const MAX_RETMAX: u32 = 100;
pub const DEFAULT_RETMAX: u32 = 10;

const CACHE_CAP: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PubmedError {
    #[error("invalid search: {0}")]
    InvalidParams(String),
    #[error("invalid identifier `{0}`")]
    InvalidId(String),
    #[error("at least one PMID is required")]
    EmptyPmidList,
    #[error("PubMed unavailable: {0}")]
    UpstreamUnavailable(String),
    #[error("unexpected PubMed response: {0}")]
    MalformedResponse(String),
    #[error("malformed XML at line {line}, column {column}: {detail}")]
    MalformedXml { line: u32, column: u32, detail: String },
    #[error("article {0} was not found")]
    NotFound(String),
    #[error("article {0} is not archived on PubMed Central")]
    NotPmcEligible(String),
    #[error("could not extract full text for {pmcid}: {detail}")]
    ExtractionFailed { pmcid: String, detail: String },
    #[error("paper text ({chars} characters) does not fit the model context: {detail}")]
    ContextTooLong { chars: usize, detail: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pmid(String);

impl Pmid {
    pub fn parse(s: &str) -> Result<Self, PubmedError> {
        let s = s.trim();
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PubmedError::InvalidId(s.to_string()));
        }
        Ok(Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Pmid {
    type Error = PubmedError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<Pmid> for String {
    fn from(value: Pmid) -> Self {
        value.0
    }
}

impl fmt::Display for Pmid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pmcid(String);

impl Pmcid {
    /// Accepts `PMC123` in any letter case; a bare number is not accepted.
    pub fn parse(s: &str) -> Result<Self, PubmedError> {
        let s = s.trim();
        let digits = s.get(..3).filter(|p| p.eq_ignore_ascii_case("PMC")).map(|_| &s[3..]);
        match digits {
            Some(d) if !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) => Ok(Self(format!("PMC{d}"))),
            _ => Err(PubmedError::InvalidId(s.to_string())),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Pmcid {
    type Error = PubmedError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<Pmcid> for String {
    fn from(value: Pmcid) -> Self {
        value.0
    }
}

impl fmt::Display for Pmcid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn pubmed_url(pmid: &Pmid) -> String {
    format!("https://pubmed.ncbi.nlm.nih.gov/{pmid}/")
}

pub fn pmc_full_text_url(pmcid: &Pmcid) -> String {
    format!("https://pmc.ncbi.nlm.nih.gov/articles/{pmcid}/")
}

/// PMC's standard PDF path. PMC redirects it to the actual file name, so it
/// is a best-effort link.
pub fn pmc_pdf_url(pmcid: &Pmcid) -> String {
    format!("{}pdf/", pmc_full_text_url(pmcid))
}

/// Recovers the PMCID from a PMC article URL.
pub fn pmcid_from_url(url: &str) -> Option<Pmcid> {
    let parsed = url::Url::parse(url).ok()?;
    let mut segs = parsed.path_segments()?;
    while let Some(seg) = segs.next() {
        if seg == "articles" {
            return segs.next().and_then(|s| Pmcid::parse(s).ok());
        }
    }
    None
}

fn default_mindate() -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchParams {
    pub term: String,
    pub retmax: u32,
    pub mindate: NaiveDate,
    pub maxdate: NaiveDate,
}

impl SearchParams {
    /// Defaults: 10 results, 2015-01-01 through today.
    pub fn new(term: impl Into<String>) -> Self {
        Self {
            term: term.into(),
            retmax: DEFAULT_RETMAX,
            mindate: default_mindate(),
            maxdate: chrono::Utc::now().date_naive(),
        }
    }

    pub fn validate(&self) -> Result<(), PubmedError> {
        if self.term.trim().is_empty() {
            return Err(PubmedError::InvalidParams("search term is empty".into()));
        }
        if !(1..=MAX_RETMAX).contains(&self.retmax) {
            return Err(PubmedError::InvalidParams(format!("retmax must be between 1 and {MAX_RETMAX}")));
        }
        if self.mindate > self.maxdate {
            return Err(PubmedError::InvalidParams("mindate is after maxdate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleMetadata {
    pub pmid: Pmid,
    pub title: String,
    /// "Family Given" per author, in listed order.
    pub authors: Vec<String>,
    pub year: Option<i32>,
    pub journal: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub pmcid: Option<Pmcid>,
    pub doi: Option<String>,
    pub pubmed_url: String,
}

impl ArticleMetadata {
    pub fn pmc_eligible(&self) -> bool {
        self.pmcid.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullText {
    pub pmcid: Pmcid,
    pub text: String,
    pub source_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EutilsRequest {
    ESearch(SearchParams),
    EFetch(Vec<Pmid>),
}

#[async_trait]
pub trait EutilsTransport: Send + Sync {
    fn name(&self) -> &str;

    /// Raw response body: JSON for ESearch, XML for EFetch.
    async fn send(&self, request: &EutilsRequest) -> Result<String, PubmedError>;
}

/// Live E-utilities over HTTPS, throttled to 3 requests per second, or 10
/// with an API key. One instance should be shared process-wide.
pub struct HttpTransport {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::Client,
    next_slot: tokio::sync::Mutex<Instant>,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.filter(|k| !k.is_empty()),
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(30))
                .user_agent(concat!("meditools/", env!("CARGO_PKG_VERSION")))
                .build()
                .expect("default TLS backend available"),
            next_slot: tokio::sync::Mutex::new(Instant::now()),
        }
    }

    pub fn min_interval(&self) -> Duration {
        if self.api_key.is_some() {
            Duration::from_millis(100)
        } else {
            Duration::from_millis(334)
        }
    }

    async fn throttle(&self) {
        let mut next = self.next_slot.lock().await;
        let now = Instant::now();
        if *next > now {
            tokio::time::sleep_until(*next).await;
        }
        *next = Instant::now() + self.min_interval();
    }
}

#[async_trait]
impl EutilsTransport for HttpTransport {
    fn name(&self) -> &str {
        "eutils"
    }

    async fn send(&self, request: &EutilsRequest) -> Result<String, PubmedError> {
        let mut query: Vec<(&str, String)> = vec![("db", "pubmed".into())];
        let endpoint = match request {
            EutilsRequest::ESearch(p) => {
                query.extend([
                    ("term", p.term.clone()),
                    ("retmax", p.retmax.to_string()),
                    ("retmode", "json".into()),
                    ("sort", "relevance".into()),
                    ("datetype", "pdat".into()),
                    ("mindate", p.mindate.format("%Y/%m/%d").to_string()),
                    ("maxdate", p.maxdate.format("%Y/%m/%d").to_string()),
                ]);
                "esearch.fcgi"
            }
            EutilsRequest::EFetch(ids) => {
                let ids: Vec<&str> = ids.iter().map(Pmid::as_str).collect();
                query.extend([("id", ids.join(",")), ("retmode", "xml".into())]);
                "efetch.fcgi"
            }
        };
        if let Some(k) = &self.api_key {
            query.push(("api_key", k.clone()));
        }
        self.throttle().await;
        let unavailable = |e: reqwest::Error| PubmedError::UpstreamUnavailable(e.without_url().to_string());
        let resp = self
            .client
            .get(format!("{}/{endpoint}", self.base_url))
            .query(&query)
            .send()
            .await
            .map_err(unavailable)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(PubmedError::UpstreamUnavailable(format!("{endpoint} returned HTTP {}", status.as_u16())));
        }
        resp.text().await.map_err(unavailable)
    }
}

#[derive(Deserialize)]
struct FixtureIndex {
    #[serde(default)]
    search: Vec<SearchFixture>,
    #[serde(default)]
    fetch: Vec<FetchFixture>,
}

#[derive(Deserialize)]
struct SearchFixture {
    term: String,
    file: String,
}

#[derive(Deserialize)]
struct FetchFixture {
    pmids: Vec<String>,
    file: String,
}

fn set_key(ids: &[Pmid]) -> Vec<Pmid> {
    let mut v = ids.to_vec();
    v.sort();
    v.dedup();
    v
}

/// Serves recorded responses. Searches for unrecorded terms return an empty
/// id list; fetches of unrecorded id sets fail as unavailable.
#[derive(Debug, Default)]
pub struct FixtureTransport {
    searches: HashMap<String, String>,
    fetches: HashMap<Vec<Pmid>, String>,
    calls: AtomicUsize,
}

impl FixtureTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_search(mut self, term: &str, json: impl Into<String>) -> Self {
        self.searches.insert(term.trim().to_lowercase(), json.into());
        self
    }

    pub fn with_fetch(mut self, pmids: &[Pmid], xml: impl Into<String>) -> Self {
        self.fetches.insert(set_key(pmids), xml.into());
        self
    }

    /// Reads `index.toml` in `dir`:
    ///
    /// ```toml
    /// [[search]]
    /// term = "artificial intelligence haematology"
    /// file = "esearch_ai_haematology.json"
    ///
    /// [[fetch]]
    /// pmids = ["35781249"]
    /// file = "efetch_35781249.xml"
    /// ```
    pub fn load_dir(dir: &Path) -> Result<Self, PubmedError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| PubmedError::UpstreamUnavailable(format!("fixture {name}: {e}")))
        };
        let index: FixtureIndex = toml::from_str(&read("index.toml")?)
            .map_err(|e| PubmedError::MalformedResponse(format!("fixture index: {e}")))?;
        let mut t = Self::new();
        for s in index.search {
            t = t.with_search(&s.term, read(&s.file)?);
        }
        for f in index.fetch {
            let ids = f.pmids.iter().map(|p| Pmid::parse(p)).collect::<Result<Vec<_>, _>>()?;
            t = t.with_fetch(&ids, read(&f.file)?);
        }
        Ok(t)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl EutilsTransport for FixtureTransport {
    fn name(&self) -> &str {
        "fixture"
    }

    async fn send(&self, request: &EutilsRequest) -> Result<String, PubmedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match request {
            EutilsRequest::ESearch(p) => Ok(self
                .searches
                .get(&p.term.trim().to_lowercase())
                .cloned()
                .unwrap_or_else(|| r#"{"esearchresult":{"count":"0","retmax":"0","retstart":"0","idlist":[]}}"#.into())),
            EutilsRequest::EFetch(ids) => self
                .fetches
                .get(&set_key(ids))
                .cloned()
                .ok_or_else(|| PubmedError::UpstreamUnavailable("no recorded EFetch response for these ids".into())),
        }
    }
}

#[derive(Deserialize)]
struct ESearchEnvelope {
    esearchresult: ESearchResult,
}

#[derive(Deserialize)]
struct ESearchResult {
    #[serde(default)]
    idlist: Vec<String>,
    #[serde(default, rename = "ERROR")]
    error: Option<String>,
}

/// Extracts the ordered id list from an ESearch JSON body.
pub fn parse_esearch(json: &str) -> Result<Vec<Pmid>, PubmedError> {
    let env: ESearchEnvelope =
        serde_json::from_str(json).map_err(|e| PubmedError::MalformedResponse(format!("ESearch JSON: {e}")))?;
    if let Some(err) = env.esearchresult.error {
        return Err(PubmedError::MalformedResponse(format!("ESearch error: {err}")));
    }
    env.esearchresult
        .idlist
        .iter()
        .map(|id| Pmid::parse(id).map_err(|_| PubmedError::MalformedResponse(format!("non-numeric PMID `{id}`"))))
        .collect()
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn path<'a, 'i>(node: roxmltree::Node<'a, 'i>, names: &[&str]) -> Option<roxmltree::Node<'a, 'i>> {
    names.iter().try_fold(node, |n, name| child(n, name))
}

/// All descendant text, whitespace-collapsed. Keeps inline markup such as
/// `<i>` or `<sup>` content.
fn text_of(node: roxmltree::Node<'_, '_>) -> String {
    let raw: String = node.descendants().filter(|n| n.is_text()).filter_map(|n| n.text()).collect();
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn leading_year(s: &str) -> Option<i32> {
    let digits: String = s.trim().chars().take(4).collect();
    (digits.len() == 4 && digits.bytes().all(|b| b.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

fn author_name(author: roxmltree::Node<'_, '_>) -> Option<String> {
    if let Some(c) = child(author, "CollectiveName") {
        return Some(text_of(c)).filter(|s| !s.is_empty());
    }
    let last = child(author, "LastName").map(text_of).unwrap_or_default();
    let given = child(author, "ForeName")
        .or_else(|| child(author, "Initials"))
        .map(text_of)
        .unwrap_or_default();
    let name = format!("{last} {given}").trim().to_string();
    (!name.is_empty()).then_some(name)
}

fn parse_one(article: roxmltree::Node<'_, '_>) -> Result<ArticleMetadata, PubmedError> {
    let citation = child(article, "MedlineCitation")
        .ok_or_else(|| PubmedError::MalformedResponse("PubmedArticle without MedlineCitation".into()))?;
    let pmid_text = child(citation, "PMID")
        .map(text_of)
        .ok_or_else(|| PubmedError::MalformedResponse("article without PMID".into()))?;
    let pmid = Pmid::parse(&pmid_text).map_err(|_| PubmedError::MalformedResponse(format!("bad PMID `{pmid_text}`")))?;
    let art = child(citation, "Article");

    let title = art.and_then(|a| child(a, "ArticleTitle")).map(text_of).unwrap_or_default();
    let journal = art.and_then(|a| path(a, &["Journal", "Title"])).map(text_of).unwrap_or_default();
    let authors = art
        .and_then(|a| child(a, "AuthorList"))
        .map(|list| list.children().filter(|c| c.has_tag_name("Author")).filter_map(author_name).collect())
        .unwrap_or_default();

    let pub_date = art.and_then(|a| path(a, &["Journal", "JournalIssue", "PubDate"]));
    let year = pub_date
        .and_then(|d| child(d, "Year").or_else(|| child(d, "MedlineDate")))
        .and_then(|n| leading_year(&text_of(n)))
        .or_else(|| {
            art.and_then(|a| path(a, &["ArticleDate", "Year"]))
                .and_then(|n| leading_year(&text_of(n)))
        });

    let abstract_text = art
        .and_then(|a| child(a, "Abstract"))
        .map(|abs| {
            abs.children()
                .filter(|c| c.has_tag_name("AbstractText"))
                .map(|p| match p.attribute("Label") {
                    Some(label) => format!("{label}: {}", text_of(p)),
                    None => text_of(p),
                })
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join("\n")
        })
        .unwrap_or_default();

    let mut pmcid = None;
    let mut doi = None;
    if let Some(ids) = child(article, "PubmedData").and_then(|d| child(d, "ArticleIdList")) {
        for id in ids.children().filter(|c| c.has_tag_name("ArticleId")) {
            match id.attribute("IdType") {
                Some("pmc") => pmcid = Pmcid::parse(&text_of(id)).ok(),
                Some("doi") => doi = Some(text_of(id)).filter(|s| !s.is_empty()),
                _ => {}
            }
        }
    }

    Ok(ArticleMetadata {
        pubmed_url: pubmed_url(&pmid),
        pmid,
        title,
        authors,
        year,
        journal,
        abstract_text,
        pmcid,
        doi,
    })
}

/// Parses an EFetch `PubmedArticleSet` document, one record per
/// `PubmedArticle`, in document order.
pub fn parse_articles(xml: &str) -> Result<Vec<ArticleMetadata>, PubmedError> {
    let opts = roxmltree::ParsingOptions { allow_dtd: true, ..Default::default() };
    let doc = roxmltree::Document::parse_with_options(xml, opts).map_err(|e| {
        let pos = e.pos();
        PubmedError::MalformedXml { line: pos.row, column: pos.col, detail: e.to_string() }
    })?;
    let root = doc.root_element();
    if !root.has_tag_name("PubmedArticleSet") {
        let pos = doc.text_pos_at(root.range().start);
        return Err(PubmedError::MalformedXml {
            line: pos.row,
            column: pos.col,
            detail: format!("expected PubmedArticleSet, found {}", root.tag_name().name()),
        });
    }
    root.children().filter(|c| c.has_tag_name("PubmedArticle")).map(parse_one).collect()
}

/// A PMC-eligible article chosen for chat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperSelection {
    pub pmid: Pmid,
    pub pmcid: Pmcid,
    pub title: String,
    pub model: ModelId,
    pub pmc_url: String,
    pub pdf_url: String,
}

impl PaperSelection {
    pub fn new(article: &ArticleMetadata, model: ModelId) -> Result<Self, PubmedError> {
        let pmcid = article
            .pmcid
            .clone()
            .ok_or_else(|| PubmedError::NotPmcEligible(article.pmid.to_string()))?;
        Ok(Self {
            pmid: article.pmid.clone(),
            pmc_url: pmc_full_text_url(&pmcid),
            pdf_url: pmc_pdf_url(&pmcid),
            pmcid,
            title: article.title.clone(),
            model,
        })
    }
}

pub fn default_paper_prompt() -> PromptTemplate {
    PromptTemplate::parse(include_str!("../prompts/paper_chat.txt")).expect("bundled prompt is valid")
}

/// System message with the full text, then `history`, then the question.
pub fn build_paper_chat(
    gateway: &LlmGateway,
    prompt: &PromptTemplate,
    model: &ModelId,
    title: &str,
    fulltext: &FullText,
    question: &str,
    history: &ChatTranscript,
) -> Result<CompletionRequest, PubmedError> {
    if question.trim().is_empty() {
        return Err(PubmedError::InvalidParams("question is empty".into()));
    }
    let system = prompt
        .render_pairs(&[("title", title), ("full_text", &fulltext.text)])
        .map_err(LlmError::from)?;
    let mut t = ChatTranscript::with_system(system);
    for m in history.messages() {
        t.push(m.clone())?;
    }
    t.push_user(question);
    Ok(gateway.request(model.clone(), t))
}

/// Runs one chat turn about a paper; on success appends the question and
/// answer to `history`.
pub async fn ask_paper(
    gateway: &LlmGateway,
    prompt: &PromptTemplate,
    selection: &PaperSelection,
    fulltext: &FullText,
    history: &mut ChatTranscript,
    question: &str,
) -> Result<ChatMessage, PubmedError> {
    let req = build_paper_chat(gateway, prompt, &selection.model, &selection.title, fulltext, question, history)?;
    let reply = gateway.complete_chat(&req).await.map_err(|e| match e {
        LlmError::ContextTooLong { detail, .. } => {
            PubmedError::ContextTooLong { chars: fulltext.text.chars().count(), detail }
        }
        other => PubmedError::Llm(other),
    })?;
    history.push_user(question);
    history.push(reply.clone())?;
    Ok(reply)
}

/// Search/fetch client with an EFetch cache keyed by PMID set and a
/// per-article metadata cache.
pub struct PubmedClient {
    transport: Arc<dyn EutilsTransport>,
    extractor: Arc<dyn ContentExtractor>,
    xml_cache: RwLock<HashMap<Vec<Pmid>, Arc<str>>>,
    articles: RwLock<HashMap<Pmid, ArticleMetadata>>,
}

impl PubmedClient {
    pub fn new(transport: Arc<dyn EutilsTransport>, extractor: Arc<dyn ContentExtractor>) -> Self {
        Self {
            transport,
            extractor,
            xml_cache: RwLock::default(),
            articles: RwLock::default(),
        }
    }

    pub fn transport_name(&self) -> &str {
        self.transport.name()
    }

    pub async fn search_pmids(&self, params: &SearchParams) -> Result<Vec<Pmid>, PubmedError> {
        params.validate()?;
        let body = self.transport.send(&EutilsRequest::ESearch(params.clone())).await?;
        let mut ids = parse_esearch(&body)?;
        ids.truncate(params.retmax as usize);
        Ok(ids)
    }

    pub async fn fetch_article_xml(&self, pmids: &[Pmid]) -> Result<Arc<str>, PubmedError> {
        if pmids.is_empty() {
            return Err(PubmedError::EmptyPmidList);
        }
        let k = set_key(pmids);
        if let Some(hit) = self.xml_cache.read().unwrap_or_else(|p| p.into_inner()).get(&k) {
            return Ok(hit.clone());
        }
        let xml: Arc<str> = self.transport.send(&EutilsRequest::EFetch(k.clone())).await?.into();
        let mut cache = self.xml_cache.write().unwrap_or_else(|p| p.into_inner());
        if cache.len() >= CACHE_CAP {
            cache.clear();
        }
        Ok(cache.entry(k).or_insert(xml).clone())
    }

    /// Search, fetch and parse. Articles come back in search order.
    pub async fn search_articles(&self, params: &SearchParams) -> Result<Vec<ArticleMetadata>, PubmedError> {
        let ids = self.search_pmids(params).await?;
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let xml = self.fetch_article_xml(&ids).await?;
        let parsed = parse_articles(&xml)?;
        let mut by_id: HashMap<Pmid, ArticleMetadata> = parsed.into_iter().map(|a| (a.pmid.clone(), a)).collect();
        let ordered: Vec<ArticleMetadata> = ids.iter().filter_map(|id| by_id.remove(id)).collect();
        let mut cache = self.articles.write().unwrap_or_else(|p| p.into_inner());
        if cache.len() >= CACHE_CAP * 10 {
            cache.clear();
        }
        for a in &ordered {
            cache.insert(a.pmid.clone(), a.clone());
        }
        Ok(ordered)
    }

    /// Metadata for one article, from cache or a single-id EFetch.
    pub async fn article(&self, pmid: &Pmid) -> Result<ArticleMetadata, PubmedError> {
        if let Some(a) = self.articles.read().unwrap_or_else(|p| p.into_inner()).get(pmid) {
            return Ok(a.clone());
        }
        let xml = self.fetch_article_xml(std::slice::from_ref(pmid)).await?;
        let found = parse_articles(&xml)?
            .into_iter()
            .find(|a| &a.pmid == pmid)
            .ok_or_else(|| PubmedError::NotFound(pmid.to_string()))?;
        self.articles.write().unwrap_or_else(|p| p.into_inner()).insert(pmid.clone(), found.clone());
        Ok(found)
    }

    pub async fn fetch_full_text(&self, pmcid: &Pmcid) -> Result<FullText, PubmedError> {
        let url = pmc_full_text_url(pmcid);
        let failed = |detail: String| PubmedError::ExtractionFailed { pmcid: pmcid.to_string(), detail };
        let page = self.extractor.extract(&url).await.map_err(|e| match e {
            ExtractError::Unreachable { detail, .. } => PubmedError::UpstreamUnavailable(detail),
            ExtractError::Status { status, .. } if status >= 500 => {
                PubmedError::UpstreamUnavailable(format!("PMC returned HTTP {status}"))
            }
            other => failed(other.to_string()),
        })?;
        if page.text.trim().is_empty() {
            return Err(failed("extractor returned no text".into()));
        }
        Ok(FullText { pmcid: pmcid.clone(), text: page.text, source_url: url })
    }
}

/// Publication years of `articles` that fall outside the search window.
pub fn years_outside_window(articles: &[ArticleMetadata], params: &SearchParams) -> Vec<(Pmid, i32)> {
    let (lo, hi) = (params.mindate.year(), params.maxdate.year());
    articles
        .iter()
        .filter_map(|a| a.year.filter(|y| *y < lo || *y > hi).map(|y| (a.pmid.clone(), y)))
        .collect()
}
