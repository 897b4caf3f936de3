use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use meditools_core::extract::{ExtractError, MockExtractor};
use meditools_core::llm::{LlmError, LlmGateway, MockProvider, MockSpeech, ModelId, ModelRegistry, ProviderRoute};
use meditools_core::news::{
    allocate_counts, build_query, filter_recency, format_blocks, FixtureSearch, NewsError, NewsItem, NewsParams,
    NewsReport, NewsSearch, NewsService, Recency,
};
use proptest::prelude::*;

const TOPICS: [&str; 5] = ["Dermatology", "Cardiology", "Immunology", "Rheumatology", "Oncology"];

fn dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/news")
}

fn fixtures() -> FixtureSearch {
    FixtureSearch::load_dir(&dir()).unwrap()
}

fn recorded() -> DateTime<Utc> {
    fixtures().recorded_at().unwrap()
}

fn gateway(provider: MockProvider) -> Arc<LlmGateway> {
    let reg = ModelRegistry::from_toml_str("[[model]]\nid = \"mock-summarizer\"\ndisplay_name = \"s\"\nroute = \"mock\"\n")
        .unwrap();
    Arc::new(LlmGateway::new(reg, Arc::new(MockSpeech::new(""))).with_provider(ProviderRoute::Mock, Arc::new(provider)))
}

fn service(search: FixtureSearch, extractor: MockExtractor, provider: MockProvider) -> NewsService {
    NewsService::new(
        Arc::new(search),
        Arc::new(extractor),
        gateway(provider),
        ModelId::new("mock-summarizer").unwrap(),
    )
}

fn pages() -> MockExtractor {
    MockExtractor::new().with_default_text("Clinicians reported a change in practice after the new results were published.")
}

fn params(topics: &[&str], recency: Recency, total: u32) -> NewsParams {
    NewsParams { topics: topics.iter().map(|t| t.to_string()).collect(), keywords: vec![], recency, total }
}

fn count(report: &NewsReport) -> usize {
    report.summaries.iter().map(|g| g.summaries.len()).sum()
}

#[tokio::test]
async fn full_allocation_gives_seven_summaries() {
    let svc = service(fixtures(), pages(), MockProvider::echo());
    let p = params(&["Dermatology", "Cardiology", "Immunology"], Recency::Week1, 7);
    let report = svc.gather_news(&p, recorded()).await.unwrap();
    assert_eq!(count(&report), 7);
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    let order: Vec<&str> = report.summaries.iter().map(|g| g.topic.as_str()).collect();
    assert_eq!(order, ["Dermatology", "Cardiology", "Immunology"]);
    let sizes: Vec<usize> = report.summaries.iter().map(|g| g.summaries.len()).collect();
    assert_eq!(sizes, [2, 2, 3]);
    for s in report.summaries.iter().flat_map(|g| &g.summaries) {
        assert!(!s.title.is_empty() && !s.url.is_empty() && !s.summary.is_empty());
    }
    // retrieval order inside a topic
    let derm: Vec<&str> = report.summaries[0].summaries.iter().map(|s| s.url.as_str()).collect();
    assert_eq!(derm, ["https://news.example.org/dermatology/1", "https://news.example.org/dermatology/2"]);
    // the undated Immunology item is dropped under a bounded window
    assert!(report.summaries[2].summaries.iter().all(|s| !s.url.ends_with("/3")));
}

#[tokio::test]
async fn shortfall_warning_names_topic_and_trails_results() {
    let svc = service(fixtures(), pages(), MockProvider::echo());
    let p = params(&["Dermatology", "Rheumatology"], Recency::Week1, 5);
    let report = svc.gather_news(&p, recorded()).await.unwrap();
    assert_eq!(report.summaries[1].allocated, 3);
    assert_eq!(report.summaries[1].summaries.len(), 1);
    assert_eq!(report.warnings.len(), 1);
    assert!(report.warnings[0].contains("Rheumatology"));
    let text = format_blocks(&report);
    assert!(text.starts_with("Dermatology Results:\n\nTITLE: "));
    assert!(text.contains("Rheumatology Results:\n\nTITLE: Gout flare"));
    let last_summary = text.rfind("SUMMARY:").unwrap();
    assert!(text.find("WARNING:").unwrap() > last_summary);
    assert!(text.trim_end().ends_with("selected filters."));
}

#[tokio::test]
async fn outages() {
    let svc = service(fixtures().with_outage(), pages(), MockProvider::echo());
    let err = svc.gather_news(&params(&["Dermatology", "Cardiology"], Recency::AnyTime, 4), recorded()).await;
    assert!(matches!(err, Err(NewsError::UpstreamUnavailable(_))));

    let partial = fixtures().with_failure(&build_query("Cardiology", &[]));
    let svc = service(partial, pages(), MockProvider::echo());
    let report = svc
        .gather_news(&params(&["Dermatology", "Cardiology"], Recency::AnyTime, 4), recorded())
        .await
        .unwrap();
    assert_eq!(count(&report), 2);
    assert_eq!(report.warnings.len(), 1);
    assert!(report.warnings[0].contains("Cardiology"));
}

#[tokio::test]
async fn unreachable_pages_are_skipped_and_backfilled() {
    let dead = "https://news.example.org/dermatology/1";
    let extractor = pages().with_error(dead, ExtractError::Unreachable { url: dead.into(), detail: "refused".into() });
    let svc = service(fixtures(), extractor, MockProvider::echo());
    let item = NewsItem { title: "x".into(), url: dead.into(), published: None, snippet: String::new() };
    assert!(matches!(svc.summarize_article(&item).await, Err(NewsError::FetchFailed { .. })));

    let report = svc.gather_news(&params(&["Dermatology"], Recency::AnyTime, 3), recorded()).await.unwrap();
    let urls: Vec<&str> = report.summaries[0].summaries.iter().map(|s| s.url.as_str()).collect();
    assert_eq!(urls, ["https://news.example.org/dermatology/2", "https://news.example.org/dermatology/3", "https://news.example.org/dermatology/4"]);
    assert!(report.warnings.is_empty());
}

#[tokio::test]
async fn summaries_respect_word_cap_and_gateway_errors_pass_through() {
    let long = "word ".repeat(400);
    let svc = service(fixtures(), pages(), MockProvider::fixed(long)).with_word_cap(120);
    let item = NewsItem { title: "t".into(), url: "https://news.example.org/x".into(), published: None, snippet: String::new() };
    let s = svc.summarize_article(&item).await.unwrap();
    assert_eq!(s.summary.split_whitespace().count(), 120);

    let failing = MockProvider::failing(LlmError::ProviderUnavailable { provider: "mock".into(), detail: "down".into() });
    let svc = service(fixtures(), pages(), failing);
    assert!(matches!(svc.summarize_article(&item).await, Err(NewsError::Llm(LlmError::ProviderUnavailable { .. }))));
}

#[tokio::test]
async fn keywords_reach_the_search_and_limits_are_enforced() {
    let svc = service(fixtures(), pages(), MockProvider::echo());
    let mut p = params(&["Cardiology"], Recency::AnyTime, 3);
    p.keywords = vec!["stent".into()];
    assert_eq!(count(&svc.gather_news(&p, recorded()).await.unwrap()), 3);
    p.keywords = (0..6).map(|i| format!("k{i}")).collect();
    assert!(matches!(svc.gather_news(&p, recorded()).await, Err(NewsError::InvalidParams(_))));
    assert!(matches!(
        svc.gather_news(&params(&["Cardiology"], Recency::AnyTime, 11), recorded()).await,
        Err(NewsError::InvalidParams(_))
    ));
    assert!(matches!(
        svc.gather_news(&params(&["Astrology"], Recency::AnyTime, 3), recorded()).await,
        Err(NewsError::InvalidParams(_))
    ));
}

#[tokio::test]
async fn fixture_search_truncates_to_the_requested_depth() {
    let f = fixtures();
    let hits = f.search(&build_query("Immunology", &[]), 2).await.unwrap();
    assert_eq!(hits.len(), 2);
    assert!(f.search("unrelated query", 9).await.unwrap().is_empty());
}

async fn fixture_items() -> Vec<NewsItem> {
    let f = fixtures();
    let mut out = Vec::new();
    for t in TOPICS {
        for h in f.search(&build_query(t, &[]), 100).await.unwrap() {
            out.push(NewsItem::from_hit(&h, recorded()));
        }
    }
    out
}

#[test]
fn allocation_anchor() {
    assert_eq!(allocate_counts(7, 3), [2, 2, 3]);
}

proptest! {
    #[test]
    fn allocation_is_balanced(total in 3u32..=10, n in 1usize..=5) {
        let c = allocate_counts(total, n);
        prop_assert_eq!(c.len(), n);
        prop_assert_eq!(c.iter().sum::<u32>(), total);
        prop_assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn recency_windows_nest(offset_hours in -48i64..24 * 60) {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let items = rt.block_on(fixture_items());
        let now = recorded() + TimeDelta::hours(offset_hours);
        let urls = |r| filter_recency(&items, r, now).into_iter().map(|i| i.url).collect::<BTreeSet<_>>();
        let (w1, w2, m1, any) = (urls(Recency::Week1), urls(Recency::Week2), urls(Recency::Month1), urls(Recency::AnyTime));
        prop_assert!(w1.is_subset(&w2));
        prop_assert!(w2.is_subset(&m1));
        prop_assert!(m1.is_subset(&any));
        prop_assert_eq!(any.len(), items.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn warnings_are_complete(
        picks in proptest::sample::subsequence(TOPICS.to_vec(), 1..=5),
        total in 3u32..=10,
        recency in proptest::sample::select(Recency::ALL.to_vec()),
        dead in proptest::collection::vec(any::<bool>(), 30),
        failing_topic in proptest::option::of(0usize..5),
        offset_days in 0i64..40,
    ) {
        let mut extractor = pages();
        let mut n = 0;
        for t in TOPICS {
            for i in 1..=6 {
                if dead[n % dead.len()] {
                    let url = format!("https://news.example.org/{}/{i}", t.to_lowercase());
                    extractor = extractor.with_error(&url, ExtractError::Empty(url.clone()));
                }
                n += 1;
            }
        }
        let mut search = fixtures();
        if let Some(f) = failing_topic {
            search = search.with_failure(&build_query(TOPICS[f], &[]));
        }
        let svc = service(search, extractor, MockProvider::echo());
        let p = params(&picks, recency, total);
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        match rt.block_on(svc.gather_news(&p, recorded() + TimeDelta::days(offset_days))) {
            Ok(report) => {
                let order: Vec<&str> = report.summaries.iter().map(|g| g.topic.as_str()).collect();
                prop_assert_eq!(&order, &picks);
                for (g, alloc) in report.summaries.iter().zip(allocate_counts(total, picks.len())) {
                    prop_assert_eq!(g.allocated, alloc);
                    prop_assert!(g.summaries.len() as u32 <= alloc);
                    let short = (g.summaries.len() as u32) < alloc;
                    let warned = report.warnings.iter().any(|w| w.contains(&g.topic));
                    prop_assert_eq!(short, warned, "topic {}", g.topic);
                }
            }
            Err(NewsError::UpstreamUnavailable(_)) => {
                let counts = allocate_counts(total, picks.len());
                let searched: Vec<&str> = picks.iter().zip(&counts).filter(|(_, &c)| c > 0).map(|(t, _)| *t).collect();
                prop_assert!(failing_topic.is_some());
                prop_assert_eq!(searched, vec![TOPICS[failing_topic.unwrap()]]);
            }
            Err(e) => prop_assert!(false, "unexpected {e:?}"),
        }
    }
}
