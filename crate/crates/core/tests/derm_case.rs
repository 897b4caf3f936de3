use std::path::{Path, PathBuf};
use std::sync::Arc;

use meditools_core::catalog::Catalog;
use meditools_core::derm::{
    assemble_patient_prompt, Action, CasePhase, DermConfig, DermError, DermPrompts, DermSim, FeedbackMode,
    PublicCase, FEEDBACK_PREFIX, LAB_PREFIX, NAMESPACE,
};
use meditools_core::fuzzy;
use meditools_core::llm::{
    AudioClip, AudioFormat, LlmGateway, MockProvider, MockSpeech, ModelRegistry, ProviderRoute, Role,
};
use meditools_core::session::SessionStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REGISTRY: &str = r#"
[[model]]
id = "mock-patient"
display_name = "Mock patient"
route = "mock"

[[model]]
id = "gpt-4o"
display_name = "GPT-4o"
route = "openai_direct"
"#;

fn fixture_images() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/images")
}

fn sim_with(catalog: Catalog) -> (DermSim, Arc<SessionStore>) {
    let store = Arc::new(SessionStore::default());
    let gateway = LlmGateway::new(
        ModelRegistry::from_toml_str(REGISTRY).unwrap(),
        Arc::new(MockSpeech::new("It started two weeks ago")),
    )
    .with_provider(ProviderRoute::Mock, Arc::new(MockProvider::canned()));
    let sim = DermSim::new(
        store.clone(),
        Arc::new(catalog),
        Arc::new(gateway),
        DermConfig::default(),
        DermPrompts::default(),
    )
    .unwrap();
    (sim, store)
}

fn sim() -> (DermSim, Arc<SessionStore>) {
    sim_with(Catalog::scan(&fixture_images()).unwrap())
}

fn single_condition_catalog(dir: &tempfile::TempDir, rel: &str) -> Catalog {
    let src = fixture_images().join(rel);
    let dst = dir.path().join(rel);
    std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
    std::fs::copy(src, dst).unwrap();
    Catalog::scan(dir.path()).unwrap()
}

#[tokio::test]
async fn interaction_requires_a_model() {
    let (sim, store) = sim();
    let sid = store.create_session();
    sim.create_case(&sid, &mut ChaCha8Rng::seed_from_u64(1)).await.unwrap();
    assert_eq!(sim.patient_reply(&sid, "Hello").await, Err(DermError::ModelNotSelected));
    assert_eq!(sim.order_labs(&sid, "CBC").await.unwrap_err(), DermError::ModelNotSelected);
    assert_eq!(sim.submit_guess(&sid, "eczema").await.unwrap_err(), DermError::ModelNotSelected);
    assert_eq!(sim.reveal_image(&sid).await.unwrap_err(), DermError::ModelNotSelected);
    assert!(sim.view(&sid).unwrap().transcript.is_empty());

    assert!(matches!(sim.select_model(&sid, "not-a-model").await, Err(DermError::Llm(_))));
    sim.select_model(&sid, "mock-patient").await.unwrap();
    assert!(sim.patient_reply(&sid, "Hello").await.is_ok());
}

#[tokio::test]
async fn no_case_is_reported() {
    let (sim, store) = sim();
    let sid = store.create_session();
    assert_eq!(sim.reveal_image(&sid).await.unwrap_err(), DermError::NoActiveCase);
    assert_eq!(sim.submit_guess(&sid, "x").await.unwrap_err(), DermError::NoActiveCase);
}

#[tokio::test]
async fn seeded_cases_are_reproducible() {
    let (sim, store) = sim();
    let a = store.create_session();
    let b = store.create_session();
    let ca = sim.create_case(&a, &mut ChaCha8Rng::seed_from_u64(42)).await.unwrap();
    let cb = sim.create_case(&b, &mut ChaCha8Rng::seed_from_u64(42)).await.unwrap();
    assert_eq!(ca, cb);
    let dir = ca.image.path.split('/').next().unwrap();
    assert_eq!(ca.condition_name, dir);
    assert!(DermConfig::default().names.contains(&ca.profile.name));
}

#[tokio::test]
async fn full_case_lifecycle() {
    let (sim, store) = sim();
    let sid = store.create_session();
    let case = sim.create_case(&sid, &mut ChaCha8Rng::seed_from_u64(7)).await.unwrap();
    let condition = case.condition_name.clone();
    let mut visible: Vec<String> = vec![serde_json::to_string(&PublicCase::from(&case)).unwrap()];

    visible.push(serde_json::to_string(&sim.select_model(&sid, "mock-patient").await.unwrap()).unwrap());
    for q in ["What brings you in today?", "When did it start?", "Does it itch?"] {
        let reply = sim.patient_reply(&sid, q).await.unwrap();
        assert_eq!(reply.role, Role::Assistant);
        visible.push(reply.content);
    }
    let t = sim.view(&sid).unwrap().transcript;
    assert_eq!((t.len(), t.count(Role::User), t.count(Role::Assistant)), (6, 3, 3));

    let lab = sim.order_labs(&sid, "Comprehensive Bloodwork Panel").await.unwrap();
    assert_eq!(lab.patient_name, case.profile.name);
    assert!(lab.rows.iter().any(|r| r.test == "WBC" && r.result == "8.3 x10^3/uL" && r.reference_range == "4.5-11.0 x10^3/uL"));
    let last = sim.view(&sid).unwrap().transcript.last().unwrap().clone();
    assert_eq!(last.role, Role::Assistant);
    assert!(last.content.starts_with(LAB_PREFIX));
    assert!(last.content.contains(&lab.table));
    assert!(lab.table.contains(&format!("Patient Name: {}", case.profile.name)));
    visible.push(serde_json::to_string(&lab).unwrap());
    visible.push(serde_json::to_string(&sim.view(&sid).unwrap()).unwrap());

    for payload in &visible {
        assert!(!payload.contains(&condition), "condition leaked in {payload}");
        assert!(!payload.contains(&case.image.path), "image path leaked in {payload}");
    }

    let guess = sim.submit_guess(&sid, "psoriasis vulgaris").await.unwrap();
    assert_eq!(guess.revealed_condition, condition);
    let view = sim.view(&sid).unwrap();
    assert_eq!(view.phase, CasePhase::PostGuess);
    assert_eq!(view.actions, [Action::Repeat, Action::NewCase, Action::Report]);
    assert!(matches!(
        sim.patient_reply(&sid, "one more question").await,
        Err(DermError::ActionNotAvailable { action: Action::Message, .. })
    ));
    assert!(sim.submit_guess(&sid, "again").await.is_err());

    let stored = sim.view(&sid).unwrap().transcript;
    let report = sim.generate_report(&sid).await.unwrap();
    assert!(!report.condition_info.trim().is_empty());
    assert!(!report.performance_feedback.trim().is_empty());
    assert!(!report.transcript.is_empty());
    assert_eq!(serde_json::to_vec(&report.transcript).unwrap(), serde_json::to_vec(&stored).unwrap());
    assert_eq!(report.condition_name, condition);
}

#[tokio::test]
async fn new_case_resets_everything() {
    let (sim, store) = sim();
    let sid = store.create_session();
    let first = sim.create_case(&sid, &mut ChaCha8Rng::seed_from_u64(1)).await.unwrap();
    sim.select_model(&sid, "mock-patient").await.unwrap();
    sim.set_feedback_mode(&sid, FeedbackMode::PerQuestion).await.unwrap();
    sim.patient_reply(&sid, "hello there").await.unwrap();
    sim.reveal_image(&sid).await.unwrap();
    sim.submit_guess(&sid, "acne").await.unwrap();

    let mut seed = 2;
    let second = loop {
        let c = sim.create_case(&sid, &mut ChaCha8Rng::seed_from_u64(seed)).await.unwrap();
        if c.image != first.image {
            break c;
        }
        seed += 1;
    };
    let entries = store.entries(&sid, NAMESPACE).unwrap();
    let keys: Vec<&str> = entries.keys().map(String::as_str).collect();
    assert_eq!(keys, ["case", "image_revealed", "phase", "transcript"]);
    let dump = serde_json::to_string(&entries).unwrap();
    assert!(!dump.contains("hello there"));
    assert!(!dump.contains(&first.case_id));
    let view = sim.view(&sid).unwrap();
    assert_eq!(view.phase, CasePhase::Interview);
    assert!(view.guess.is_none() && view.transcript.is_empty());
    assert_eq!(view.case.model, None);
    assert_eq!(view.case.feedback_mode, FeedbackMode::AtEnd);

    sim.select_model(&sid, "mock-patient").await.unwrap();
    let (bytes, _) = sim.reveal_image(&sid).await.unwrap();
    assert_eq!(bytes, std::fs::read(fixture_images().join(&second.image.path)).unwrap());
}

#[tokio::test]
async fn repeat_keeps_the_patient_and_clears_the_chat() {
    let (sim, store) = sim();
    let sid = store.create_session();
    sim.create_case(&sid, &mut ChaCha8Rng::seed_from_u64(3)).await.unwrap();
    sim.select_model(&sid, "mock-patient").await.unwrap();
    sim.patient_reply(&sid, "hi").await.unwrap();
    assert!(matches!(sim.repeat_case(&sid).await, Err(DermError::ActionNotAvailable { .. })));
    sim.submit_guess(&sid, "whatever").await.unwrap();
    let before: meditools_core::derm::CaseSpec =
        store.get_as(&meditools_core::session::SessionKey::new(&sid, NAMESPACE, "case").unwrap()).unwrap().unwrap();
    let repeated = sim.repeat_case(&sid).await.unwrap();
    assert_eq!(repeated, before);
    let view = sim.view(&sid).unwrap();
    assert!(view.transcript.is_empty() && view.guess.is_none());
    assert_eq!(view.phase, CasePhase::Interview);
    assert!(sim.patient_reply(&sid, "hi again").await.is_ok());
}

#[tokio::test]
async fn guesses_are_adjudicated_by_fuzzy_match() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, store) = sim_with(single_condition_catalog(&dir, "Bullous Disease/blister-1.png"));
    let sid = store.create_session();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    for (guess, expect) in [("bullous disease", true), ("psoriasis", false), ("Disease bullous", true)] {
        sim.create_case(&sid, &mut rng).await.unwrap();
        sim.select_model(&sid, "mock-patient").await.unwrap();
        let r = sim.submit_guess(&sid, guess).await.unwrap();
        assert_eq!(r.outcome.matched, expect, "{guess}");
        assert_eq!(r.revealed_condition, "Bullous Disease");
    }

    let words = ["bullous", "disease", "pemphigus", "blister", "eczema", "Bullous", "DISEASE", "skin", "b", ""];
    use rand::Rng;
    for _ in 0..100 {
        let n = rng.random_range(0..4);
        let guess: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
        let guess = guess.join(" ");
        sim.create_case(&sid, &mut rng).await.unwrap();
        sim.select_model(&sid, "mock-patient").await.unwrap();
        let r = sim.submit_guess(&sid, &guess).await.unwrap();
        let oracle = fuzzy::is_match(&guess, "Bullous Disease", 0.7);
        assert_eq!(r.outcome.matched, oracle.matched, "{guess:?}");
        assert_eq!(r.outcome.ratio.to_bits(), oracle.ratio.to_bits());
    }
}

#[tokio::test]
async fn feedback_clause_follows_mode() {
    let (sim, store) = sim();
    let sid = store.create_session();
    let mut case = sim.create_case(&sid, &mut ChaCha8Rng::seed_from_u64(5)).await.unwrap();
    let at_end = assemble_patient_prompt(sim.prompts(), &case).unwrap();
    assert!(!at_end.contains(FEEDBACK_PREFIX));
    case.feedback_mode = FeedbackMode::PerQuestion;
    let per_q = assemble_patient_prompt(sim.prompts(), &case).unwrap();
    assert!(per_q.contains(FEEDBACK_PREFIX));
    for s in [&at_end, &per_q] {
        assert!(s.contains(&case.condition_name) && s.contains(&case.profile.name) && s.contains(&case.profile.personality));
        assert!(s.contains(&case.condition_type));
    }
}

#[tokio::test]
async fn voice_turn_matches_text_turn_shape() {
    let (sim, store) = sim();
    let sid = store.create_session();
    sim.create_case(&sid, &mut ChaCha8Rng::seed_from_u64(9)).await.unwrap();
    sim.select_model(&sid, "mock-patient").await.unwrap();
    let clip = AudioClip::new(vec![1, 2, 3, 4], AudioFormat::Mp3).unwrap();
    let turn = sim.voice_reply(&sid, &clip, Some("alloy")).await.unwrap();
    assert_eq!(turn.transcript, "It started two weeks ago");
    assert_eq!(turn.reply.content, "It started two weeks ago");
    assert!(turn.reply_audio.is_some());
    let t = sim.view(&sid).unwrap().transcript;
    assert_eq!((t.count(Role::User), t.count(Role::Assistant)), (1, 1));
    assert_eq!(t.messages()[0].content, "It started two weeks ago");
}

#[tokio::test]
async fn report_needs_a_conversation() {
    let (sim, store) = sim();
    let sid = store.create_session();
    sim.create_case(&sid, &mut ChaCha8Rng::seed_from_u64(4)).await.unwrap();
    sim.select_model(&sid, "mock-patient").await.unwrap();
    assert_eq!(sim.generate_report(&sid).await.unwrap_err(), DermError::EmptyTranscript);
}

#[tokio::test]
async fn early_report_closes_the_interview() {
    let (sim, store) = sim();
    let sid = store.create_session();
    sim.create_case(&sid, &mut ChaCha8Rng::seed_from_u64(5)).await.unwrap();
    sim.select_model(&sid, "mock-patient").await.unwrap();
    sim.patient_reply(&sid, "What brings you in?").await.unwrap();
    sim.generate_report(&sid).await.unwrap();
    assert_eq!(sim.view(&sid).unwrap().phase, CasePhase::PostGuess);
    assert!(matches!(sim.submit_guess(&sid, "anything").await, Err(DermError::ActionNotAvailable { .. })));
    assert!(sim.view(&sid).unwrap().guess.is_none());
}

#[tokio::test]
async fn provider_errors_leave_transcript_untouched() {
    let (sim, store) = sim();
    let sid = store.create_session();
    sim.create_case(&sid, &mut ChaCha8Rng::seed_from_u64(4)).await.unwrap();
    sim.select_model(&sid, "gpt-4o").await.unwrap();
    assert!(matches!(sim.patient_reply(&sid, "hello").await, Err(DermError::Llm(_))));
    assert!(sim.view(&sid).unwrap().transcript.is_empty());
}
