//! HTTP routes.

use std::convert::Infallible;

use axum::body::Body;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Multipart, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use chrono::{NaiveDate, Utc};
use meditools_core::derm::FeedbackMode;
use meditools_core::llm::{AudioClip, AudioFormat, ChatMessage, ChatTranscript};
use meditools_core::news::NewsParams;
use meditools_core::pubmed::{ask_paper, FullText, PaperSelection, Pmid, SearchParams, DEFAULT_RETMAX};
use meditools_core::session::{SessionId, SessionKey};
use rand::{Rng, SeedableRng};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::catch_panic::CatchPanicLayer;

use crate::error::{ApiError, ErrorMarker};
use crate::mailer::FeedbackMessage;
use crate::state::AppState;

pub const SESSION_COOKIE: &str = "meditools_session";
pub const JSON_LIMIT: usize = 256 * 1024;
pub const AUDIO_LIMIT: usize = 25 * 1024 * 1024;
const PUBMED_NS: &str = "pubmed";
const MAX_TEXT_CHARS: usize = 8_000;

/// JSON body whose rejections become [`ApiError`]s.
pub struct ApiJson<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state).await.map(|Json(v)| ApiJson(v)).map_err(ApiError::from)
    }
}

/// The caller's session, from the `meditools_session` cookie or a bearer token.
pub struct Session(pub SessionId);

pub fn session_token(headers: &HeaderMap) -> Option<String> {
    if let Some(auth) = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) {
        if let Some(t) = auth.strip_prefix("Bearer ") {
            return Some(t.trim().to_string());
        }
    }
    headers
        .get_all(header::COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|pair| pair.trim().split_once('='))
        .find(|(k, _)| *k == SESSION_COOKIE)
        .map(|(_, v)| v.trim().to_string())
}

impl FromRequestParts<AppState> for Session {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = session_token(&parts.headers).ok_or_else(|| {
            ApiError::new(StatusCode::UNAUTHORIZED, "missing_session", "create a session with POST /api/session first")
        })?;
        let id = SessionId::parse(&token)
            .filter(|id| state.store.exists(id))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown_session", "unknown or expired session"))?;
        Ok(Session(id))
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/models", get(list_models))
        .route("/api/derm/case", post(new_case).get(current_case))
        .route("/api/derm/case/model", post(select_model))
        .route("/api/derm/case/feedback_mode", post(set_feedback_mode))
        .route("/api/derm/case/message", post(derm_message))
        .route("/api/derm/case/audio", post(derm_audio).layer(DefaultBodyLimit::max(AUDIO_LIMIT)))
        .route("/api/derm/case/labs", post(derm_labs))
        .route("/api/derm/case/image", get(derm_image))
        .route("/api/derm/case/guess", post(derm_guess))
        .route("/api/derm/case/repeat", post(derm_repeat))
        .route("/api/derm/case/report", get(derm_report))
        .route("/api/pubmed/search", post(pubmed_search))
        .route("/api/pubmed/select", post(pubmed_select))
        .route("/api/pubmed/chat/{chat_id}", post(pubmed_chat))
        .route("/api/news", post(news))
        .route("/api/feedback", post(feedback))
        .route("/healthz", get(health))
        .fallback(|| async { ApiError::not_found() })
        .method_not_allowed_fallback(|| async { ApiError::method_not_allowed() })
        .layer(DefaultBodyLimit::max(JSON_LIMIT));
    api.layer(middleware::from_fn_with_state(state.clone(), redact_errors))
        .layer(CatchPanicLayer::custom(|_| ApiError::internal().into_response()))
        .with_state(state)
}

/// Scrubs configured secrets out of every error body.
async fn redact_errors(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let resp = next.run(req).await;
    if resp.extensions().get::<ErrorMarker>().is_none() || state.secrets.is_empty() {
        return resp;
    }
    let (mut parts, body) = resp.into_parts();
    let bytes = match axum::body::to_bytes(body, JSON_LIMIT * 4).await {
        Ok(b) => b,
        Err(_) => return ApiError::internal().into_response(),
    };
    let text = state.redact(&String::from_utf8_lossy(&bytes));
    parts.headers.remove(header::CONTENT_LENGTH);
    Response::from_parts(parts, Body::from(text))
}

fn wants_stream(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"))
}

/// Splits after whitespace so the deltas concatenate back to `text`.
pub fn stream_chunks(text: &str, words_per_chunk: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut words = 0;
    let mut prev_ws = false;
    for c in text.chars() {
        if !c.is_whitespace() && prev_ws {
            words += 1;
            if words == words_per_chunk {
                out.push(std::mem::take(&mut cur));
                words = 0;
            }
        }
        prev_ws = c.is_whitespace();
        cur.push(c);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// JSON reply, or `delta` events then a `done` event when the client asks
/// for `text/event-stream`.
fn reply_response(headers: &HeaderMap, message: ChatMessage) -> Response {
    if !wants_stream(headers) {
        return Json(message).into_response();
    }
    let mut events: Vec<Event> = stream_chunks(&message.content, 4)
        .into_iter()
        .map(|c| Event::default().event("delta").data(json!({ "text": c }).to_string()))
        .collect();
    events.push(Event::default().event("done").data(serde_json::to_string(&message).unwrap_or_default()));
    Sse::new(futures::stream::iter(events.into_iter().map(Ok::<_, Infallible>))).into_response()
}

fn check_text(field: &str, text: &str) -> Result<(), ApiError> {
    if text.trim().is_empty() {
        return Err(ApiError::validation(format!("`{field}` must not be empty")));
    }
    if text.chars().count() > MAX_TEXT_CHARS {
        return Err(ApiError::validation(format!("`{field}` exceeds {MAX_TEXT_CHARS} characters")));
    }
    Ok(())
}

#[derive(Serialize)]
struct SessionCreated {
    session_id: String,
}

async fn create_session(State(s): State<AppState>) -> Response {
    let id = s.store.create_session();
    let cookie = format!("{SESSION_COOKIE}={id}; Path=/; HttpOnly; SameSite=Lax");
    let mut resp = (StatusCode::CREATED, Json(SessionCreated { session_id: id.to_string() })).into_response();
    if let Ok(v) = HeaderValue::from_str(&cookie) {
        resp.headers_mut().insert(header::SET_COOKIE, v);
    }
    resp
}

#[derive(Serialize)]
struct ModelListing {
    id: String,
    display_name: String,
    route: meditools_core::llm::ProviderRoute,
    available: bool,
}

async fn list_models(State(s): State<AppState>) -> Json<serde_json::Value> {
    let models: Vec<ModelListing> = s
        .gateway
        .registry()
        .entries()
        .iter()
        .map(|e| ModelListing {
            id: e.id.to_string(),
            display_name: e.display_name.clone(),
            route: e.route,
            available: s.gateway.has_provider(e.route),
        })
        .collect();
    Json(json!({ "models": models, "news_model": s.news.model().as_str(), "news_topics": s.news.topics() }))
}

async fn new_case(State(s): State<AppState>, Session(sid): Session) -> Result<impl IntoResponse, ApiError> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(s.next_seed());
    s.derm.create_case(&sid, &mut rng).await?;
    Ok((StatusCode::CREATED, Json(s.derm.view(&sid)?)))
}

async fn current_case(State(s): State<AppState>, Session(sid): Session) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.derm.view(&sid)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelBody {
    model: String,
}

async fn select_model(
    State(s): State<AppState>,
    Session(sid): Session,
    ApiJson(b): ApiJson<ModelBody>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.derm.select_model(&sid, &b.model).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeBody {
    mode: FeedbackMode,
}

async fn set_feedback_mode(
    State(s): State<AppState>,
    Session(sid): Session,
    ApiJson(b): ApiJson<ModeBody>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.derm.set_feedback_mode(&sid, b.mode).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextBody {
    text: String,
}

async fn derm_message(
    State(s): State<AppState>,
    Session(sid): Session,
    headers: HeaderMap,
    ApiJson(b): ApiJson<TextBody>,
) -> Result<Response, ApiError> {
    check_text("text", &b.text)?;
    let reply = s.derm.patient_reply(&sid, &b.text).await?;
    Ok(reply_response(&headers, reply))
}

#[derive(Serialize)]
struct AudioPayload {
    format: AudioFormat,
    mime: &'static str,
    duration_s: f64,
    data_base64: String,
}

#[derive(Serialize)]
struct VoiceReply {
    transcript: String,
    reply: ChatMessage,
    #[serde(skip_serializing_if = "Option::is_none")]
    reply_audio: Option<AudioPayload>,
}

async fn derm_audio(State(s): State<AppState>, Session(sid): Session, form: Result<Multipart, MultipartRejection>) -> Result<impl IntoResponse, ApiError> {
    let mut form = form?;
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "malformed_multipart", m);
    let mut audio: Option<(Vec<u8>, Option<String>, Option<String>)> = None;
    let mut voice: Option<String> = None;
    while let Some(field) = form.next_field().await.map_err(|e| bad(e.body_text()))? {
        match field.name() {
            Some("audio") => {
                let mime = field.content_type().map(str::to_string);
                let file = field.file_name().map(str::to_string);
                let bytes = field.bytes().await.map_err(|e| bad(e.body_text()))?;
                audio = Some((bytes.to_vec(), mime, file));
            }
            Some("voice") => {
                let v = field.text().await.map_err(|e| bad(e.body_text()))?;
                let v = v.trim().to_string();
                if !v.is_empty() {
                    if v.len() > 32 || !v.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                        return Err(ApiError::validation("`voice` must be a short voice name"));
                    }
                    voice = Some(v);
                }
            }
            _ => {}
        }
    }
    let (bytes, mime, file) = audio.ok_or_else(|| ApiError::validation("multipart field `audio` is required"))?;
    let format = AudioFormat::sniff(&bytes)
        .or_else(|| mime.as_deref().and_then(AudioFormat::from_mime))
        .or_else(|| file.as_deref().and_then(|f| f.rsplit_once('.')).and_then(|(_, ext)| AudioFormat::from_extension(ext)))
        .ok_or_else(|| {
            ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_audio", "audio must be WAV or MP3")
        })?;
    let clip = AudioClip::new(bytes, format)?;
    let turn = s.derm.voice_reply(&sid, &clip, voice.as_deref()).await?;
    Ok(Json(VoiceReply {
        transcript: turn.transcript,
        reply: turn.reply,
        reply_audio: turn.reply_audio.map(|a| AudioPayload {
            format: a.format,
            mime: a.format.mime(),
            duration_s: a.duration_s,
            data_base64: base64::engine::general_purpose::STANDARD.encode(&a.bytes),
        }),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabsBody {
    test_type: String,
}

async fn derm_labs(
    State(s): State<AppState>,
    Session(sid): Session,
    ApiJson(b): ApiJson<LabsBody>,
) -> Result<impl IntoResponse, ApiError> {
    check_text("test_type", &b.test_type)?;
    Ok(Json(s.derm.order_labs(&sid, &b.test_type).await?))
}

async fn derm_image(State(s): State<AppState>, Session(sid): Session) -> Result<Response, ApiError> {
    let (bytes, format) = s.derm.reveal_image(&sid).await?;
    Ok(([(header::CONTENT_TYPE, format.mime()), (header::CACHE_CONTROL, "no-store")], bytes).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GuessBody {
    guess: String,
}

async fn derm_guess(
    State(s): State<AppState>,
    Session(sid): Session,
    ApiJson(b): ApiJson<GuessBody>,
) -> Result<impl IntoResponse, ApiError> {
    check_text("guess", &b.guess)?;
    Ok(Json(s.derm.submit_guess(&sid, &b.guess).await?))
}

async fn derm_repeat(State(s): State<AppState>, Session(sid): Session) -> Result<impl IntoResponse, ApiError> {
    s.derm.repeat_case(&sid).await?;
    Ok(Json(s.derm.view(&sid)?))
}

async fn derm_report(State(s): State<AppState>, Session(sid): Session) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.derm.generate_report(&sid).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchBody {
    term: String,
    #[serde(default)]
    retmax: Option<u32>,
    #[serde(default)]
    mindate: Option<NaiveDate>,
    #[serde(default)]
    maxdate: Option<NaiveDate>,
}

async fn pubmed_search(
    State(s): State<AppState>,
    _: Session,
    ApiJson(b): ApiJson<SearchBody>,
) -> Result<impl IntoResponse, ApiError> {
    let mut p = SearchParams::new(b.term);
    p.retmax = b.retmax.unwrap_or(DEFAULT_RETMAX);
    if let Some(d) = b.mindate {
        p.mindate = d;
    }
    if let Some(d) = b.maxdate {
        p.maxdate = d;
    }
    Ok(Json(s.pubmed.search_articles(&p).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectBody {
    pmid: String,
    model: String,
}

/// Per-chat state kept in the session's `pubmed` namespace.
#[derive(Serialize, Deserialize)]
struct PaperChat {
    selection: PaperSelection,
    full_text: FullText,
    history: ChatTranscript,
}

fn chat_key(sid: &SessionId, chat_id: &str) -> Result<SessionKey, ApiError> {
    Ok(SessionKey::new(sid, PUBMED_NS, &format!("chat:{chat_id}"))?)
}

async fn pubmed_select(
    State(s): State<AppState>,
    Session(sid): Session,
    ApiJson(b): ApiJson<SelectBody>,
) -> Result<impl IntoResponse, ApiError> {
    let pmid = Pmid::parse(&b.pmid)?;
    let model = s.gateway.registry().lookup(&b.model)?.id.clone();
    let article = s.pubmed.article(&pmid).await?;
    let selection = PaperSelection::new(&article, model)?;
    let full_text = s.pubmed.fetch_full_text(&selection.pmcid).await?;
    let chat_id = format!("{:016x}", rand::rngs::StdRng::seed_from_u64(s.next_seed()).random::<u64>());
    let _guard = s.store.lock_namespace(&sid, PUBMED_NS).await?;
    let out = json!({
        "chat_id": chat_id,
        "pmid": selection.pmid,
        "pmcid": selection.pmcid,
        "title": selection.title,
        "model": selection.model,
        "pmc_url": selection.pmc_url,
        "pdf_url": selection.pdf_url,
    });
    let chat = PaperChat { selection, full_text, history: ChatTranscript::new() };
    s.store.put_as(&chat_key(&sid, &chat_id)?, &chat)?;
    Ok((StatusCode::CREATED, Json(out)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionBody {
    question: String,
}

async fn pubmed_chat(
    State(s): State<AppState>,
    Session(sid): Session,
    Path(chat_id): Path<String>,
    headers: HeaderMap,
    ApiJson(b): ApiJson<QuestionBody>,
) -> Result<Response, ApiError> {
    check_text("question", &b.question)?;
    if chat_id.is_empty() || chat_id.len() > 64 || !chat_id.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_chat", "no such paper chat"));
    }
    let _guard = s.store.lock_namespace(&sid, PUBMED_NS).await?;
    let key = chat_key(&sid, &chat_id)?;
    let mut chat: PaperChat = s
        .store
        .get_as(&key)?
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_chat", "no such paper chat"))?;
    let reply = ask_paper(&s.gateway, &s.paper_prompt, &chat.selection, &chat.full_text, &mut chat.history, &b.question).await?;
    s.store.put_as(&key, &chat)?;
    Ok(reply_response(&headers, reply))
}

async fn news(State(s): State<AppState>, _: Session, ApiJson(p): ApiJson<NewsParams>) -> Result<impl IntoResponse, ApiError> {
    let report = s.news.gather_news(&p, Utc::now()).await?;
    let text = meditools_core::news::format_blocks(&report);
    Ok(Json(json!({ "summaries": report.summaries, "warnings": report.warnings, "text": text })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    #[serde(default)]
    sender_contact: String,
    body: String,
}

async fn feedback(State(s): State<AppState>, ApiJson(b): ApiJson<FeedbackBody>) -> Result<impl IntoResponse, ApiError> {
    let msg = FeedbackMessage::new(&b.sender_contact, &b.body, Utc::now())?;
    s.mailer.send(&msg).await?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "status": "accepted", "submitted_at": msg.submitted_at }))))
}

async fn health(State(s): State<AppState>) -> Json<serde_json::Value> {
    let routes: serde_json::Map<String, serde_json::Value> = meditools_core::llm::ProviderRoute::ALL
        .iter()
        .map(|r| (r.as_str().to_string(), json!(s.gateway.has_provider(*r))))
        .collect();
    let catalog = s.derm.catalog();
    Json(json!({
        "status": "ok",
        "offline": s.offline,
        "models": s.gateway.registry().len(),
        "providers": routes,
        "catalog": { "images": catalog.len(), "conditions": catalog.conditions().len() },
        "sessions": s.store.session_count(),
        "pubmed_transport": s.pubmed.transport_name(),
        "news_search": s.news.search_name(),
        "mailer": s.mailer.name(),
    }))
}
