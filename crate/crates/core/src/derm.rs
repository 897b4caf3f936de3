//! Dermatology virtual-patient case engine.
//!
//! Each session holds at most one case in the `derm` namespace of the
//! [`SessionStore`]. The hidden condition lives only in the stored
//! [`CaseSpec`] and in system prompts built per call; the stored transcript
//! holds user and assistant turns only.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogError, ImageEntry, ImageFormat};
use crate::fuzzy::{self, MatchOutcome, DEFAULT_CUTOFF};
use crate::llm::{
    AudioClip, ChatMessage, ChatTranscript, LlmError, LlmGateway, ModelId, PromptTemplate, TemplateError,
    LAB_TABLE_MARKER,
};
use crate::session::{SessionError, SessionId, SessionKey, SessionStore};

pub const NAMESPACE: &str = "derm";

/// Prefix the patient model puts on inline coaching lines.
pub const FEEDBACK_PREFIX: &str = "[Feedback]";
/// Prefix of lab tables injected into the chat.
pub const LAB_PREFIX: &str = "[Lab]";

const KEY_CASE: &str = "case";
const KEY_TRANSCRIPT: &str = "transcript";
const KEY_PHASE: &str = "phase";
const KEY_GUESS: &str = "guess";
const KEY_IMAGE_REVEALED: &str = "image_revealed";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DermError {
    #[error("no active case in this session")]
    NoActiveCase,
    #[error("select a model before interacting with the patient")]
    ModelNotSelected,
    #[error("`{action}` is not available while the case is {phase}")]
    ActionNotAvailable { action: Action, phase: CasePhase },
    #[error("there is no conversation to report on yet")]
    EmptyTranscript,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("lab output is not a table: {0}")]
    LabFormat(String),
    #[error("model returned an empty {0} section")]
    EmptySection(&'static str),
    #[error("case configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl From<TemplateError> for DermError {
    fn from(e: TemplateError) -> Self {
        DermError::Llm(LlmError::Template(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    #[default]
    AtEnd,
    PerQuestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CasePhase {
    #[default]
    Interview,
    PostGuess,
}

impl std::fmt::Display for CasePhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CasePhase::Interview => "in interview",
            CasePhase::PostGuess => "awaiting a follow-up after the guess",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    SelectModel,
    SetFeedbackMode,
    Message,
    Labs,
    Image,
    Guess,
    Repeat,
    NewCase,
    Report,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string));
        f.write_str(s.as_deref().unwrap_or("?"))
    }
}

impl CasePhase {
    pub fn actions(self) -> &'static [Action] {
        match self {
            CasePhase::Interview => &[
                Action::SelectModel,
                Action::SetFeedbackMode,
                Action::Message,
                Action::Labs,
                Action::Image,
                Action::Guess,
                Action::NewCase,
                Action::Report,
            ],
            CasePhase::PostGuess => &[Action::Repeat, Action::NewCase, Action::Report],
        }
    }

    pub fn allows(self, action: Action) -> bool {
        self.actions().contains(&action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub name: String,
    pub personality: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case_id: String,
    pub profile: PatientProfile,
    pub condition_name: String,
    pub condition_type: String,
    pub image: ImageEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelId>,
    #[serde(default)]
    pub feedback_mode: FeedbackMode,
}

/// What a client may see of a case: no condition, no image path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicCase {
    pub case_id: String,
    pub patient_name: String,
    pub personality: String,
    pub model: Option<ModelId>,
    pub feedback_mode: FeedbackMode,
}

impl From<&CaseSpec> for PublicCase {
    fn from(c: &CaseSpec) -> Self {
        Self {
            case_id: c.case_id.clone(),
            patient_name: c.profile.name.clone(),
            personality: c.profile.personality.clone(),
            model: c.model.clone(),
            feedback_mode: c.feedback_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabRow {
    pub test: String,
    pub result: String,
    pub reference_range: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabResult {
    pub test_type: String,
    pub patient_name: String,
    pub rows: Vec<LabRow>,
    /// Display text: heading, patient name, then the pipe-delimited table.
    pub table: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessResult {
    pub guess: String,
    pub outcome: MatchOutcome,
    pub revealed_condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub condition_name: String,
    pub condition_info: String,
    pub transcript: ChatTranscript,
    pub performance_feedback: String,
}

/// Snapshot of a session's case for clients restoring their view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseView {
    pub case: PublicCase,
    pub phase: CasePhase,
    pub transcript: ChatTranscript,
    pub guess: Option<GuessResult>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone)]
pub struct VoiceTurn {
    pub transcript: String,
    pub reply: ChatMessage,
    pub reply_audio: Option<AudioClip>,
}

/// Patient name and personality pools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DermConfig {
    pub names: Vec<String>,
    pub personalities: Vec<String>,
}

impl Default for DermConfig {
    fn default() -> Self {
        let names = [
            "Taylor", "Jordan", "Morgan", "Riley", "Casey", "Avery", "Quinn", "Jamie", "Alex", "Sam", "Robin",
            "Drew",
        ];
        let personalities = [
            "reserved",
            "talkative",
            "anxious",
            "matter-of-fact",
            "impatient",
            "cheerful",
            "skeptical of doctors",
            "easily embarrassed",
        ];
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            personalities: personalities.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl DermConfig {
    pub fn validate(&self) -> Result<(), DermError> {
        let blank = |v: &[String]| v.is_empty() || v.iter().any(|s| s.trim().is_empty());
        if blank(&self.names) {
            return Err(DermError::Config("patient name list is empty or has blank entries".into()));
        }
        if blank(&self.personalities) {
            return Err(DermError::Config("personality list is empty or has blank entries".into()));
        }
        Ok(())
    }
}

/// The five prompt templates a case uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DermPrompts {
    pub patient: PromptTemplate,
    pub feedback_clause: String,
    pub lab: PromptTemplate,
    pub condition_info: PromptTemplate,
    pub performance: PromptTemplate,
}

const PATIENT_KEYS: &[&str] = &["name", "personality", "condition_name", "condition_type", "feedback_instructions"];
const LAB_KEYS: &[&str] = &["name", "condition_name", "condition_type", "test_type"];
const INFO_KEYS: &[&str] = &["condition_name", "condition_type"];
const PERFORMANCE_KEYS: &[&str] = &["condition_name", "condition_type", "guess_summary"];

fn checked(name: &str, body: &str, allowed: &[&str]) -> Result<PromptTemplate, DermError> {
    let t = PromptTemplate::parse(body).map_err(|e| DermError::Config(format!("{name}: {e}")))?;
    let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
    if let Some(bad) = t.required_keys().iter().find(|k| !allowed.contains(k.as_str())) {
        return Err(DermError::Config(format!("{name}: unknown placeholder `{bad}`")));
    }
    Ok(t)
}

impl Default for DermPrompts {
    fn default() -> Self {
        Self::from_bodies(
            include_str!("../prompts/patient.txt"),
            include_str!("../prompts/feedback_clause.txt"),
            include_str!("../prompts/lab.txt"),
            include_str!("../prompts/condition_info.txt"),
            include_str!("../prompts/performance.txt"),
        )
        .expect("bundled prompts are valid")
    }
}

impl DermPrompts {
    pub fn from_bodies(
        patient: &str,
        feedback_clause: &str,
        lab: &str,
        condition_info: &str,
        performance: &str,
    ) -> Result<Self, DermError> {
        let lab = checked("lab.txt", lab, LAB_KEYS)?;
        if !lab.body().contains(LAB_TABLE_MARKER) {
            return Err(DermError::Config(format!("lab.txt must contain the header `{LAB_TABLE_MARKER}`")));
        }
        if !feedback_clause.contains(FEEDBACK_PREFIX) {
            return Err(DermError::Config(format!("feedback_clause.txt must mention `{FEEDBACK_PREFIX}`")));
        }
        Ok(Self {
            patient: checked("patient.txt", patient, PATIENT_KEYS)?,
            feedback_clause: feedback_clause.to_string(),
            lab,
            condition_info: checked("condition_info.txt", condition_info, INFO_KEYS)?,
            performance: checked("performance.txt", performance, PERFORMANCE_KEYS)?,
        })
    }

    /// Loads overrides from `dir`; files that are absent keep the bundled
    /// text.
    pub fn load_dir(dir: &Path) -> Result<Self, DermError> {
        let d = Self::default();
        let read = |file: &str, fallback: &str| -> Result<String, DermError> {
            let path = dir.join(file);
            if path.exists() {
                std::fs::read_to_string(&path).map_err(|e| DermError::Config(format!("{}: {e}", path.display())))
            } else {
                Ok(fallback.to_string())
            }
        };
        Self::from_bodies(
            &read("patient.txt", d.patient.body())?,
            &read("feedback_clause.txt", &d.feedback_clause)?,
            &read("lab.txt", d.lab.body())?,
            &read("condition_info.txt", d.condition_info.body())?,
            &read("performance.txt", d.performance.body())?,
        )
    }
}

/// System prompt for the virtual patient.
pub fn assemble_patient_prompt(prompts: &DermPrompts, case: &CaseSpec) -> Result<String, DermError> {
    let feedback = match case.feedback_mode {
        FeedbackMode::PerQuestion => prompts.feedback_clause.as_str(),
        FeedbackMode::AtEnd => "",
    };
    Ok(prompts.patient.render_pairs(&[
        ("name", &case.profile.name),
        ("personality", &case.profile.personality),
        ("condition_name", &case.condition_name),
        ("condition_type", &case.condition_type),
        ("feedback_instructions", feedback),
    ])?)
}

fn split_cells(line: &str) -> Vec<String> {
    let line = line.trim().trim_start_matches('|').trim_end_matches('|');
    line.split('|').map(|c| c.trim().to_string()).collect()
}

fn is_separator(cells: &[String]) -> bool {
    cells.iter().all(|c| !c.is_empty() && c.chars().all(|ch| matches!(ch, '-' | ':' | ' ')))
}

/// Parses model output into lab rows. Accepts plain or markdown pipe tables;
/// requires the `Test | Result | Reference Range` header and at least one
/// data row with three non-empty cells. Extra columns are ignored.
pub fn parse_lab_table(text: &str) -> Result<Vec<LabRow>, DermError> {
    let header: Vec<String> = split_cells(LAB_TABLE_MARKER).iter().map(|c| c.to_lowercase()).collect();
    let mut lines = text.lines();
    let found = lines.by_ref().any(|l| {
        let cells = split_cells(l);
        cells.len() >= 3 && cells[..3].iter().map(|c| c.trim_matches('*').to_lowercase()).eq(header.iter().cloned())
    });
    if !found {
        return Err(DermError::LabFormat(format!("missing `{LAB_TABLE_MARKER}` header")));
    }
    let rows: Vec<LabRow> = lines
        .map(split_cells)
        .filter(|cells| cells.len() >= 3 && !is_separator(cells) && cells[..3].iter().all(|c| !c.is_empty()))
        .map(|cells| LabRow {
            test: cells[0].clone(),
            result: cells[1].clone(),
            reference_range: cells[2].clone(),
        })
        .collect();
    if rows.is_empty() {
        return Err(DermError::LabFormat("no rows with test, result and reference range".into()));
    }
    Ok(rows)
}

pub fn format_lab_table(test_type: &str, patient_name: &str, rows: &[LabRow]) -> String {
    let mut out = format!("Lab Test Results: {test_type}\nPatient Name: {patient_name}\n\n{LAB_TABLE_MARKER}");
    for r in rows {
        out.push_str(&format!("\n{} | {} | {}", r.test, r.result, r.reference_range));
    }
    out
}

fn key(sid: &SessionId, k: &str) -> Result<SessionKey, DermError> {
    Ok(SessionKey::new(sid, NAMESPACE, k)?)
}

pub struct DermSim {
    store: Arc<SessionStore>,
    catalog: Arc<Catalog>,
    gateway: Arc<LlmGateway>,
    config: DermConfig,
    prompts: DermPrompts,
}

impl DermSim {
    pub fn new(
        store: Arc<SessionStore>,
        catalog: Arc<Catalog>,
        gateway: Arc<LlmGateway>,
        config: DermConfig,
        prompts: DermPrompts,
    ) -> Result<Self, DermError> {
        config.validate()?;
        Ok(Self { store, catalog, gateway, config, prompts })
    }

    pub fn prompts(&self) -> &DermPrompts {
        &self.prompts
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn load_case(&self, sid: &SessionId) -> Result<CaseSpec, DermError> {
        self.store.get_as(&key(sid, KEY_CASE)?)?.ok_or(DermError::NoActiveCase)
    }

    fn phase(&self, sid: &SessionId) -> Result<CasePhase, DermError> {
        Ok(self.store.get_as(&key(sid, KEY_PHASE)?)?.unwrap_or_default())
    }

    fn transcript(&self, sid: &SessionId) -> Result<ChatTranscript, DermError> {
        Ok(self.store.get_as(&key(sid, KEY_TRANSCRIPT)?)?.unwrap_or_default())
    }

    fn save_transcript(&self, sid: &SessionId, t: &ChatTranscript) -> Result<(), DermError> {
        Ok(self.store.put_as(&key(sid, KEY_TRANSCRIPT)?, t)?)
    }

    /// Loads the case and checks that `action` is allowed in its phase.
    fn gate(&self, sid: &SessionId, action: Action) -> Result<(CaseSpec, CasePhase), DermError> {
        let case = self.load_case(sid)?;
        let phase = self.phase(sid)?;
        if !phase.allows(action) {
            return Err(DermError::ActionNotAvailable { action, phase });
        }
        Ok((case, phase))
    }

    fn require_model(case: &CaseSpec) -> Result<ModelId, DermError> {
        case.model.clone().ok_or(DermError::ModelNotSelected)
    }

    fn write_fresh_case(&self, sid: &SessionId, case: &CaseSpec) -> Result<(), DermError> {
        self.store.reset_namespace(sid, NAMESPACE)?;
        self.store.put_as(&key(sid, KEY_CASE)?, case)?;
        self.store.put_as(&key(sid, KEY_PHASE)?, &CasePhase::Interview)?;
        self.save_transcript(sid, &ChatTranscript::new())?;
        self.store.put_as(&key(sid, KEY_IMAGE_REVEALED)?, &false)?;
        Ok(())
    }

    /// Clears the namespace, then draws an image and a patient profile.
    pub async fn create_case<R: Rng + Send + ?Sized>(
        &self,
        sid: &SessionId,
        rng: &mut R,
    ) -> Result<CaseSpec, DermError> {
        let _guard = self.store.lock_namespace(sid, NAMESPACE).await?;
        self.store.reset_namespace(sid, NAMESPACE)?;
        let image = self.catalog.sample(rng)?.clone();
        let pick = |list: &[String], rng: &mut R| list.choose(rng).cloned().expect("validated nonempty");
        let name = pick(&self.config.names, rng);
        let personality = pick(&self.config.personalities, rng);
        let case = CaseSpec {
            case_id: format!("{:016x}", rng.random::<u64>()),
            profile: PatientProfile { name, personality },
            condition_name: image.condition_name.clone(),
            condition_type: image.condition_type.clone(),
            image,
            model: None,
            feedback_mode: FeedbackMode::default(),
        };
        self.write_fresh_case(sid, &case)?;
        Ok(case)
    }

    pub async fn select_model(&self, sid: &SessionId, model: &str) -> Result<PublicCase, DermError> {
        let _guard = self.store.lock_namespace(sid, NAMESPACE).await?;
        let (mut case, _) = self.gate(sid, Action::SelectModel)?;
        let entry = self.gateway.registry().lookup(model)?;
        case.model = Some(entry.id.clone());
        self.store.put_as(&key(sid, KEY_CASE)?, &case)?;
        Ok(PublicCase::from(&case))
    }

    pub async fn set_feedback_mode(&self, sid: &SessionId, mode: FeedbackMode) -> Result<PublicCase, DermError> {
        let _guard = self.store.lock_namespace(sid, NAMESPACE).await?;
        let (mut case, _) = self.gate(sid, Action::SetFeedbackMode)?;
        case.feedback_mode = mode;
        self.store.put_as(&key(sid, KEY_CASE)?, &case)?;
        Ok(PublicCase::from(&case))
    }

    pub fn view(&self, sid: &SessionId) -> Result<CaseView, DermError> {
        let case = self.load_case(sid)?;
        let phase = self.phase(sid)?;
        Ok(CaseView {
            case: PublicCase::from(&case),
            phase,
            transcript: self.transcript(sid)?,
            guess: self.store.get_as(&key(sid, KEY_GUESS)?)?,
            actions: phase.actions().to_vec(),
        })
    }

    /// One interview turn. On success the user message and the reply are
    /// appended to the stored transcript.
    pub async fn patient_reply(&self, sid: &SessionId, user_text: &str) -> Result<ChatMessage, DermError> {
        let _guard = self.store.lock_namespace(sid, NAMESPACE).await?;
        self.reply_locked(sid, user_text).await
    }

    async fn reply_locked(&self, sid: &SessionId, user_text: &str) -> Result<ChatMessage, DermError> {
        let (case, _) = self.gate(sid, Action::Message)?;
        let model = Self::require_model(&case)?;
        if user_text.trim().is_empty() {
            return Err(DermError::InvalidInput("message text is empty".into()));
        }
        let system = assemble_patient_prompt(&self.prompts, &case)?;
        let mut transcript = self.transcript(sid)?;
        let reply = self.gateway.converse(&model, Some(&system), &mut transcript, user_text).await?;
        self.save_transcript(sid, &transcript)?;
        Ok(reply)
    }

    /// Transcribes `clip`, runs it as a normal turn, and optionally speaks
    /// the reply with `voice`.
    pub async fn voice_reply(
        &self,
        sid: &SessionId,
        clip: &AudioClip,
        voice: Option<&str>,
    ) -> Result<VoiceTurn, DermError> {
        let _guard = self.store.lock_namespace(sid, NAMESPACE).await?;
        let (case, _) = self.gate(sid, Action::Message)?;
        Self::require_model(&case)?;
        let text = self.gateway.transcribe_audio(clip).await?;
        let reply = self.reply_locked(sid, &text).await?;
        let reply_audio = match voice {
            Some(v) if !reply.content.trim().is_empty() => Some(self.gateway.synthesize_speech(&reply.content, v).await?),
            _ => None,
        };
        Ok(VoiceTurn { transcript: text, reply, reply_audio })
    }

    /// Generates a lab table in a separate chain and injects it into the
    /// chat as an assistant message.
    pub async fn order_labs(&self, sid: &SessionId, test_type: &str) -> Result<LabResult, DermError> {
        let _guard = self.store.lock_namespace(sid, NAMESPACE).await?;
        let (case, _) = self.gate(sid, Action::Labs)?;
        let model = Self::require_model(&case)?;
        let test_type = test_type.trim();
        if test_type.is_empty() {
            return Err(DermError::InvalidInput("test type is empty".into()));
        }
        let system = self.prompts.lab.render_pairs(&[
            ("name", &case.profile.name),
            ("condition_name", &case.condition_name),
            ("condition_type", &case.condition_type),
            ("test_type", test_type),
        ])?;
        let raw = self.gateway.run_chain(&model, &system, test_type).await?;
        let rows = parse_lab_table(&raw)?;
        let table = format_lab_table(test_type, &case.profile.name, &rows);
        let mut transcript = self.transcript(sid)?;
        transcript.push_assistant(format!("{LAB_PREFIX} {table}"));
        self.save_transcript(sid, &transcript)?;
        Ok(LabResult {
            test_type: test_type.to_string(),
            patient_name: case.profile.name.clone(),
            rows,
            table,
        })
    }

    pub async fn submit_guess(&self, sid: &SessionId, guess: &str) -> Result<GuessResult, DermError> {
        let _guard = self.store.lock_namespace(sid, NAMESPACE).await?;
        let (case, _) = self.gate(sid, Action::Guess)?;
        Self::require_model(&case)?;
        let result = GuessResult {
            guess: guess.to_string(),
            outcome: fuzzy::is_match(guess, &case.condition_name, DEFAULT_CUTOFF),
            revealed_condition: case.condition_name.clone(),
        };
        self.store.put_as(&key(sid, KEY_GUESS)?, &result)?;
        self.store.put_as(&key(sid, KEY_PHASE)?, &CasePhase::PostGuess)?;
        Ok(result)
    }

    /// Restarts the same patient with an empty conversation.
    pub async fn repeat_case(&self, sid: &SessionId) -> Result<CaseSpec, DermError> {
        let _guard = self.store.lock_namespace(sid, NAMESPACE).await?;
        let (case, _) = self.gate(sid, Action::Repeat)?;
        self.write_fresh_case(sid, &case)?;
        Ok(case)
    }

    /// Condition notes, the verbatim transcript, and performance feedback.
    /// Requesting a report before guessing reveals the condition, as the
    /// report names it.
    pub async fn generate_report(&self, sid: &SessionId) -> Result<CaseReport, DermError> {
        let _guard = self.store.lock_namespace(sid, NAMESPACE).await?;
        let (case, phase) = self.gate(sid, Action::Report)?;
        let transcript = self.transcript(sid)?;
        if transcript.is_empty() {
            return Err(DermError::EmptyTranscript);
        }
        let model = Self::require_model(&case)?;
        let guess: Option<GuessResult> = self.store.get_as(&key(sid, KEY_GUESS)?)?;
        let guess_summary = match &guess {
            Some(g) if g.outcome.matched => format!("The student diagnosed \"{}\", which was accepted.", g.guess),
            Some(g) => format!("The student diagnosed \"{}\", which was not accepted.", g.guess),
            None => "The student has not offered a diagnosis yet.".to_string(),
        };
        let cond = [("condition_name", case.condition_name.as_str()), ("condition_type", case.condition_type.as_str())];
        let info_prompt = self.prompts.condition_info.render_pairs(&cond)?;
        let condition_info = self
            .gateway
            .run_chain(&model, &info_prompt, &format!("Write the teaching notes for {}.", case.condition_name))
            .await?;
        let perf_prompt = self.prompts.performance.render_pairs(&[
            cond[0],
            cond[1],
            ("guess_summary", &guess_summary),
        ])?;
        let dialogue = transcript.render_dialogue("Student", &format!("Patient ({})", case.profile.name));
        let performance_feedback = self.gateway.run_chain(&model, &perf_prompt, &dialogue).await?;
        if condition_info.trim().is_empty() {
            return Err(DermError::EmptySection("condition information"));
        }
        if performance_feedback.trim().is_empty() {
            return Err(DermError::EmptySection("performance feedback"));
        }
        // the report names the condition, so asking for it early ends the interview
        if phase == CasePhase::Interview {
            self.store.put_as(&key(sid, KEY_PHASE)?, &CasePhase::PostGuess)?;
        }
        Ok(CaseReport {
            condition_name: case.condition_name.clone(),
            condition_info,
            transcript,
            performance_feedback,
        })
    }

    pub async fn reveal_image(&self, sid: &SessionId) -> Result<(Vec<u8>, ImageFormat), DermError> {
        let _guard = self.store.lock_namespace(sid, NAMESPACE).await?;
        let (case, _) = self.gate(sid, Action::Image)?;
        Self::require_model(&case)?;
        let bytes = self.catalog.read(&case.image)?;
        self.store.put_as(&key(sid, KEY_IMAGE_REVEALED)?, &true)?;
        Ok((bytes, case.image.format))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_and_markdown_tables() {
        let rows = parse_lab_table(crate::llm::CANNED_LAB_TABLE).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(
            rows[0],
            LabRow {
                test: "WBC".into(),
                result: "8.3 x10^3/uL".into(),
                reference_range: "4.5-11.0 x10^3/uL".into()
            }
        );
        let md = "Here you go:\n| **Test** | **Result** | **Reference Range** |\n|---|:---:|---|\n| CRP | 12 mg/L | <5 mg/L |\n";
        let rows = parse_lab_table(md).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].reference_range, "<5 mg/L");
    }

    #[test]
    fn rejects_tables_without_header_or_rows() {
        assert!(matches!(parse_lab_table("WBC | 8.3 | 4.5-11"), Err(DermError::LabFormat(_))));
        assert!(matches!(
            parse_lab_table("Test | Result | Reference Range\nnothing here"),
            Err(DermError::LabFormat(_))
        ));
        assert!(parse_lab_table("Test | Result | Reference Range\nWBC | 8.3 |").is_err());
    }

    #[test]
    fn formatted_table_round_trips() {
        let rows = parse_lab_table(crate::llm::CANNED_LAB_TABLE).unwrap();
        let text = format_lab_table("Comprehensive Bloodwork Panel", "Taylor", &rows);
        assert!(text.starts_with("Lab Test Results: Comprehensive Bloodwork Panel\nPatient Name: Taylor\n"));
        assert_eq!(parse_lab_table(&text).unwrap(), rows);
    }

    #[test]
    fn prompt_overrides_are_checked() {
        let d = DermPrompts::default();
        let bad = DermPrompts::from_bodies("{secret}", &d.feedback_clause, d.lab.body(), d.condition_info.body(), d.performance.body());
        assert!(matches!(bad, Err(DermError::Config(_))));
        let no_marker = DermPrompts::from_bodies(d.patient.body(), &d.feedback_clause, "labs for {name}", d.condition_info.body(), d.performance.body());
        assert!(no_marker.is_err());
    }

    #[test]
    fn post_guess_offers_three_follow_ups() {
        assert_eq!(CasePhase::PostGuess.actions(), &[Action::Repeat, Action::NewCase, Action::Report]);
        assert!(!CasePhase::Interview.allows(Action::Repeat));
        assert_eq!(Action::SetFeedbackMode.to_string(), "set_feedback_mode");
    }
}
