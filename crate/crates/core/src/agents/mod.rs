//! Doctor, patient, solver, and dataset-building agents.
//!
//! Each behavior is a trait so the orchestrator can drive LLM-backed agents
//! (through the [`gateway`]) and deterministic scripted agents the same way.

pub mod gateway;
pub mod llm;
pub mod policy;
pub mod prompt;
pub mod scripted;

pub use gateway::{ChatMessage, ChatRole, Gateway, GatewayConfig, GatewayError, ModelRef};
pub use policy::{AgentKind, AgentPolicy, AgentRole, PromptVariant, QuestionOrder};
pub use prompt::{render_patient_prompt, Template, TemplateError};
pub use scripted::{oracle_question_sequence, MockSolver, OracleDoctor, ScriptedPatient};

use crate::metrics::tokenize;
use crate::model::{ConsultationCase, MedicalFact, Role, TaskSpec, Transcript};
use std::collections::HashSet;

/// Patient replies longer than this are flagged (the reply is kept).
pub const PATIENT_WORD_LIMIT: usize = 15;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("agent returned an empty reply")]
    EmptyReply,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoctorUtterance {
    pub text: String,
    /// The doctor has stopped inquiring.
    pub is_terminal: bool,
}

pub trait Doctor: Send + Sync {
    /// Produces the next doctor turn. Only oracle doctors may look at `case.facts`.
    fn query(
        &self,
        case: &ConsultationCase,
        history: &Transcript,
    ) -> Result<DoctorUtterance, AgentError>;
}

pub trait Patient: Send + Sync {
    /// Answers the doctor turn at the end of `history`.
    fn respond(&self, case: &ConsultationCase, history: &Transcript) -> Result<String, AgentError>;
}

pub trait Solver: Send + Sync {
    /// Raw solver output for the task, given the rendered context.
    fn answer(&self, case: &ConsultationCase, context: &str) -> Result<String, AgentError>;
}

/// Turns medical information into raw `key: value` output for the fact parser.
pub trait FactExtractor: Send + Sync {
    fn extract(&self, medical_info: &str, attempt: usize) -> Result<String, AgentError>;
}

/// Writes the patient's opening request.
pub trait RequestGenerator: Send + Sync {
    fn generate(
        &self,
        medical_info: &str,
        facts: &[MedicalFact],
        attempt: usize,
    ) -> Result<String, AgentError>;
}

/// Doctor side of golden training dialogues: one question per fact, then an analysis.
pub trait GoldenDoctor: Send + Sync {
    fn ask(
        &self,
        case: &ConsultationCase,
        fact: &MedicalFact,
        history: &Transcript,
    ) -> Result<String, AgentError>;
    fn conclude(&self, case: &ConsultationCase, history: &Transcript) -> Result<String, AgentError>;
}

pub fn doctor_query(
    doctor: &dyn Doctor,
    case: &ConsultationCase,
    history: &Transcript,
) -> Result<DoctorUtterance, AgentError> {
    if history.turns.first().map(|t| t.role) != Some(Role::Patient) {
        return Err(AgentError::Precondition(
            "history must start with the patient's request".into(),
        ));
    }
    let utterance = doctor.query(case, history)?;
    if utterance.text.trim().is_empty() {
        return Err(AgentError::EmptyReply);
    }
    Ok(utterance)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientReply {
    pub text: String,
    pub verbosity_violation: bool,
    /// Keys whose values were revealed without the doctor asking about them.
    pub leaked_keys: Vec<String>,
}

pub fn patient_respond(
    patient: &dyn Patient,
    case: &ConsultationCase,
    history: &Transcript,
) -> Result<PatientReply, AgentError> {
    if history.turns.last().map(|t| t.role) != Some(Role::Doctor) {
        return Err(AgentError::Precondition(
            "patient can only answer a doctor turn".into(),
        ));
    }
    let text = patient.respond(case, history)?;
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(AgentError::EmptyReply);
    }
    Ok(PatientReply {
        verbosity_violation: tokenize(&text).len() > PATIENT_WORD_LIMIT,
        leaked_keys: audit_patient_leakage(&case.facts, history, &text),
        text,
    })
}

fn contains_seq(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Flags facts whose value appears in `reply` although no doctor turn so far
/// shares a token with the fact's key.
pub fn audit_patient_leakage(
    facts: &[MedicalFact],
    history: &Transcript,
    reply: &str,
) -> Vec<String> {
    let asked: HashSet<String> = history
        .turns_by(Role::Doctor)
        .flat_map(|t| tokenize(&t.text))
        .collect();
    let reply_tokens = tokenize(reply);
    facts
        .iter()
        .filter(|f| contains_seq(&reply_tokens, &tokenize(&f.value)))
        .filter(|f| !tokenize(&f.key).iter().any(|k| asked.contains(k)))
        .map(|f| f.key.clone())
        .collect()
}

/// Runs the solver and parses its output into an option label. `Ok(None)` means
/// the output named no label or several; gateway failures stay errors.
pub fn solve_task(
    solver: &dyn Solver,
    case: &ConsultationCase,
    context: &str,
) -> Result<Option<String>, AgentError> {
    let output = solver.answer(case, context)?;
    Ok(parse_solver_choice(&output, &case.task))
}

/// Alphanumeric runs with their byte offsets, case preserved.
fn word_spans(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, &text[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out
}

/// "A" and "I" double as English words; they only count as labels when marked.
fn is_word_use(text: &str, start: usize, word: &str) -> bool {
    if word != "A" && word != "I" {
        return false;
    }
    let before = text[..start].trim_end();
    if before.ends_with('(') || before.ends_with('[') {
        return false;
    }
    let lowered = before.to_lowercase();
    if ["answer is", "answer:", "answer", "option", "choice", "choose"]
        .iter()
        .any(|m| lowered.ends_with(m))
    {
        return false;
    }
    let rest = &text[start + word.len()..];
    let mut chars = rest.chars();
    matches!((chars.next(), chars.next()), (Some(' '), Some(c)) if c.is_alphanumeric())
}

/// Extracts the chosen label: standalone option letters take precedence, then a
/// unique option-text match. Two different labels make the output ambiguous.
pub fn parse_solver_choice(output: &str, task: &TaskSpec) -> Option<String> {
    let labels: HashSet<&str> = task.labels().collect();
    let mut found: Vec<&str> = Vec::new();
    for (start, word) in word_spans(output) {
        if labels.contains(word) && !is_word_use(output, start, word) && !found.contains(&word) {
            found.push(word);
        }
    }
    match found.len() {
        1 => return Some(found[0].to_string()),
        0 => {}
        _ => return None,
    }
    let lowered = output.to_lowercase();
    let matched: Vec<(&str, String)> = task
        .options
        .iter()
        .map(|o| (o.label.as_str(), o.text.trim().to_lowercase()))
        .filter(|(_, t)| !t.is_empty() && lowered.contains(t.as_str()))
        .collect();
    // An option whose text is contained in another matched option's text is shadowed.
    let maximal: Vec<&str> = matched
        .iter()
        .filter(|(l, t)| {
            !matched
                .iter()
                .any(|(l2, t2)| l2 != l && t2.len() > t.len() && t2.contains(t.as_str()))
        })
        .map(|(l, _)| *l)
        .collect();
    match maximal.as_slice() {
        [one] => Some(one.to_string()),
        _ => None,
    }
}
