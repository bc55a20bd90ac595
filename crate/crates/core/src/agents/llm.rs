//! Prompt-rendered agents that talk to a chat model through the [`Gateway`].

use super::gateway::{ChatMessage, Gateway, ModelRef};
use super::prompt::{self, render_history, Template, PATIENT_NAME};
use super::{
    AgentError, Doctor, DoctorUtterance, FactExtractor, GoldenDoctor, Patient, RequestGenerator,
    Solver,
};
use crate::model::{ConsultationCase, MedicalFact, Role, Transcript};
use crate::orchestrator::detect_termination;
use std::sync::Arc;

const FINAL_ASSESSMENT_NUDGE: &str =
    "You have used your question budget. Give your analysis and diagnosis now without asking further questions.";
const FORMAT_NUDGE: &str =
    "Your previous answer could not be used. Follow the requested output format exactly.";

fn chat(gateway: &Gateway, model: &ModelRef, messages: &[ChatMessage]) -> Result<String, AgentError> {
    let text = gateway.chat(model, messages)?;
    let text = text.trim();
    if text.is_empty() {
        return Err(AgentError::EmptyReply);
    }
    Ok(text.to_string())
}

/// Dialogue history from the doctor's side: patient turns are user messages,
/// doctor turns are the assistant's own.
fn doctor_messages(system: String, history: &Transcript) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::system(system)];
    messages.extend(history.turns.iter().map(|t| match t.role {
        Role::Patient => ChatMessage::user(t.text.clone()),
        Role::Doctor => ChatMessage::assistant(t.text.clone()),
    }));
    messages
}

pub struct LlmDoctor {
    pub gateway: Arc<Gateway>,
    pub model: ModelRef,
    pub template: Template,
    /// Questions allowed before the doctor is told to conclude.
    pub question_budget: Option<usize>,
}

impl Doctor for LlmDoctor {
    fn query(
        &self,
        _case: &ConsultationCase,
        history: &Transcript,
    ) -> Result<DoctorUtterance, AgentError> {
        let budget = self
            .question_budget
            .map(|b| b.to_string())
            .unwrap_or_else(|| "as many as needed".to_string());
        let system = self.template.render(&[("max_questions", &budget)])?;
        let mut messages = doctor_messages(system, history);
        let exhausted = self
            .question_budget
            .is_some_and(|b| history.doctor_turn_count() >= b);
        if exhausted {
            messages.push(ChatMessage::system(FINAL_ASSESSMENT_NUDGE));
        }
        let text = chat(&self.gateway, &self.model, &messages)?;
        Ok(DoctorUtterance {
            is_terminal: exhausted || detect_termination(&text),
            text,
        })
    }
}

pub struct LlmPatient {
    pub gateway: Arc<Gateway>,
    pub model: ModelRef,
    pub template: Template,
}

impl Patient for LlmPatient {
    fn respond(&self, case: &ConsultationCase, history: &Transcript) -> Result<String, AgentError> {
        let rendered = prompt::render_patient_prompt_with(
            &self.template,
            &case.medical_info,
            &render_history(&history.turns, PATIENT_NAME),
        )?;
        let text = chat(&self.gateway, &self.model, &[ChatMessage::user(rendered)])?;
        let cue = format!("{PATIENT_NAME}:");
        Ok(text.strip_prefix(&cue).unwrap_or(&text).trim().to_string())
    }
}

pub struct LlmSolver {
    pub gateway: Arc<Gateway>,
    pub model: ModelRef,
    pub template: Template,
}

impl Solver for LlmSolver {
    fn answer(&self, _case: &ConsultationCase, context: &str) -> Result<String, AgentError> {
        let system = self.template.render(&[])?;
        chat(
            &self.gateway,
            &self.model,
            &[ChatMessage::system(system), ChatMessage::user(context)],
        )
    }
}

fn with_nudge(prompt: String, attempt: usize) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::user(prompt)];
    if attempt > 0 {
        // a distinct request, so a retry is not answered from the cache
        messages.push(ChatMessage::system(format!("{FORMAT_NUDGE} (attempt {})", attempt + 1)));
    }
    messages
}

pub struct LlmExtractor {
    pub gateway: Arc<Gateway>,
    pub model: ModelRef,
    pub template: Template,
}

impl FactExtractor for LlmExtractor {
    fn extract(&self, medical_info: &str, attempt: usize) -> Result<String, AgentError> {
        let prompt = self.template.render(&[("medical_info", medical_info)])?;
        chat(&self.gateway, &self.model, &with_nudge(prompt, attempt))
    }
}

pub struct LlmRequestGenerator {
    pub gateway: Arc<Gateway>,
    pub model: ModelRef,
    pub template: Template,
}

impl RequestGenerator for LlmRequestGenerator {
    fn generate(
        &self,
        medical_info: &str,
        _facts: &[MedicalFact],
        attempt: usize,
    ) -> Result<String, AgentError> {
        let prompt = self.template.render(&[("medical_info", medical_info)])?;
        chat(&self.gateway, &self.model, &with_nudge(prompt, attempt))
    }
}

pub struct LlmGoldenDoctor {
    pub gateway: Arc<Gateway>,
    pub model: ModelRef,
    pub question_template: Template,
    pub analysis_template: Template,
}

impl GoldenDoctor for LlmGoldenDoctor {
    fn ask(
        &self,
        case: &ConsultationCase,
        fact: &MedicalFact,
        history: &Transcript,
    ) -> Result<String, AgentError> {
        let prompt = self.question_template.render(&[
            ("medical_info", &case.medical_info),
            ("dialog_history", &render_history(&history.turns, "Patient")),
            ("key", &fact.key),
            ("value", &fact.value),
        ])?;
        chat(&self.gateway, &self.model, &[ChatMessage::user(prompt)])
    }

    fn conclude(&self, case: &ConsultationCase, history: &Transcript) -> Result<String, AgentError> {
        let options = case
            .task
            .options
            .iter()
            .map(|o| format!("{}. {}", o.label, o.text))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = self.analysis_template.render(&[
            ("medical_info", &case.medical_info),
            ("dialog_history", &render_history(&history.turns, "Patient")),
            ("question", &case.task.question),
            ("options", &options),
            ("answer", &case.task.answer_label),
        ])?;
        chat(&self.gateway, &self.model, &[ChatMessage::user(prompt)])
    }
}
