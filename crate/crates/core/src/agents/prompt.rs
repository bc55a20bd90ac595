//! Plain-text prompt templates with `{{placeholder}}` markers.
//!
//! Rendering is a single pass over the parsed template, so substituted values are
//! never re-scanned for markers and the literal text is reproduced byte for byte.

use crate::model::{Role, Transcript, Turn};
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

pub const PATIENT_TEMPLATE: &str = include_str!("../../prompts/patient.txt");
pub const DOCTOR_LONG_TEMPLATE: &str = include_str!("../../prompts/doctor_long.txt");
pub const DOCTOR_SHORT_TEMPLATE: &str = include_str!("../../prompts/doctor_short.txt");
pub const SOLVER_TEMPLATE: &str = include_str!("../../prompts/solver.txt");
pub const EXTRACTOR_TEMPLATE: &str = include_str!("../../prompts/extractor.txt");
pub const INITIAL_REQUEST_TEMPLATE: &str = include_str!("../../prompts/initial_request.txt");
pub const GOLDEN_QUESTION_TEMPLATE: &str = include_str!("../../prompts/golden_question.txt");
pub const GOLDEN_ANALYSIS_TEMPLATE: &str = include_str!("../../prompts/golden_analysis.txt");

/// Name the patient goes by in the patient prompt and rendered histories.
pub const PATIENT_NAME: &str = "Marv";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
    #[error("invalid placeholder name {0:?}")]
    BadName(String),
    #[error("no value supplied for placeholder {0:?}")]
    Missing(String),
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Template {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut rest = text;
        let mut offset = 0;
        while let Some(open) = rest.find("{{") {
            let after = &rest[open + 2..];
            let close = after
                .find("}}")
                .ok_or(TemplateError::Unterminated(offset + open))?;
            let name = after[..close].trim();
            if !valid_name(name) {
                return Err(TemplateError::BadName(name.to_string()));
            }
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_string()));
            }
            segments.push(Segment::Slot(name.to_string()));
            let consumed = open + 2 + close + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_string()));
        }
        Ok(Template { segments })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let map: HashMap<&str, &str> = vars.iter().copied().collect();
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => out.push_str(
                    map.get(name.as_str())
                        .ok_or_else(|| TemplateError::Missing(name.clone()))?,
                ),
            }
        }
        Ok(out)
    }
}

fn speaker(turn: &Turn, patient_label: &str) -> String {
    match turn.role {
        Role::Doctor => "Doctor".to_string(),
        Role::Patient => patient_label.to_string(),
    }
}

/// One `Speaker: text` line per turn, in order.
pub fn render_history(turns: &[Turn], patient_label: &str) -> String {
    turns
        .iter()
        .map(|t| format!("{}: {}", speaker(t, patient_label), t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_transcript_for_patient(transcript: &Transcript) -> String {
    render_history(&transcript.turns, PATIENT_NAME)
}

/// Fills the built-in patient prompt. The output ends with the `Marv:` cue.
pub fn render_patient_prompt(medical_info: &str, dialog_history: &str) -> String {
    let template = Template::parse(PATIENT_TEMPLATE).expect("built-in template parses");
    render_patient_prompt_with(&template, medical_info, dialog_history)
        .expect("built-in template has both placeholders")
}

pub fn render_patient_prompt_with(
    template: &Template,
    medical_info: &str,
    dialog_history: &str,
) -> Result<String, TemplateError> {
    template.render(&[
        ("medical_info", medical_info),
        ("dialog_history", dialog_history),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patient_prompt_substitution() {
        let out = render_patient_prompt("X", "");
        assert!(out.contains("summarized as X."));
        assert!(out.ends_with("\n\nMarv:"));
        assert!(out.contains("responds in less than 15 words"));
        assert!(out.contains("gives only one point of information"));
    }

    #[test]
    fn history_lines_in_order() {
        let mut t = Transcript::start("c", "My chest hurts.", "d", "p", "x");
        t.push(Role::Doctor, "Since when?");
        assert_eq!(
            render_transcript_for_patient(&t),
            "Marv: My chest hurts.\nDoctor: Since when?"
        );
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = Template::parse("a {{x}} b {{y}}").unwrap();
        assert_eq!(t.render(&[("x", "{{y}}"), ("y", "Y")]).unwrap(), "a {{y}} b Y");
        assert_eq!(
            t.render(&[("x", "1")]),
            Err(TemplateError::Missing("y".into()))
        );
    }

    #[test]
    fn malformed_templates() {
        assert!(matches!(Template::parse("oops {{name"), Err(TemplateError::Unterminated(5))));
        assert!(matches!(Template::parse("{{bad name}}"), Err(TemplateError::BadName(_))));
        assert_eq!(
            Template::parse(PATIENT_TEMPLATE).unwrap().placeholders(),
            ["dialog_history", "medical_info"].into_iter().collect()
        );
    }
}
