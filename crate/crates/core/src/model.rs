//! Benchmark data model: cases, facts, transcripts, and per-case evaluation records.
//!
//! Everything here is an immutable value once constructed. Corpus and transcript
//! files are line-delimited JSON, one record per line, with newlines inside text
//! fields escaped by the JSON encoder.

use crate::jsonl::{self, JsonlError};
use crate::metrics::{tokenize, RougeScore};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

/// Lowercases and collapses internal whitespace, the canonical form for fact keys.
pub fn normalize_key(key: &str) -> String {
    key.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// One extracted (key, value) item of medical information.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MedicalFact {
    pub key: String,
    pub value: String,
}

impl MedicalFact {
    /// Builds a fact with a normalized key and trimmed value. Returns `None` when
    /// either side is blank.
    pub fn new(key: &str, value: &str) -> Option<Self> {
        let key = normalize_key(key);
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return None;
        }
        Some(MedicalFact {
            key,
            value: value.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

/// The final multiple-choice task posed after the consultation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub question: String,
    pub options: Vec<AnswerOption>,
    #[serde(rename = "answer")]
    pub answer_label: String,
}

impl TaskSpec {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.options.iter().map(|o| o.label.as_str())
    }

    pub fn option(&self, label: &str) -> Option<&AnswerOption> {
        self.options.iter().find(|o| o.label == label)
    }

    /// Checks the option/answer invariants shared by raw questions and built cases.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.question.trim().is_empty() {
            out.push(Violation::EmptyQuestion);
        }
        if self.options.len() < 2 {
            out.push(Violation::TooFewOptions);
        }
        let mut seen = HashSet::new();
        for opt in &self.options {
            if opt.label.trim().is_empty() {
                out.push(Violation::EmptyOptionLabel);
            } else if !seen.insert(opt.label.as_str()) {
                out.push(Violation::DuplicateLabel(opt.label.clone()));
            }
        }
        if !self.options.iter().any(|o| o.label == self.answer_label) {
            out.push(Violation::AnswerNotAmongLabels(self.answer_label.clone()));
        }
        out
    }
}

/// One benchmark instance: medical information, extracted facts, the patient's
/// opening request, and the final task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsultationCase {
    pub id: String,
    pub source: String,
    pub medical_info: String,
    pub facts: Vec<MedicalFact>,
    pub initial_request: String,
    pub task: TaskSpec,
}

impl ConsultationCase {
    pub fn fact_values(&self) -> impl Iterator<Item = &str> {
        self.facts.iter().map(|f| f.value.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId,
    EmptyMedicalInfo,
    EmptyInitialRequest,
    NoFacts,
    EmptyFactKey(usize),
    EmptyFactValue(usize),
    UnnormalizedKey(usize),
    EmptyQuestion,
    TooFewOptions,
    EmptyOptionLabel,
    DuplicateLabel(String),
    AnswerNotAmongLabels(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "empty id"),
            Violation::EmptyMedicalInfo => write!(f, "empty medical_info"),
            Violation::EmptyInitialRequest => write!(f, "empty initial_request"),
            Violation::NoFacts => write!(f, "no facts"),
            Violation::EmptyFactKey(i) => write!(f, "fact {i}: empty key"),
            Violation::EmptyFactValue(i) => write!(f, "fact {i}: empty value"),
            Violation::UnnormalizedKey(i) => write!(f, "fact {i}: key not normalized"),
            Violation::EmptyQuestion => write!(f, "empty task question"),
            Violation::TooFewOptions => write!(f, "options < 2"),
            Violation::EmptyOptionLabel => write!(f, "empty option label"),
            Violation::DuplicateLabel(l) => write!(f, "duplicate option label {l:?}"),
            Violation::AnswerNotAmongLabels(l) => write!(f, "answer not among labels ({l:?})"),
        }
    }
}

fn case_violations(case: &ConsultationCase, require_facts: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    if case.id.trim().is_empty() {
        out.push(Violation::EmptyId);
    }
    if case.medical_info.trim().is_empty() {
        out.push(Violation::EmptyMedicalInfo);
    }
    if case.initial_request.trim().is_empty() {
        out.push(Violation::EmptyInitialRequest);
    }
    if require_facts && case.facts.is_empty() {
        out.push(Violation::NoFacts);
    }
    for (i, fact) in case.facts.iter().enumerate() {
        if fact.key.trim().is_empty() {
            out.push(Violation::EmptyFactKey(i));
        } else if normalize_key(&fact.key) != fact.key {
            out.push(Violation::UnnormalizedKey(i));
        }
        if fact.value.trim().is_empty() {
            out.push(Violation::EmptyFactValue(i));
        }
    }
    out.extend(case.task.violations());
    out
}

/// Returns every invariant violation of a built case (at least one fact required).
/// An empty list means the case is valid.
pub fn validate_case(case: &ConsultationCase) -> Vec<Violation> {
    case_violations(case, true)
}

/// Like [`validate_case`] but accepts a case whose facts are not extracted yet.
pub fn validate_raw_case(case: &ConsultationCase) -> Vec<Violation> {
    case_violations(case, false)
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("{path}: duplicate case id {id:?} on lines {first} and {second}")]
    DuplicateId {
        path: PathBuf,
        id: String,
        first: usize,
        second: usize,
    },
    #[error("{path}:{line}: invalid case {id:?}: {}", join_violations(.violations))]
    Invalid {
        path: PathBuf,
        line: usize,
        id: String,
        violations: Vec<Violation>,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Parses a single corpus line. Used by the reader and the fuzz targets.
pub fn parse_case_line(line: &str) -> Result<ConsultationCase, serde_json::Error> {
    serde_json::from_str(line)
}

/// Reads a corpus file, preserving file order. Fails on the first malformed line,
/// invalid case, or duplicated id.
pub fn read_corpus(path: &Path) -> Result<Vec<ConsultationCase>, CorpusError> {
    let records: Vec<(usize, ConsultationCase)> = jsonl::read_records(path)?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut cases = Vec::with_capacity(records.len());
    for (line, case) in records {
        let violations = validate_case(&case);
        if !violations.is_empty() {
            return Err(CorpusError::Invalid {
                path: path.to_path_buf(),
                line,
                id: case.id,
                violations,
            });
        }
        if let Some(&first) = seen.get(&case.id) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                id: case.id,
                first,
                second: line,
            });
        }
        seen.insert(case.id.clone(), line);
        cases.push(case);
    }
    Ok(cases)
}

pub fn write_corpus(cases: &[ConsultationCase], path: &Path) -> Result<(), CorpusError> {
    Ok(jsonl::write_records(path, cases)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Doctor,
    Patient,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Doctor => "Doctor",
            Role::Patient => "Patient",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub role: Role,
    pub text: String,
    pub word_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    DoctorStopped,
    MaxTurns,
    Error,
}

/// An ordered doctor/patient exchange. Turn 0 is always the patient's initial
/// request; roles alternate strictly after that.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub case_id: String,
    pub turns: Vec<Turn>,
    pub termination: Termination,
    pub doctor_policy_id: String,
    pub patient_policy_id: String,
    pub config_digest: String,
}

impl Transcript {
    /// Starts a transcript holding only the initial request.
    pub fn start(
        case_id: &str,
        initial_request: &str,
        doctor_policy_id: &str,
        patient_policy_id: &str,
        config_digest: &str,
    ) -> Self {
        let mut t = Transcript {
            case_id: case_id.to_string(),
            turns: Vec::new(),
            termination: Termination::DoctorStopped,
            doctor_policy_id: doctor_policy_id.to_string(),
            patient_policy_id: patient_policy_id.to_string(),
            config_digest: config_digest.to_string(),
        };
        t.push(Role::Patient, initial_request);
        t
    }

    pub fn push(&mut self, role: Role, text: &str) {
        self.turns.push(Turn {
            index: self.turns.len(),
            role,
            text: text.to_string(),
            word_count: tokenize(text).len(),
        });
    }

    pub fn turns_by(&self, role: Role) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(move |t| t.role == role)
    }

    pub fn doctor_turn_count(&self) -> usize {
        self.turns_by(Role::Doctor).count()
    }

    /// Doctor turns that are inquiries: every doctor turn except the closing one
    /// when the doctor ended the consultation itself.
    pub fn doctor_queries(&self) -> Vec<&Turn> {
        let mut q: Vec<&Turn> = self.turns_by(Role::Doctor).collect();
        let last_is_doctor = self.turns.last().is_some_and(|t| t.role == Role::Doctor);
        if self.termination == Termination::DoctorStopped && last_is_doctor {
            q.pop();
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TranscriptViolation {
    Empty,
    FirstTurnNotPatient,
    NonConsecutiveIndex { position: usize, index: usize },
    RoleOutOfOrder { index: usize },
    WordCountMismatch { index: usize },
}

impl fmt::Display for TranscriptViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TranscriptViolation::Empty => write!(f, "transcript has no turns"),
            TranscriptViolation::FirstTurnNotPatient => write!(f, "turn 0 is not the patient"),
            TranscriptViolation::NonConsecutiveIndex { position, index } => {
                write!(f, "turn at position {position} has index {index}")
            }
            TranscriptViolation::RoleOutOfOrder { index } => {
                write!(f, "turn {index} breaks doctor/patient alternation")
            }
            TranscriptViolation::WordCountMismatch { index } => {
                write!(f, "turn {index} word_count does not match its text")
            }
        }
    }
}

pub fn validate_transcript(t: &Transcript) -> Vec<TranscriptViolation> {
    let mut out = Vec::new();
    if t.turns.is_empty() {
        out.push(TranscriptViolation::Empty);
        return out;
    }
    if t.turns[0].role != Role::Patient {
        out.push(TranscriptViolation::FirstTurnNotPatient);
    }
    for (pos, turn) in t.turns.iter().enumerate() {
        if turn.index != pos {
            out.push(TranscriptViolation::NonConsecutiveIndex {
                position: pos,
                index: turn.index,
            });
        }
        let expected = if pos % 2 == 0 { Role::Patient } else { Role::Doctor };
        if pos > 0 && turn.role != expected {
            out.push(TranscriptViolation::RoleOutOfOrder { index: pos });
        }
        if tokenize(&turn.text).len() != turn.word_count {
            out.push(TranscriptViolation::WordCountMismatch { index: pos });
        }
    }
    out
}

pub fn parse_transcript_line(line: &str) -> Result<Transcript, serde_json::Error> {
    serde_json::from_str(line)
}

pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>, JsonlError> {
    Ok(jsonl::read_records(path)?
        .into_iter()
        .map(|(_, t)| t)
        .collect())
}

pub fn write_transcripts(transcripts: &[Transcript], path: &Path) -> Result<(), JsonlError> {
    jsonl::write_records(path, transcripts)
}

/// Which path produced a case result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Consultation,
    UpperBound,
    LowerBound,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Consultation => "consultation",
            RunMode::UpperBound => "upper_bound",
            RunMode::LowerBound => "lower_bound",
        })
    }
}

/// F1 of ROUGE-1, ROUGE-2 and ROUGE-L similarity between one doctor's queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

/// Per-case metric results. Fields a mode does not produce are `None`
/// (bound modes have no dialogue, upper bound has no patient text at all).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub case_id: String,
    pub mode: RunMode,
    pub patient_scores: Option<RougeScore>,
    pub doctor_scores: Option<RougeScore>,
    pub patient_avg_len: Option<f64>,
    pub doctor_avg_len: Option<f64>,
    pub turn_count: Option<usize>,
    pub solver_choice: Option<String>,
    pub correct: bool,
    pub diversity: Option<DiversityScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    /// Checks score ranges and the harmonic-mean identity of every stored f1.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, s) in [
            ("patient", self.patient_scores),
            ("doctor", self.doctor_scores),
        ] {
            if let Some(s) = s {
                if let Err(e) = s.check() {
                    out.push(format!("{name}: {e}"));
                }
            }
        }
        if let Some(d) = self.diversity {
            for v in [d.rouge1, d.rouge2, d.rouge_l] {
                if !(0.0..=1.0).contains(&v) {
                    out.push(format!("diversity {v} out of range"));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_case() -> ConsultationCase {
        ConsultationCase {
            id: "c1".into(),
            source: "demo".into(),
            medical_info: "A 23-year-old woman has a temperature of 39.1°C.".into(),
            facts: vec![
                MedicalFact::new("Age", "23-year-old").unwrap(),
                MedicalFact::new("temperature", "39.1°C").unwrap(),
            ],
            initial_request: "I have a fever, can you help?".into(),
            task: TaskSpec {
                question: "What is the most likely diagnosis?".into(),
                options: ["A", "B", "C", "D", "E"]
                    .iter()
                    .map(|l| AnswerOption {
                        label: l.to_string(),
                        text: format!("option {l}"),
                    })
                    .collect(),
                answer_label: "B".into(),
            },
        }
    }

    #[test]
    fn key_normalization() {
        assert_eq!(normalize_key("  Blood   Pressure "), "blood pressure");
        assert!(MedicalFact::new("  ", "x").is_none());
        assert!(MedicalFact::new("age", " \n").is_none());
    }

    #[test]
    fn well_formed_case_is_valid() {
        assert!(validate_case(&sample_case()).is_empty());
    }

    #[test]
    fn empty_options_flagged() {
        let mut c = sample_case();
        c.task.options.clear();
        let v = validate_case(&c);
        assert!(v.contains(&Violation::TooFewOptions));
        assert!(v.iter().any(|x| x.to_string() == "options < 2"));
    }

    #[test]
    fn answer_outside_labels_flagged() {
        let mut c = sample_case();
        c.task.answer_label = "F".into();
        let v = validate_case(&c);
        assert_eq!(v, vec![Violation::AnswerNotAmongLabels("F".into())]);
        assert!(v[0].to_string().starts_with("answer not among labels"));
    }

    #[test]
    fn raw_case_may_lack_facts() {
        let mut c = sample_case();
        c.facts.clear();
        assert!(validate_raw_case(&c).is_empty());
        assert_eq!(validate_case(&c), vec![Violation::NoFacts]);
    }

    #[test]
    fn duplicate_labels_and_unnormalized_keys() {
        let mut c = sample_case();
        c.task.options[1].label = "A".into();
        c.facts[0].key = "Age".into();
        let v = validate_case(&c);
        assert!(v.contains(&Violation::DuplicateLabel("A".into())));
        assert!(v.contains(&Violation::UnnormalizedKey(0)));
    }

    #[test]
    fn corpus_round_trip_with_multiline_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut a = sample_case();
        a.medical_info = "line one\nline two\r\n\ttabbed \"quoted\"".into();
        let mut b = sample_case();
        b.id = "c2".into();
        write_corpus(&[a.clone(), b.clone()], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_corpus(&path).unwrap(), vec![a, b]);
    }

    #[test]
    fn empty_corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        write_corpus(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert!(read_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_cites_both_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let mut cases: Vec<_> = (0..5)
            .map(|i| {
                let mut c = sample_case();
                c.id = format!("c{i}");
                c
            })
            .collect();
        cases[4].id = "c1".into();
        write_corpus(&cases, &path).unwrap();
        match read_corpus(&path) {
            Err(CorpusError::DuplicateId { first, second, .. }) => {
                assert_eq!((first, second), (2, 5))
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&sample_case()).unwrap();
        std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        let err = read_corpus(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn transcript_alternation() {
        let mut t = Transcript::start("c1", "help me", "d", "p", "x");
        t.push(Role::Doctor, "Do you smoke?");
        t.push(Role::Patient, "No.");
        assert!(validate_transcript(&t).is_empty());
        t.push(Role::Patient, "Also I cough.");
        assert_eq!(
            validate_transcript(&t),
            vec![TranscriptViolation::RoleOutOfOrder { index: 3 }]
        );
    }

    #[test]
    fn doctor_queries_drop_closing_turn() {
        let mut t = Transcript::start("c1", "help", "d", "p", "x");
        t.push(Role::Doctor, "Any fever?");
        t.push(Role::Patient, "Yes.");
        t.push(Role::Doctor, "You have the flu.");
        assert_eq!(t.doctor_queries().len(), 1);
        t.termination = Termination::MaxTurns;
        assert_eq!(t.doctor_queries().len(), 2);
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn case_with_facts(facts: &[(&str, &str)]) -> ConsultationCase {
        ConsultationCase {
            id: "case".into(),
            source: "test".into(),
            medical_info: facts
                .iter()
                .map(|(k, v)| format!("The {k} is {v}."))
                .collect::<Vec<_>>()
                .join(" "),
            facts: facts
                .iter()
                .map(|(k, v)| MedicalFact::new(k, v).expect("valid fact"))
                .collect(),
            initial_request: "I don't feel well. Can you help me?".into(),
            task: TaskSpec {
                question: "What is the diagnosis?".into(),
                options: ["A", "B", "C"]
                    .iter()
                    .map(|l| AnswerOption {
                        label: l.to_string(),
                        text: format!("diagnosis {l}"),
                    })
                    .collect(),
                answer_label: "C".into(),
            },
        }
    }
}
