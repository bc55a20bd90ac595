//! Deterministic agents: the oracle doctor, the template patient, the mock
//! solver, and rule-based stand-ins for the dataset-building agents. All of them
//! are pure functions of their inputs.

use super::policy::QuestionOrder;
use super::{
    AgentError, Doctor, DoctorUtterance, FactExtractor, GoldenDoctor, Patient, RequestGenerator,
    Solver,
};
use crate::metrics::tokenize;
use crate::model::{ConsultationCase, MedicalFact, Role, Transcript};
use crate::orchestrator::detect_termination;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use std::collections::HashSet;
use std::sync::LazyLock;

pub const ORACLE_CLOSING_LINE: &str = "Thank you, I have all the information I need.";
pub const PATIENT_FALLBACK: &str = "I'm not sure about that.";

pub fn oracle_question(key: &str) -> String {
    format!("Can you tell me about {key}?")
}

/// One question per fact in the requested order. Random orders are a pure
/// function of the seed.
pub fn oracle_question_sequence(facts: &[MedicalFact], order: QuestionOrder) -> Vec<String> {
    let mut keys: Vec<&str> = facts.iter().map(|f| f.key.as_str()).collect();
    match order {
        QuestionOrder::Direct => {}
        QuestionOrder::Reverse => keys.reverse(),
        QuestionOrder::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            keys.shuffle(&mut rng);
        }
    }
    keys.into_iter().map(oracle_question).collect()
}

#[derive(Debug, Clone)]
pub struct OracleDoctor {
    pub order: QuestionOrder,
}

impl Doctor for OracleDoctor {
    fn query(
        &self,
        case: &ConsultationCase,
        history: &Transcript,
    ) -> Result<DoctorUtterance, AgentError> {
        let questions = oracle_question_sequence(&case.facts, self.order.for_case(&case.id));
        let asked = history.doctor_turn_count();
        let (text, exhausted) = match questions.into_iter().nth(asked) {
            Some(q) => (q, false),
            None => (ORACLE_CLOSING_LINE.to_string(), true),
        };
        Ok(DoctorUtterance {
            is_terminal: exhausted || detect_termination(&text),
            text,
        })
    }
}

/// Picks the fact whose key shares the most tokens with the question (at least
/// one); ties go to the earlier fact.
pub fn match_fact<'a>(facts: &'a [MedicalFact], question: &str) -> Option<&'a MedicalFact> {
    let q: HashSet<String> = tokenize(question).into_iter().collect();
    let mut best: Option<(&MedicalFact, usize)> = None;
    for fact in facts {
        let key_tokens: HashSet<String> = tokenize(&fact.key).into_iter().collect();
        let overlap = key_tokens.iter().filter(|t| q.contains(*t)).count();
        if overlap >= 1 && best.is_none_or(|(_, b)| overlap > b) {
            best = Some((fact, overlap));
        }
    }
    best.map(|(f, _)| f)
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedPatient;

impl Patient for ScriptedPatient {
    fn respond(&self, case: &ConsultationCase, history: &Transcript) -> Result<String, AgentError> {
        let question = history
            .turns
            .last()
            .filter(|t| t.role == Role::Doctor)
            .map(|t| t.text.as_str())
            .unwrap_or_default();
        Ok(match match_fact(&case.facts, question) {
            Some(f) => format!("My {} is {}.", f.key, f.value),
            None => PATIENT_FALLBACK.to_string(),
        })
    }
}

pub(crate) fn contains_tokens(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Fraction of the case's fact values that occur (as token sequences) in `text`.
pub fn value_coverage(case: &ConsultationCase, text: &str) -> f64 {
    if case.facts.is_empty() {
        return 0.0;
    }
    let hay = tokenize(text);
    let present = case
        .facts
        .iter()
        .filter(|f| contains_tokens(&hay, &tokenize(&f.value)))
        .count();
    present as f64 / case.facts.len() as f64
}

/// Answers correctly iff at least `threshold` of the fact values are in context.
#[derive(Debug, Clone)]
pub struct MockSolver {
    pub threshold: f64,
}

impl Default for MockSolver {
    fn default() -> Self {
        MockSolver { threshold: 0.8 }
    }
}

impl Solver for MockSolver {
    fn answer(&self, case: &ConsultationCase, context: &str) -> Result<String, AgentError> {
        let task = &case.task;
        let label = if value_coverage(case, context) >= self.threshold {
            task.answer_label.as_str()
        } else {
            task.labels()
                .find(|l| *l != task.answer_label)
                .unwrap_or(task.answer_label.as_str())
        };
        Ok(format!("The answer is ({label})."))
    }
}

struct Rule {
    key: &'static str,
    re: Regex,
    /// Capture group holding the value; 0 is the whole match.
    group: usize,
}

fn rule(key: &'static str, pattern: &str, group: usize) -> Rule {
    Rule {
        key,
        re: Regex::new(pattern).expect("extraction rule compiles"),
        group,
    }
}

// A value runs until a comma, semicolon, or sentence end; decimals like "7.2" stay whole.
const CLAUSE: &str = r"((?:[^,.;]|\.\d)+)";
const SENTENCE: &str = r"((?:[^.;]|\.\d)+)";

static RULES: LazyLock<Vec<Rule>> = LazyLock::new(|| {
    vec![
        rule("age", r"(?i)\b\d+-(?:year|month|week|day)-old\b", 0),
        rule("sex", r"(?i)\b(man|woman|boy|girl|male|female)\b", 1),
        rule(
            "chief complaint",
            &format!(r"(?i)\b(?:comes to (?:the|his|her|a) [a-z ]+? (?:with|because of)|presents with|complains of|is brought in with)\s+{CLAUSE}"),
            1,
        ),
        rule(
            "duration",
            r"(?i)\bfor (?:the (?:past|last) )?((?:\d+|one|two|three|four|five|six|seven|eight|nine|ten|several) (?:hours?|days?|weeks?|months?|years?))\b",
            1,
        ),
        rule("family history", &format!(r"(?i)\bfamily history (?:is notable for|of|includes) {CLAUSE}"), 1),
        rule("medical history", &format!(r"(?i)\b(?:has a |past )?(?:medical )?history of {CLAUSE}"), 1),
        rule("medications", &format!(r"(?i)\b(?:takes|is taking|medications include|current medications are) {CLAUSE}"), 1),
        rule("smoking", &format!(r"(?i)\bsmokes {CLAUSE}"), 1),
        rule("alcohol use", &format!(r"(?i)\bdrinks {CLAUSE}"), 1),
        rule("associated symptoms", &format!(r"(?i)\balso (?:reports|has|notes|complains of) {CLAUSE}"), 1),
        rule("temperature", &format!(r"(?i)\btemperature (?:is |of |was )?{CLAUSE}"), 1),
        rule("pulse", &format!(r"(?i)\b(?:pulse|heart rate) (?:is |of |was )?{CLAUSE}"), 1),
        rule("respirations", &format!(r"(?i)\b(?:respirations|respiratory rate) (?:are |is |of |was )?{CLAUSE}"), 1),
        rule("blood pressure", &format!(r"(?i)\bblood pressure (?:is |of |was )?{CLAUSE}"), 1),
        rule("oxygen saturation", &format!(r"(?i)\boxygen saturation (?:is |of |was )?{CLAUSE}"), 1),
        rule("examination", &format!(r"(?i)\bexamination (?:shows|reveals) {SENTENCE}"), 1),
        rule("laboratory findings", &format!(r"(?i)\b(?:laboratory|lab) (?:studies|tests) (?:show|reveal)s? {SENTENCE}"), 1),
        rule("ecg", &format!(r"(?i)\b(?:an )?(?:ecg|electrocardiogram) (?:shows|reveals) {SENTENCE}"), 1),
        rule("imaging", &format!(r"(?i)\b(?:x-ray|ct scan|ultrasound|mri)(?: of the [a-z]+)? (?:shows|reveals) {SENTENCE}"), 1),
    ]
});

/// Rule-based extractor for common demographic, history, vital-sign, and
/// finding phrasings. Emits `key: value` lines ordered by first mention, the
/// first match per key winning.
#[derive(Debug, Clone, Default)]
pub struct HeuristicExtractor;

impl HeuristicExtractor {
    pub fn extract_pairs(&self, medical_info: &str) -> Vec<(String, String)> {
        let mut found: Vec<(usize, &str, String)> = Vec::new();
        for rule in RULES.iter() {
            for caps in rule.re.captures_iter(medical_info) {
                let whole = caps.get(0).expect("match");
                if rule.key == "medical history"
                    && medical_info[..whole.start()].to_lowercase().ends_with("family ")
                {
                    continue;
                }
                let Some(m) = caps.get(rule.group) else { continue };
                let mut value = m.as_str().trim();
                if rule.key == "chief complaint" {
                    // duration is its own fact
                    if let Some(idx) = value.find(" for ") {
                        value = value[..idx].trim();
                    }
                }
                if !value.is_empty() {
                    found.push((m.start(), rule.key, value.to_string()));
                }
                break;
            }
        }
        found.sort_by_key(|(pos, _, _)| *pos);
        found
            .into_iter()
            .map(|(_, k, v)| (k.to_string(), v))
            .collect()
    }
}

impl FactExtractor for HeuristicExtractor {
    fn extract(&self, medical_info: &str, _attempt: usize) -> Result<String, AgentError> {
        Ok(self
            .extract_pairs(medical_info)
            .into_iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n"))
    }
}

/// Composes the opening request from the age, sex, complaint, and duration facts.
#[derive(Debug, Clone, Default)]
pub struct TemplateRequestGenerator;

impl RequestGenerator for TemplateRequestGenerator {
    fn generate(
        &self,
        _medical_info: &str,
        facts: &[MedicalFact],
        _attempt: usize,
    ) -> Result<String, AgentError> {
        let get = |key: &str| facts.iter().find(|f| f.key == key).map(|f| f.value.as_str());
        let sex = get("sex").or_else(|| get("gender"));
        let intro = match (get("age"), sex) {
            (Some(a), Some(s)) => format!("I'm a {a} {s}"),
            (Some(a), None) => format!("I'm {a}"),
            (None, Some(s)) => format!("I'm a {s}"),
            (None, None) => String::new(),
        };
        let complaint = match (get("chief complaint"), get("duration")) {
            (Some(c), Some(d)) => format!("I've had {c} for {d}"),
            (Some(c), None) => format!("I've had {c}"),
            (None, Some(d)) => format!("I haven't felt well for {d}"),
            (None, None) => "I haven't been feeling well".to_string(),
        };
        let first = if intro.is_empty() {
            complaint
        } else {
            format!("{intro} and {complaint}")
        };
        Ok(format!("{first}. Can you help me?"))
    }
}

/// Golden-dialogue doctor: the oracle question per fact, then a closing analysis
/// naming the correct option.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGoldenDoctor;

impl GoldenDoctor for ScriptedGoldenDoctor {
    fn ask(
        &self,
        _case: &ConsultationCase,
        fact: &MedicalFact,
        _history: &Transcript,
    ) -> Result<String, AgentError> {
        Ok(oracle_question(&fact.key))
    }

    fn conclude(&self, case: &ConsultationCase, _history: &Transcript) -> Result<String, AgentError> {
        let answer = case
            .task
            .option(&case.task.answer_label)
            .map(|o| o.text.as_str())
            .unwrap_or(case.task.answer_label.as_str());
        Ok(format!(
            "Thank you for answering my questions. Based on what you have told me, my assessment is: {answer}."
        ))
    }
}
