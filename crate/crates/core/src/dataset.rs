//! Turns raw multiple-choice questions into consultation cases, writes golden
//! training dialogues, and summarizes corpora.

use crate::agents::scripted::contains_tokens;
use crate::agents::{patient_respond, AgentError, FactExtractor, GoldenDoctor, Patient, RequestGenerator};
use crate::jsonl::JsonlError;
use crate::metrics::tokenize;
use crate::model::{
    normalize_key, validate_case, AnswerOption, ConsultationCase, MedicalFact, Role, TaskSpec,
    Termination, Transcript,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Longest acceptable initial request, in words.
pub const INITIAL_REQUEST_MAX_WORDS: usize = 25;
/// Fact keys whose values the initial request may mention.
pub const OPENING_KEYS: &[&str] = &["age", "sex", "gender", "chief complaint", "duration"];
pub const GOLDEN_DOCTOR_ID: &str = "golden-doctor";
pub const GOLDEN_PATIENT_ID: &str = "golden-patient";

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "in", "on", "at", "to", "for", "with", "by", "from", "as",
    "is", "are", "was", "were", "be", "been", "has", "have", "had", "his", "her", "he", "she",
    "it", "its", "this", "that", "no", "not", "per", "s",
];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid question: {0}")]
    InvalidMcq(String),
    #[error("no informational part")]
    NoInformationalPart,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("extractor output unparseable after {attempts} attempts: {raw:?}")]
    Unparseable { attempts: usize, raw: String },
    #[error("extraction empty")]
    ExtractionEmpty,
    #[error("initial request leaks {keys:?}: {text:?}")]
    InitialRequestLeak { keys: Vec<String>, text: String },
    #[error("initial request is not in the first person: {0:?}")]
    NotFirstPerson(String),
    #[error("empty initial request")]
    EmptyRequest,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("case {case_id} turn {turn}: {source}")]
    Golden {
        case_id: String,
        turn: usize,
        source: AgentError,
    },
    #[error("built case is invalid: {0}")]
    InvalidCase(String),
}

/// A multiple-choice question before it is split into information and task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RawMcq {
    pub id: String,
    pub stem: String,
    pub options: Vec<AnswerOption>,
    pub answer_label: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawOptions {
    List(Vec<AnswerOption>),
    Bare(Vec<String>),
    Map(BTreeMap<String, String>),
}

fn option_label(i: usize) -> String {
    if i < 26 {
        char::from(b'A' + i as u8).to_string()
    } else {
        format!("O{}", i + 1)
    }
}

#[derive(Deserialize)]
struct RawMcqRecord {
    id: Option<serde_json::Value>,
    #[serde(alias = "question")]
    stem: String,
    options: RawOptions,
    answer: Option<String>,
    answer_idx: Option<String>,
}

impl RawMcqRecord {
    fn resolve(self, fallback_id: String) -> Result<RawMcq, String> {
        let options = match self.options {
            RawOptions::List(list) => list,
            RawOptions::Bare(texts) => texts
                .into_iter()
                .enumerate()
                .map(|(i, text)| AnswerOption { label: option_label(i), text })
                .collect(),
            RawOptions::Map(map) => map
                .into_iter()
                .map(|(label, text)| AnswerOption { label, text })
                .collect(),
        };
        // answer_idx carries the label; a bare answer may be a label or the option text
        let answer_label = match (self.answer_idx, self.answer) {
            (Some(idx), _) => idx,
            (None, Some(ans)) => {
                if options.iter().any(|o| o.label == ans) {
                    ans
                } else {
                    options
                        .iter()
                        .find(|o| o.text.trim() == ans.trim())
                        .map(|o| o.label.clone())
                        .ok_or_else(|| format!("answer {ans:?} matches no option"))?
                }
            }
            (None, None) => return Err("missing answer".to_string()),
        };
        let id = match self.id {
            None | Some(serde_json::Value::Null) => fallback_id,
            Some(serde_json::Value::String(s)) => s,
            Some(other) => other.to_string(),
        };
        Ok(RawMcq {
            id,
            stem: self.stem,
            options,
            answer_label,
        })
    }
}

/// Parses one raw-question line. Options may be a `{label, text}` list or a
/// label-to-text map; the answer may be given as `answer` or `answer_idx`.
pub fn parse_raw_mcq_line(line: &str, fallback_id: &str) -> Result<RawMcq, String> {
    let record: RawMcqRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    record.resolve(fallback_id.to_string())
}

/// Reads a raw-question file. Records without an id are named `q<line>`.
pub fn read_raw_mcqs(path: &Path) -> Result<Vec<RawMcq>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| JsonlError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mcq = parse_raw_mcq_line(line, &format!("q{}", i + 1)).map_err(|message| {
            DatasetError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            }
        })?;
        out.push(mcq);
    }
    Ok(out)
}

impl RawMcq {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.stem.trim().is_empty() {
            out.push("empty stem".to_string());
        }
        let task = TaskSpec {
            question: "?".to_string(),
            options: self.options.clone(),
            answer_label: self.answer_label.clone(),
        };
        out.extend(task.violations().iter().map(|v| v.to_string()));
        out
    }
}

/// Sentence spans of `text`: a sentence ends at `.`, `?` or `!` followed by
/// whitespace or the end of input, so decimals like `39.1` stay intact.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') {
            // swallow closing quotes/brackets and repeated punctuation
            let mut end = i + c.len_utf8();
            while let Some(&(j, n)) = chars.peek() {
                if matches!(n, '.' | '?' | '!' | '"' | '\'' | ')' | ']') {
                    end = j + n.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            let at_boundary = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
            if at_boundary {
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

fn is_interrogative(sentence: &str) -> bool {
    sentence.trim_end_matches(['"', '\'', ')', ']']).ends_with('?')
}

/// Separates the informational part from the task. The task is the last run
/// of consecutive questions plus anything after it; without any question the
/// last sentence is the task.
pub fn split_mcq(mcq: &RawMcq) -> Result<(String, TaskSpec), DatasetError> {
    let sentences = split_sentences(&mcq.stem);
    if sentences.is_empty() {
        return Err(DatasetError::Precondition("stem has no sentence".into()));
    }
    let start = match sentences.iter().rposition(|s| is_interrogative(s)) {
        Some(mut i) => {
            while i > 0 && is_interrogative(sentences[i - 1]) {
                i -= 1;
            }
            i
        }
        None => sentences.len() - 1,
    };
    if start == 0 {
        return Err(DatasetError::NoInformationalPart);
    }
    Ok((
        sentences[..start].join(" "),
        TaskSpec {
            question: sentences[start..].join(" "),
            options: mcq.options.clone(),
            answer_label: mcq.answer_label.clone(),
        },
    ))
}

fn strip_code_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(inner) = t.strip_prefix("```") else { return t };
    let inner = inner.split_once('\n').map_or("", |(_, rest)| rest);
    inner.trim_end().strip_suffix("```").unwrap_or(inner).trim()
}

fn json_scalar(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        serde_json::Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(json_scalar).collect();
            (!parts.is_empty()).then(|| parts.join(", "))
        }
        _ => None,
    }
}

fn pairs_from_json(v: &serde_json::Value) -> Option<Vec<(String, String)>> {
    use serde_json::Value;
    let mut out = Vec::new();
    match v {
        Value::Object(map) => {
            for (k, val) in map {
                out.push((k.clone(), json_scalar(val)?));
            }
        }
        Value::Array(items) => {
            for item in items {
                match item {
                    Value::Object(obj) if obj.contains_key("key") => {
                        let k = obj.get("key").and_then(json_scalar)?;
                        let val = obj.get("value").and_then(json_scalar)?;
                        out.push((k, val));
                    }
                    Value::Object(obj) => {
                        for (k, val) in obj {
                            out.push((k.clone(), json_scalar(val)?));
                        }
                    }
                    Value::Array(pair) if pair.len() == 2 => {
                        out.push((json_scalar(&pair[0])?, json_scalar(&pair[1])?));
                    }
                    _ => return None,
                }
            }
        }
        _ => return None,
    }
    Some(out)
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim_start();
    for b in ["- ", "* ", "• "] {
        if let Some(rest) = t.strip_prefix(b) {
            return rest;
        }
    }
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r;
        }
    }
    t
}

/// Reads extractor output as JSON (object, list of `{key, value}`, or list of
/// pairs) or as `key: value` lines, optionally bulleted. `None` when nothing
/// usable is found.
pub fn parse_extraction_output(raw: &str) -> Option<Vec<(String, String)>> {
    let body = strip_code_fence(raw);
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(body) {
        return pairs_from_json(&v).filter(|p| !p.is_empty());
    }
    let pairs: Vec<(String, String)> = body
        .lines()
        .filter_map(|line| {
            let (k, v) = strip_bullet(line).split_once(':')?;
            let k = k.trim().trim_matches(['*', '"']).trim();
            let v = v.trim().trim_matches('"').trim();
            (!k.is_empty() && !v.is_empty()).then(|| (k.to_string(), v.to_string()))
        })
        .collect();
    (!pairs.is_empty()).then_some(pairs)
}

/// Tokens of `text` that carry content (stopwords removed).
pub fn content_words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// True when `value` shares at least one content word with `medical_info`.
pub fn is_grounded(value: &str, medical_info: &str) -> bool {
    let source: HashSet<String> = content_words(medical_info).into_iter().collect();
    content_words(value).iter().any(|w| source.contains(w))
}

fn first_mention(value: &str, info_tokens: &[String]) -> usize {
    let needle = tokenize(value);
    if let Some(pos) = (!needle.is_empty())
        .then(|| info_tokens.windows(needle.len()).position(|w| w == needle.as_slice()))
        .flatten()
    {
        return pos;
    }
    content_words(value)
        .iter()
        .filter_map(|w| info_tokens.iter().position(|t| t == w))
        .min()
        .unwrap_or(usize::MAX)
}

/// Keeps grounded pairs, merges repeated keys, and orders facts by where their
/// value first appears in `medical_info`.
pub fn ground_facts(pairs: &[(String, String)], medical_info: &str) -> Vec<MedicalFact> {
    let info_tokens = tokenize(medical_info);
    let mut merged: Vec<MedicalFact> = Vec::new();
    for (k, v) in pairs {
        let Some(fact) = MedicalFact::new(k, v) else { continue };
        if !is_grounded(&fact.value, medical_info) {
            continue;
        }
        match merged.iter_mut().find(|f| f.key == fact.key) {
            Some(existing) if existing.value != fact.value => {
                existing.value = format!("{}; {}", existing.value, fact.value)
            }
            Some(_) => {}
            None => merged.push(fact),
        }
    }
    let mut keyed: Vec<(usize, MedicalFact)> = merged
        .into_iter()
        .map(|f| (first_mention(&f.value, &info_tokens), f))
        .collect();
    keyed.sort_by_key(|(pos, _)| *pos);
    keyed.into_iter().map(|(_, f)| f).collect()
}

/// Asks the extractor for facts, retrying unusable output up to `retries` times.
pub fn extract_facts(
    medical_info: &str,
    extractor: &dyn FactExtractor,
    retries: usize,
) -> Result<Vec<MedicalFact>, DatasetError> {
    if medical_info.trim().is_empty() {
        return Err(DatasetError::Precondition("empty medical_info".into()));
    }
    let mut last = DatasetError::ExtractionEmpty;
    for attempt in 0..=retries {
        let raw = extractor.extract(medical_info, attempt)?;
        match parse_extraction_output(&raw) {
            None => {
                last = DatasetError::Unparseable {
                    attempts: attempt + 1,
                    raw,
                }
            }
            Some(pairs) => {
                let facts = ground_facts(&pairs, medical_info);
                if !facts.is_empty() {
                    return Ok(facts);
                }
                last = DatasetError::ExtractionEmpty;
            }
        }
    }
    Err(last)
}

fn is_opening_key(key: &str) -> bool {
    OPENING_KEYS.contains(&key)
}

/// Keys of facts whose value appears verbatim (as a token sequence) in `text`.
/// Opening keys are allowed, as are values contained in an allowed value.
pub fn initial_request_leaks(text: &str, facts: &[MedicalFact]) -> Vec<String> {
    let tokens = tokenize(text);
    let allowed: Vec<Vec<String>> = facts
        .iter()
        .filter(|f| is_opening_key(&f.key))
        .map(|f| tokenize(&f.value))
        .collect();
    facts
        .iter()
        .filter(|f| !is_opening_key(&f.key))
        .filter(|f| {
            let v = tokenize(&f.value);
            contains_tokens(&tokens, &v) && !allowed.iter().any(|a| contains_tokens(a, &v))
        })
        .map(|f| f.key.clone())
        .collect()
}

pub fn is_first_person(text: &str) -> bool {
    tokenize(text)
        .iter()
        .any(|t| matches!(t.as_str(), "i" | "me" | "my" | "mine" | "myself"))
}

/// Cuts `text` at the last sentence boundary within the word limit; a first
/// sentence that is already too long is cut to the limit.
pub fn truncate_request(text: &str, max_words: usize) -> String {
    let mut kept: Vec<&str> = Vec::new();
    let mut words = 0;
    for s in split_sentences(text) {
        let n = tokenize(s).len();
        if words + n > max_words {
            break;
        }
        words += n;
        kept.push(s);
    }
    if kept.is_empty() {
        return text.split_whitespace().take(max_words).collect::<Vec<_>>().join(" ");
    }
    kept.join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitialRequest {
    pub text: String,
    /// Over-long output was cut at a sentence boundary.
    pub truncated: bool,
}

/// Generates the patient's opening request: first person, at most 25 words,
/// revealing no fact value outside the opening keys.
pub fn generate_initial_request(
    medical_info: &str,
    facts: &[MedicalFact],
    generator: &dyn RequestGenerator,
    retries: usize,
) -> Result<InitialRequest, DatasetError> {
    if medical_info.trim().is_empty() {
        return Err(DatasetError::Precondition("empty medical_info".into()));
    }
    let mut too_long: Option<String> = None;
    let mut last = DatasetError::EmptyRequest;
    for attempt in 0..=retries {
        let text = generator.generate(medical_info, facts, attempt)?.trim().to_string();
        if text.is_empty() {
            last = DatasetError::EmptyRequest;
            continue;
        }
        let leaks = initial_request_leaks(&text, facts);
        if !leaks.is_empty() {
            last = DatasetError::InitialRequestLeak { keys: leaks, text };
            continue;
        }
        if !is_first_person(&text) {
            last = DatasetError::NotFirstPerson(text);
            continue;
        }
        if tokenize(&text).len() > INITIAL_REQUEST_MAX_WORDS {
            too_long.get_or_insert(text);
            continue;
        }
        return Ok(InitialRequest { text, truncated: false });
    }
    match too_long {
        Some(text) => {
            let cut = truncate_request(&text, INITIAL_REQUEST_MAX_WORDS);
            if is_first_person(&cut) {
                Ok(InitialRequest { text: cut, truncated: true })
            } else {
                Err(DatasetError::NotFirstPerson(cut))
            }
        }
        None => Err(last),
    }
}

/// Golden training dialogue: the opening request, one doctor question and
/// patient answer per fact in fact order, then the doctor's analysis.
pub fn generate_golden_dialogue(
    case: &ConsultationCase,
    doctor: &dyn GoldenDoctor,
    patient: &dyn Patient,
) -> Result<Transcript, DatasetError> {
    if case.facts.is_empty() {
        return Err(DatasetError::Precondition("case has no facts".into()));
    }
    let fail = |turn: usize, source: AgentError| DatasetError::Golden {
        case_id: case.id.clone(),
        turn,
        source,
    };
    let mut t = Transcript::start(&case.id, &case.initial_request, GOLDEN_DOCTOR_ID, GOLDEN_PATIENT_ID, "");
    for fact in &case.facts {
        let q = doctor.ask(case, fact, &t).map_err(|e| fail(t.turns.len(), e))?;
        if q.trim().is_empty() {
            return Err(fail(t.turns.len(), AgentError::EmptyReply));
        }
        t.push(Role::Doctor, q.trim());
        let reply = patient_respond(patient, case, &t).map_err(|e| fail(t.turns.len(), e))?;
        t.push(Role::Patient, &reply.text);
    }
    let analysis = doctor.conclude(case, &t).map_err(|e| fail(t.turns.len(), e))?;
    if analysis.trim().is_empty() {
        return Err(fail(t.turns.len(), AgentError::EmptyReply));
    }
    t.push(Role::Doctor, analysis.trim());
    t.termination = Termination::DoctorStopped;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_instances: usize,
    pub mean_options_per_question: f64,
    pub mean_words_per_medical_info: f64,
    pub mean_words_per_initial_request: f64,
    pub mean_items_per_medical_info: f64,
}

pub fn compute_corpus_stats(corpus: &[ConsultationCase]) -> CorpusStats {
    let n = corpus.len();
    let mean = |f: &dyn Fn(&ConsultationCase) -> usize| {
        if n == 0 {
            0.0
        } else {
            corpus.iter().map(f).sum::<usize>() as f64 / n as f64
        }
    };
    CorpusStats {
        n_instances: n,
        mean_options_per_question: mean(&|c| c.task.options.len()),
        mean_words_per_medical_info: mean(&|c| tokenize(&c.medical_info).len()),
        mean_words_per_initial_request: mean(&|c| tokenize(&c.initial_request).len()),
        mean_items_per_medical_info: mean(&|c| c.facts.len()),
    }
}

pub fn render_stats_table(stats: &CorpusStats) -> String {
    let rows = vec![
        vec!["Statistic".to_string(), "Value".to_string()],
        vec!["# of instances".into(), stats.n_instances.to_string()],
        vec!["# of options per question".into(), format!("{:.2}", stats.mean_options_per_question)],
        vec!["# of words per medical information".into(), format!("{:.2}", stats.mean_words_per_medical_info)],
        vec!["# of words per initial request".into(), format!("{:.2}", stats.mean_words_per_initial_request)],
        vec!["# of items per medical information".into(), format!("{:.2}", stats.mean_items_per_medical_info)],
    ];
    crate::metrics::render_grid(&rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFrequency {
    pub key: String,
    pub count: usize,
}

/// The `n` most frequent fact keys, count descending, ties by key.
pub fn top_key_frequencies(corpus: &[ConsultationCase], n: usize) -> Vec<KeyFrequency> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for fact in corpus.iter().flat_map(|c| &c.facts) {
        *counts.entry(normalize_key(&fact.key)).or_default() += 1;
    }
    let mut out: Vec<KeyFrequency> = counts
        .into_iter()
        .map(|(key, count)| KeyFrequency { key, count })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
    out.truncate(n);
    out
}

#[derive(Clone)]
pub struct BuildAgents {
    pub extractor: Arc<dyn FactExtractor>,
    pub request_generator: Arc<dyn RequestGenerator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    pub source: String,
    /// Extra attempts after unusable agent output.
    pub retries: usize,
    /// Drop questions whose stem repeats an earlier one.
    pub dedup: bool,
    pub parallelism: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            source: "demo".to_string(),
            retries: 2,
            dedup: false,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BuildFailure {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutput {
    pub cases: Vec<ConsultationCase>,
    pub failures: Vec<BuildFailure>,
    /// Ids whose initial request was cut to the word limit.
    pub truncated_requests: Vec<String>,
    /// Ids dropped as duplicate stems.
    pub duplicates: Vec<String>,
}

pub fn build_case(
    mcq: &RawMcq,
    agents: &BuildAgents,
    opts: &BuildOptions,
) -> Result<(ConsultationCase, bool), DatasetError> {
    let problems = mcq.violations();
    if !problems.is_empty() {
        return Err(DatasetError::InvalidMcq(problems.join("; ")));
    }
    let (medical_info, task) = split_mcq(mcq)?;
    let facts = extract_facts(&medical_info, agents.extractor.as_ref(), opts.retries)?;
    let request = generate_initial_request(
        &medical_info,
        &facts,
        agents.request_generator.as_ref(),
        opts.retries,
    )?;
    let case = ConsultationCase {
        id: mcq.id.clone(),
        source: opts.source.clone(),
        medical_info,
        facts,
        initial_request: request.text,
        task,
    };
    let violations = validate_case(&case);
    if !violations.is_empty() {
        let joined = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>();
        return Err(DatasetError::InvalidCase(joined.join("; ")));
    }
    Ok((case, request.truncated))
}

fn stem_key(stem: &str) -> String {
    stem.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Builds a corpus from raw questions, isolating per-question failures.
/// Output order follows input order.
pub fn build_corpus(mcqs: &[RawMcq], agents: &BuildAgents, opts: &BuildOptions) -> BuildOutput {
    let mut out = BuildOutput::default();
    let mut seen_ids = HashSet::new();
    let mut seen_stems = HashSet::new();
    let mut todo = Vec::new();
    for mcq in mcqs {
        if opts.dedup && !seen_stems.insert(stem_key(&mcq.stem)) {
            out.duplicates.push(mcq.id.clone());
            continue;
        }
        if !seen_ids.insert(mcq.id.clone()) {
            out.failures.push(BuildFailure {
                id: mcq.id.clone(),
                reason: "duplicate id".to_string(),
            });
            continue;
        }
        todo.push(mcq);
    }
    let build = || {
        use rayon::prelude::*;
        todo.par_iter()
            .map(|mcq| (mcq.id.clone(), build_case(mcq, agents, opts)))
            .collect::<Vec<_>>()
    };
    let results = match rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(build),
        Err(_) => build(),
    };
    for (id, result) in results {
        match result {
            Ok((case, truncated)) => {
                if truncated {
                    out.truncated_requests.push(id);
                }
                out.cases.push(case);
            }
            Err(e) => out.failures.push(BuildFailure {
                id,
                reason: e.to_string(),
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::scripted::{HeuristicExtractor, ScriptedGoldenDoctor, TemplateRequestGenerator};
    use crate::agents::ScriptedPatient;
    use crate::model::tests_support::case_with_facts;

    fn mcq(stem: &str) -> RawMcq {
        RawMcq {
            id: "q".into(),
            stem: stem.into(),
            options: vec![
                AnswerOption { label: "A".into(), text: "x".into() },
                AnswerOption { label: "B".into(), text: "y".into() },
            ],
            answer_label: "A".into(),
        }
    }

    #[test]
    fn split_examples() {
        let (info, task) = split_mcq(&mcq(
            "A 45-year-old man reports chest pain for 2 hours. Which of the following is the most likely diagnosis?",
        ))
        .unwrap();
        assert_eq!(info, "A 45-year-old man reports chest pain for 2 hours.");
        assert_eq!(task.question, "Which of the following is the most likely diagnosis?");

        let err = split_mcq(&mcq("Which drug inhibits DNA gyrase?")).unwrap_err();
        assert_eq!(err.to_string(), "no informational part");

        let (info, task) = split_mcq(&mcq(
            "Temperature is 39.1°C. She is tired. What is the cause? What is the next step?",
        ))
        .unwrap();
        assert_eq!(info, "Temperature is 39.1°C. She is tired.");
        assert_eq!(task.question, "What is the cause? What is the next step?");

        let (info, task) = split_mcq(&mcq("He has a cough. Choose the best treatment")).unwrap();
        assert_eq!((info.as_str(), task.question.as_str()), ("He has a cough.", "Choose the best treatment"));
    }

    #[test]
    fn raw_formats() {
        let a = parse_raw_mcq_line(
            r#"{"question":"Q. W?","options":{"A":"x","B":"y"},"answer":"y","answer_idx":"B"}"#,
            "q1",
        )
        .unwrap();
        assert_eq!((a.id.as_str(), a.answer_label.as_str()), ("q1", "B"));
        let b = parse_raw_mcq_line(
            r#"{"id":7,"stem":"Q. W?","options":[{"label":"A","text":"x"},{"label":"B","text":"y"}],"answer":"x"}"#,
            "q1",
        )
        .unwrap();
        assert_eq!((b.id.as_str(), b.answer_label.as_str()), ("7", "A"));
        assert!(parse_raw_mcq_line(r#"{"stem":"Q","options":{"A":"x"}}"#, "q").is_err());
        let c = parse_raw_mcq_line(r#"{"stem":"Q. W?","options":["x","y","z"],"answer":"C"}"#, "q3").unwrap();
        assert_eq!(c.options[2].label, "C");
        assert_eq!(c.answer_label, "C");
    }

    #[test]
    fn extraction_parsing() {
        let lines = parse_extraction_output("- Age: 23-year-old\n2. temperature: 39.1°C\nnoise").unwrap();
        assert_eq!(lines.len(), 2);
        let json = parse_extraction_output("```json\n{\"age\": \"23-year-old\", \"pulse\": 90}\n```").unwrap();
        assert_eq!(json.len(), 2);
        let list = parse_extraction_output(r#"[{"key":"age","value":"23"},["sex","woman"]]"#).unwrap();
        assert_eq!(list[1], ("sex".to_string(), "woman".to_string()));
        assert!(parse_extraction_output("nothing useful").is_none());
        assert!(parse_extraction_output("[]").is_none());
    }

    #[test]
    fn grounding_and_order() {
        let info = "A 23-year-old woman has a temperature of 39.1°C";
        let pairs = vec![
            ("Temperature".to_string(), "39.1°C".to_string()),
            ("Age".to_string(), "23-year-old".to_string()),
            ("diagnosis".to_string(), "influenza".to_string()),
        ];
        let facts = ground_facts(&pairs, info);
        assert_eq!(
            facts,
            vec![
                MedicalFact::new("age", "23-year-old").unwrap(),
                MedicalFact::new("temperature", "39.1°C").unwrap()
            ]
        );
        let heuristic = extract_facts(info, &HeuristicExtractor, 0).unwrap();
        assert!(heuristic.contains(&MedicalFact::new("age", "23-year-old").unwrap()));
        assert!(heuristic.contains(&MedicalFact::new("temperature", "39.1°C").unwrap()));
        assert!(matches!(extract_facts(" ", &HeuristicExtractor, 0), Err(DatasetError::Precondition(_))));
    }

    struct Fixed(Vec<&'static str>);
    impl RequestGenerator for Fixed {
        fn generate(&self, _: &str, _: &[MedicalFact], attempt: usize) -> Result<String, AgentError> {
            Ok(self.0[attempt.min(self.0.len() - 1)].to_string())
        }
    }
    impl FactExtractor for Fixed {
        fn extract(&self, _: &str, attempt: usize) -> Result<String, AgentError> {
            Ok(self.0[attempt.min(self.0.len() - 1)].to_string())
        }
    }

    #[test]
    fn initial_request_rules() {
        let facts = vec![
            MedicalFact::new("chief complaint", "chest pain").unwrap(),
            MedicalFact::new("blood pressure", "150/90 mm Hg").unwrap(),
        ];
        let ok = generate_initial_request("info", &facts, &Fixed(vec!["I've had chest pain, can you help?"]), 0).unwrap();
        assert!(!ok.truncated);
        let leak = generate_initial_request("info", &facts, &Fixed(vec!["My blood pressure is 150/90 mm Hg."]), 1);
        assert!(matches!(leak, Err(DatasetError::InitialRequestLeak { .. })));
        let retried = generate_initial_request(
            "info",
            &facts,
            &Fixed(vec!["My blood pressure is 150/90 mm Hg.", "I feel unwell. Help me?"]),
            1,
        )
        .unwrap();
        assert_eq!(retried.text, "I feel unwell. Help me?");
        let long = "I have had chest pain since this morning and it hurts a lot. \
                    It gets worse when I walk up the stairs at home or at work every day. Please help.";
        let cut = generate_initial_request("info", &facts, &Fixed(vec![long]), 0).unwrap();
        assert!(cut.truncated);
        assert_eq!(cut.text, "I have had chest pain since this morning and it hurts a lot.");
        assert!(matches!(
            generate_initial_request("info", &facts, &Fixed(vec!["Chest pain."]), 0),
            Err(DatasetError::NotFirstPerson(_))
        ));
    }

    #[test]
    fn extraction_retries_then_reports_raw() {
        let err = extract_facts("He coughs.", &Fixed(vec!["??", "still nothing"]), 1).unwrap_err();
        assert!(matches!(err, DatasetError::Unparseable { attempts: 2, ref raw } if raw == "still nothing"));
        let ok = extract_facts("He coughs.", &Fixed(vec!["??", "symptom: coughs"]), 1).unwrap();
        assert_eq!(ok.len(), 1);
        assert!(matches!(extract_facts("He coughs.", &Fixed(vec!["x: fever"]), 0), Err(DatasetError::ExtractionEmpty)));
    }

    #[test]
    fn golden_dialogue_shape() {
        let case = case_with_facts(&[("age", "40"), ("cough", "dry cough"), ("fever", "three days")]);
        let t = generate_golden_dialogue(&case, &ScriptedGoldenDoctor, &ScriptedPatient).unwrap();
        assert_eq!(t.turns.len(), 2 * case.facts.len() + 2);
        assert!(crate::model::validate_transcript(&t).is_empty());
        assert_eq!(t.turns[1].text, "Can you tell me about age?");
        assert_eq!(t.turns[2].text, "My age is 40.");
        assert_eq!(t.turns.last().unwrap().role, Role::Doctor);
        let again = generate_golden_dialogue(&case, &ScriptedGoldenDoctor, &ScriptedPatient).unwrap();
        assert_eq!(serde_json::to_string(&t).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn stats_and_frequencies() {
        assert_eq!(compute_corpus_stats(&[]).mean_items_per_medical_info, 0.0);
        let a = case_with_facts(&[("age", "40"), ("sex", "man")]);
        let mut b = case_with_facts(&[("age", "50"), ("pulse", "90")]);
        b.id = "b".into();
        let s = compute_corpus_stats(&[a.clone(), b.clone()]);
        assert_eq!(s.n_instances, 2);
        assert_eq!(s.mean_items_per_medical_info, 2.0);
        let top = top_key_frequencies(&[a, b], 20);
        assert_eq!(top[0], KeyFrequency { key: "age".into(), count: 2 });
        assert_eq!(top[1].key, "pulse");
        assert_eq!(top.iter().map(|k| k.count).sum::<usize>(), 4);
    }

    #[test]
    fn build_isolates_failures() {
        let agents = BuildAgents {
            extractor: Arc::new(HeuristicExtractor),
            request_generator: Arc::new(TemplateRequestGenerator),
        };
        let good = RawMcq {
            id: "good".into(),
            ..mcq("A 30-year-old man has had a cough for 3 days. Temperature is 38.5°C. What is the diagnosis?")
        };
        let bad = RawMcq { id: "bad".into(), ..mcq("What is it?") };
        let dup = RawMcq { id: "dup".into(), ..good.clone() };
        let opts = BuildOptions { dedup: true, ..BuildOptions::default() };
        let out = build_corpus(&[good, bad, dup], &agents, &opts);
        assert_eq!(out.cases.len(), 1);
        assert_eq!(out.failures, vec![BuildFailure { id: "bad".into(), reason: "no informational part".into() }]);
        assert_eq!(out.duplicates, vec!["dup".to_string()]);
    }
}
