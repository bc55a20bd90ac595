//! Consultation loop, bound modes, transcript truncation, and the batch driver.
//!
//! A run directory holds `run_config.json`, `transcripts.jsonl`, `results.jsonl`
//! (the checkpoint, one [`CaseResult`] per line), `records.jsonl`, `report.json`
//! and `report.txt`. Transcripts are appended before the solver runs and results
//! right after, so an interrupted batch resumes without redoing finished cases.

use crate::agents::{
    doctor_query, patient_respond, solve_task, AgentError, AgentPolicy, Doctor, Patient, Solver,
};
use crate::digest::json_digest;
use crate::jsonl::{self, JsonlError};
use crate::metrics::{self, CoverageOptions, MetricsError, RunReport};
use crate::model::{
    read_transcripts, ConsultationCase, EvalRecord, Role, RunMode, TaskSpec, Termination,
    Transcript,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

const INTERROGATIVE_OPENERS: &[&str] = &[
    "what", "when", "where", "how", "do", "does", "did", "have", "has", "is", "are", "can", "could",
];

/// True when the doctor has stopped inquiring: no question mark anywhere and no
/// sentence opening with an interrogative word.
pub fn detect_termination(doctor_text: &str) -> bool {
    if doctor_text.contains('?') {
        return false;
    }
    !doctor_text
        .split(['.', '!', '\n', ';'])
        .filter_map(|sentence| {
            sentence
                .split(|c: char| !c.is_alphanumeric() && c != '\'')
                .find(|w| !w.is_empty())
        })
        .any(|first| INTERROGATIVE_OPENERS.contains(&first.to_lowercase().as_str()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextOptions {
    /// Keep the doctor's closing diagnosis turn in the solver context.
    pub include_final_doctor_turn: bool,
}

impl Default for ContextOptions {
    fn default() -> Self {
        ContextOptions {
            include_final_doctor_turn: true,
        }
    }
}

fn render_task(task: &TaskSpec) -> String {
    let mut out = format!("Question: {}\nOptions:\n", task.question.trim());
    for opt in &task.options {
        out.push_str(&format!("{}. {}\n", opt.label, opt.text.trim()));
    }
    out.push_str("Answer with the letter of the single best option.");
    out
}

/// Dialogue as `Doctor:`/`Patient:` lines, then the question, the lettered
/// options, and the answer instruction.
pub fn render_solver_context(transcript: &Transcript, task: &TaskSpec, opts: &ContextOptions) -> String {
    let mut turns: &[_] = &transcript.turns;
    let ends_with_closing = transcript.termination == Termination::DoctorStopped
        && turns.last().is_some_and(|t| t.role == Role::Doctor);
    if !opts.include_final_doctor_turn && ends_with_closing {
        turns = &turns[..turns.len() - 1];
    }
    let dialogue = turns
        .iter()
        .map(|t| format!("{}: {}", t.role, t.text))
        .collect::<Vec<_>>()
        .join("\n");
    format!("Consultation:\n{dialogue}\n\n{}", render_task(task))
}

/// Upper bound sees the full medical information, lower bound only the initial request.
pub fn render_bound_context(case: &ConsultationCase, mode: RunMode) -> String {
    let body = match mode {
        RunMode::UpperBound => format!("Medical information:\n{}", case.medical_info),
        RunMode::LowerBound | RunMode::Consultation => {
            format!("Consultation:\nPatient: {}", case.initial_request)
        }
    };
    format!("{body}\n\n{}", render_task(&case.task))
}

/// Keeps turn 0 plus the first `max(1, floor(p·K))` doctor turns (each with the
/// patient reply that follows it), where K is the number of doctor turns.
pub fn truncate_transcript(transcript: &Transcript, p: f64) -> Transcript {
    assert!(p > 0.0 && p <= 1.0, "percentage must lie in (0, 1], got {p}");
    let k = transcript.doctor_turn_count();
    // the epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    let keep = ((p * k as f64 + 1e-9).floor() as usize).max(1).min(k);
    let mut end = transcript.turns.len().min(1);
    let mut seen = 0;
    for (i, turn) in transcript.turns.iter().enumerate().skip(1) {
        if turn.role == Role::Doctor {
            if seen == keep {
                break;
            }
            seen += 1;
        }
        end = i + 1;
    }
    Transcript {
        turns: transcript.turns[..end].to_vec(),
        ..transcript.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub doctor_policy: AgentPolicy,
    pub patient_policy: AgentPolicy,
    pub solver_policy: AgentPolicy,
    /// Cap on doctor turns.
    pub max_turns: usize,
    pub parallelism: usize,
    pub mode: RunMode,
    pub replay: bool,
    #[serde(default)]
    pub context: ContextOptions,
    #[serde(default)]
    pub coverage: CoverageOptions,
}

#[derive(Serialize)]
struct SemanticConfig<'a> {
    doctor_policy: &'a AgentPolicy,
    patient_policy: &'a AgentPolicy,
    solver_policy: &'a AgentPolicy,
    max_turns: usize,
    mode: RunMode,
    context: &'a ContextOptions,
    coverage: &'a CoverageOptions,
}

impl RunConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_turns < 1 {
            out.push("max_turns must be at least 1".to_string());
        }
        if self.parallelism < 1 {
            out.push("parallelism must be at least 1".to_string());
        }
        for p in [&self.doctor_policy, &self.patient_policy, &self.solver_policy] {
            out.extend(p.validate());
        }
        out
    }

    /// Digest of everything that can change a result. Parallelism and replay
    /// only affect how results are obtained, so they are left out.
    pub fn digest(&self) -> String {
        json_digest(&SemanticConfig {
            doctor_policy: &self.doctor_policy,
            patient_policy: &self.patient_policy,
            solver_policy: &self.solver_policy,
            max_turns: self.max_turns,
            mode: self.mode,
            context: &self.context,
            coverage: &self.coverage,
        })
    }

    pub fn report_label(&self) -> String {
        match self.mode {
            RunMode::Consultation => self.doctor_policy.id.clone(),
            RunMode::UpperBound => "Upper-B".to_string(),
            RunMode::LowerBound => "Lower-B".to_string(),
        }
    }
}

/// The live agents for a run, matching the policies in its [`RunConfig`].
#[derive(Clone)]
pub struct RunAgents {
    pub doctor: Arc<dyn Doctor>,
    pub patient: Arc<dyn Patient>,
    pub solver: Arc<dyn Solver>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub mode: RunMode,
    pub config_digest: String,
    pub solver_choice: Option<String>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub verbosity_violations: usize,
    #[serde(default)]
    pub leaked_keys: Vec<String>,
}

impl CaseResult {
    fn new(case: &ConsultationCase, mode: RunMode, digest: &str) -> Self {
        CaseResult {
            case_id: case.id.clone(),
            mode,
            config_digest: digest.to_string(),
            solver_choice: None,
            correct: false,
            error: None,
            verbosity_violations: 0,
            leaked_keys: Vec::new(),
        }
    }

    fn record_solver(&mut self, case: &ConsultationCase, outcome: Result<Option<String>, AgentError>) {
        match outcome {
            Ok(choice) => {
                self.correct = choice.as_deref() == Some(case.task.answer_label.as_str());
                self.solver_choice = choice;
            }
            Err(e) => self.error = Some(format!("solver: {e}")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// Runs the doctor/patient loop to completion, hands the transcript to `persist`,
/// then solves the task from the transcript. Agent failures end the dialogue
/// with `Termination::Error` and are reported in the result, not as `Err`.
pub fn run_consultation(
    case: &ConsultationCase,
    agents: &RunAgents,
    config: &RunConfig,
    persist: &dyn Fn(&Transcript) -> Result<(), RunError>,
) -> Result<(Transcript, CaseResult), RunError> {
    let digest = config.digest();
    let mut result = CaseResult::new(case, RunMode::Consultation, &digest);
    let mut transcript = Transcript::start(
        &case.id,
        &case.initial_request,
        &config.doctor_policy.id,
        &config.patient_policy.id,
        &digest,
    );
    let mut doctor_turns = 0;
    let outcome: Result<Termination, (usize, AgentError)> = loop {
        if doctor_turns >= config.max_turns {
            break Ok(Termination::MaxTurns);
        }
        let utterance = match doctor_query(agents.doctor.as_ref(), case, &transcript) {
            Ok(u) => u,
            Err(e) => break Err((transcript.turns.len(), e)),
        };
        transcript.push(Role::Doctor, &utterance.text);
        doctor_turns += 1;
        if utterance.is_terminal {
            break Ok(Termination::DoctorStopped);
        }
        match patient_respond(agents.patient.as_ref(), case, &transcript) {
            Ok(reply) => {
                result.verbosity_violations += usize::from(reply.verbosity_violation);
                result.leaked_keys.extend(reply.leaked_keys);
                transcript.push(Role::Patient, &reply.text);
            }
            Err(e) => break Err((transcript.turns.len(), e)),
        }
    };
    match outcome {
        Ok(termination) => transcript.termination = termination,
        Err((turn, e)) => {
            transcript.termination = Termination::Error;
            result.error = Some(format!("case {} turn {turn}: {e}", case.id));
        }
    }
    persist(&transcript)?;
    if result.error.is_none() {
        let context = render_solver_context(&transcript, &case.task, &config.context);
        result.record_solver(case, solve_task(agents.solver.as_ref(), case, &context));
    }
    Ok((transcript, result))
}

/// Solves the task without any dialogue, from the full medical information
/// (upper bound) or the initial request alone (lower bound).
pub fn run_bound(case: &ConsultationCase, solver: &dyn Solver, config: &RunConfig) -> CaseResult {
    let mut result = CaseResult::new(case, config.mode, &config.digest());
    let context = render_bound_context(case, config.mode);
    result.record_solver(case, solve_task(solver, case, &context));
    result
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    /// Present exactly in consultation mode.
    pub transcript: Option<Transcript>,
    pub result: CaseResult,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub outcomes: Vec<CaseOutcome>,
    pub records: Vec<EvalRecord>,
    pub report: RunReport,
    /// Cases actually executed (the rest came from the checkpoint).
    pub executed: usize,
}

pub const RESULTS_FILE: &str = "results.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

fn load_checkpoint(
    dir: &Path,
    digest: &str,
    mode: RunMode,
) -> Result<HashMap<String, CaseOutcome>, RunError> {
    let results_path = dir.join(RESULTS_FILE);
    if !results_path.exists() {
        return Ok(HashMap::new());
    }
    let mut transcripts: HashMap<String, Transcript> = HashMap::new();
    let transcripts_path = dir.join(TRANSCRIPTS_FILE);
    if transcripts_path.exists() {
        for t in read_transcripts(&transcripts_path)? {
            if t.config_digest == digest {
                transcripts.insert(t.case_id.clone(), t);
            }
        }
    }
    let mut done = HashMap::new();
    for (_, result) in jsonl::read_records::<CaseResult>(&results_path)? {
        if result.config_digest != digest || result.error.is_some() || result.mode != mode {
            continue;
        }
        let transcript = transcripts.get(&result.case_id).cloned();
        if mode == RunMode::Consultation && transcript.is_none() {
            continue;
        }
        done.insert(result.case_id.clone(), CaseOutcome { transcript, result });
    }
    Ok(done)
}

/// Per-case metric record for an outcome.
pub fn evaluate_outcome(case: &ConsultationCase, outcome: &CaseOutcome, coverage: &CoverageOptions) -> EvalRecord {
    let mut record = match &outcome.transcript {
        Some(t) => metrics::evaluate_transcript(case, t, coverage),
        None => metrics::evaluate_bound(case, outcome.result.mode),
    };
    record.mode = outcome.result.mode;
    record.solver_choice = outcome.result.solver_choice.clone();
    record.correct = outcome.result.correct;
    record.error = outcome.result.error.clone();
    record
}

/// Runs every case with bounded parallelism. Results come back in corpus order
/// whatever the completion order; individual case failures are isolated.
pub fn run_batch(
    corpus: &[ConsultationCase],
    agents: &RunAgents,
    config: &RunConfig,
    run_dir: Option<&Path>,
) -> Result<BatchOutput, RunError> {
    let problems = config.validate();
    if !problems.is_empty() {
        return Err(RunError::Config(problems.join("; ")));
    }
    let digest = config.digest();
    let mut done = HashMap::new();
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| JsonlError::io(dir, e))?;
        let snapshot = serde_json::to_string_pretty(config).expect("config serializes");
        let path = dir.join(RUN_CONFIG_FILE);
        std::fs::write(&path, snapshot).map_err(|e| JsonlError::io(&path, e))?;
        done = load_checkpoint(dir, &digest, config.mode)?;
    }
    let write_lock = Mutex::new(());
    let append = |file: &str, value: &dyn erased::Record| -> Result<(), RunError> {
        if let Some(dir) = run_dir {
            let _guard = write_lock.lock().expect("checkpoint lock");
            value.append_to(&dir.join(file))?;
        }
        Ok(())
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let executed = std::sync::atomic::AtomicUsize::new(0);
    let outcomes: Vec<CaseOutcome> = pool.install(|| {
        use rayon::prelude::*;
        corpus
            .par_iter()
            .map(|case| -> Result<CaseOutcome, RunError> {
                if let Some(prev) = done.get(&case.id) {
                    return Ok(prev.clone());
                }
                executed.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let outcome = match config.mode {
                    RunMode::Consultation => {
                        let persist = |t: &Transcript| append(TRANSCRIPTS_FILE, t);
                        let (t, r) = run_consultation(case, agents, config, &persist)?;
                        CaseOutcome { transcript: Some(t), result: r }
                    }
                    RunMode::UpperBound | RunMode::LowerBound => CaseOutcome {
                        transcript: None,
                        result: run_bound(case, agents.solver.as_ref(), config),
                    },
                };
                append(RESULTS_FILE, &outcome.result)?;
                Ok(outcome)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let records: Vec<EvalRecord> = corpus
        .iter()
        .zip(&outcomes)
        .map(|(case, o)| evaluate_outcome(case, o, &config.coverage))
        .collect();
    let report = if records.is_empty() {
        return Err(RunError::Metrics(MetricsError::EmptyRecords));
    } else {
        metrics::aggregate_report(&config.report_label(), &records)?
    };

    if let Some(dir) = run_dir {
        let transcripts: Vec<&Transcript> = outcomes.iter().filter_map(|o| o.transcript.as_ref()).collect();
        let results: Vec<&CaseResult> = outcomes.iter().map(|o| &o.result).collect();
        if config.mode == RunMode::Consultation {
            jsonl::write_records(&dir.join(TRANSCRIPTS_FILE), &transcripts)?;
        }
        jsonl::write_records(&dir.join(RESULTS_FILE), &results)?;
        jsonl::write_records(&dir.join(RECORDS_FILE), &records)?;
        write_report(dir, &report)?;
    }
    Ok(BatchOutput {
        outcomes,
        records,
        report,
        executed: executed.into_inner(),
    })
}

pub fn write_report(dir: &Path, report: &RunReport) -> Result<(), RunError> {
    let json_path = dir.join(REPORT_JSON);
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&json_path, json).map_err(|e| JsonlError::io(&json_path, e))?;
    let txt_path = dir.join(REPORT_TXT);
    std::fs::write(&txt_path, metrics::render_report_table(std::slice::from_ref(report)))
        .map_err(|e| JsonlError::io(&txt_path, e))?;
    Ok(())
}

mod erased {
    use crate::jsonl::{append_record, JsonlError};
    use serde::Serialize;
    use std::path::Path;

    /// Object-safe wrapper so one closure can append either record type.
    pub trait Record: Sync {
        fn append_to(&self, path: &Path) -> Result<(), JsonlError>;
    }

    impl<T: Serialize + Sync> Record for T {
        fn append_to(&self, path: &Path) -> Result<(), JsonlError> {
            append_record(path, self)
        }
    }
}
