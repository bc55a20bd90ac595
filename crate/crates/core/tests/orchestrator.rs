mod support;

use consult_core::agents::{
    AgentError, AgentKind, AgentPolicy, AgentRole, Doctor, DoctorUtterance, MockSolver,
    OracleDoctor, QuestionOrder, ScriptedPatient,
};
use consult_core::dataset::top_key_frequencies;
use consult_core::metrics::{render_report_table, CoverageOptions};
use consult_core::model::{validate_transcript, ConsultationCase, RunMode, Termination, Transcript};
use consult_core::orchestrator::{run_batch, ContextOptions, RunAgents, RunConfig, RESULTS_FILE};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;
use support::demo_corpus;

fn config(max_turns: usize, parallelism: usize, mode: RunMode) -> RunConfig {
    let p = |id: &str, role, kind| AgentPolicy { id: id.into(), role, kind };
    RunConfig {
        doctor_policy: p(
            "oracle-direct",
            AgentRole::Doctor,
            AgentKind::Oracle { order: consult_core::agents::policy::OrderName::Direct, seed: 0 },
        ),
        patient_policy: p("scripted", AgentRole::Patient, AgentKind::ScriptedPatient),
        solver_policy: p("mock", AgentRole::Solver, AgentKind::MockSolver { threshold: 0.8 }),
        max_turns,
        parallelism,
        mode,
        replay: false,
        context: ContextOptions::default(),
        coverage: CoverageOptions::default(),
    }
}

/// Oracle doctor that fails on one case at its third turn and counts calls.
struct Flaky {
    fail_on: Option<String>,
    calls: AtomicUsize,
    jitter: bool,
}

impl Doctor for Flaky {
    fn query(&self, case: &ConsultationCase, history: &Transcript) -> Result<DoctorUtterance, AgentError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.jitter {
            let ms = (case.id.len() * 7 + history.turns.len() * 3) % 5;
            std::thread::sleep(Duration::from_millis(ms as u64));
        }
        if self.fail_on.as_deref() == Some(case.id.as_str()) && history.doctor_turn_count() == 2 {
            return Err(AgentError::Precondition("simulated outage".into()));
        }
        OracleDoctor { order: QuestionOrder::Direct }.query(case, history)
    }
}

fn agents(doctor: Arc<dyn Doctor>) -> RunAgents {
    RunAgents { doctor, patient: Arc::new(ScriptedPatient), solver: Arc::new(MockSolver::default()) }
}

#[test]
fn failures_are_isolated_and_resumed() {
    let corpus = demo_corpus();
    let dir = tempfile::tempdir().unwrap();
    let flaky = Arc::new(Flaky { fail_on: Some("demo-002".into()), calls: AtomicUsize::new(0), jitter: false });
    let first = run_batch(&corpus, &agents(flaky), &config(20, 3, RunMode::Consultation), Some(dir.path())).unwrap();
    assert_eq!(first.report.n_errors, 1);
    let failed = &first.outcomes[1];
    let err = failed.result.error.as_deref().unwrap();
    assert!(err.contains("demo-002") && err.contains("turn 5"), "{err}");
    let t = failed.transcript.as_ref().unwrap();
    assert_eq!(t.termination, Termination::Error);
    assert!(validate_transcript(t).is_empty());
    assert!(first.outcomes[0].result.correct && first.outcomes[2].result.correct);

    let healthy = Arc::new(Flaky { fail_on: None, calls: AtomicUsize::new(0), jitter: false });
    let second = run_batch(&corpus, &agents(healthy.clone()), &config(20, 3, RunMode::Consultation), Some(dir.path())).unwrap();
    assert_eq!(second.executed, 1);
    assert_eq!(second.report.n_errors, 0);
    assert_eq!(healthy.calls.load(Ordering::SeqCst), corpus[1].facts.len() + 1);
    let lines = std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 3);

    // a different configuration invalidates the checkpoint
    let third = run_batch(&corpus, &agents(healthy), &config(19, 3, RunMode::Consultation), Some(dir.path())).unwrap();
    assert_eq!(third.executed, 3);
}

#[test]
fn results_follow_corpus_order() {
    let mut corpus = Vec::new();
    for round in 0..6 {
        for case in demo_corpus() {
            corpus.push(ConsultationCase { id: format!("{}-{round}", case.id), ..case });
        }
    }
    let doctor = Arc::new(Flaky { fail_on: None, calls: AtomicUsize::new(0), jitter: true });
    let out = run_batch(&corpus, &agents(doctor), &config(20, 8, RunMode::Consultation), None).unwrap();
    let ids: Vec<&str> = out.outcomes.iter().map(|o| o.result.case_id.as_str()).collect();
    let expected: Vec<&str> = corpus.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, expected);
}

#[test]
fn turn_cap_ends_dialogue() {
    let corpus = demo_corpus();
    let doctor = Arc::new(OracleDoctor { order: QuestionOrder::Direct });
    let out = run_batch(&corpus, &agents(doctor), &config(2, 1, RunMode::Consultation), None).unwrap();
    for o in &out.outcomes {
        let t = o.transcript.as_ref().unwrap();
        assert_eq!(t.termination, Termination::MaxTurns);
        assert_eq!(t.doctor_turn_count(), 2);
        assert!(!o.result.correct);
    }
}

#[test]
fn bound_modes_have_no_transcripts() {
    let corpus = demo_corpus();
    let doctor = Arc::new(OracleDoctor { order: QuestionOrder::Direct });
    let out = run_batch(&corpus, &agents(doctor), &config(20, 2, RunMode::LowerBound), None).unwrap();
    assert!(out.outcomes.iter().all(|o| o.transcript.is_none()));
    let table = render_report_table(&[out.report]);
    let row = table.lines().nth(2).unwrap();
    assert!(row.starts_with("Lower-B"));
    assert_eq!(row.split_whitespace().filter(|c| *c == "-").count(), 6, "{table}");
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let doctor = Arc::new(Flaky { fail_on: None, calls: AtomicUsize::new(0), jitter: false });
    let err = run_batch(&demo_corpus(), &agents(doctor.clone()), &config(0, 1, RunMode::Consultation), None);
    assert!(err.is_err());
    assert_eq!(doctor.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn key_counts_are_conserved() {
    let corpus = demo_corpus();
    let total: usize = corpus.iter().map(|c| c.facts.len()).sum();
    let all = top_key_frequencies(&corpus, usize::MAX);
    assert_eq!(all.iter().map(|k| k.count).sum::<usize>(), total);
    assert_eq!(all[0].key, "age");
    assert!(top_key_frequencies(&corpus, 0).is_empty());
}
