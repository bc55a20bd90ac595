//! Invariant checks shared by the fuzz targets and the seed-replay test in
//! `consult-core`. Each function must not panic on any input.

use consult_core::agents::gateway::parse_chat_response;
use consult_core::agents::{parse_solver_choice, Template};
use consult_core::config::HarnessConfig;
use consult_core::dataset::{parse_extraction_output, parse_raw_mcq_line, split_mcq};
use consult_core::metrics::tokenize;
use consult_core::model::{parse_case_line, parse_transcript_line, AnswerOption, TaskSpec};
use std::path::Path;

pub fn case_line(data: &[u8]) {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(case) = parse_case_line(line) {
        let again = serde_json::to_string(&case).unwrap();
        assert_eq!(parse_case_line(&again).unwrap(), case);
    }
}

pub fn transcript_line(data: &[u8]) {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_transcript_line(line) {
        let again = serde_json::to_string(&t).unwrap();
        assert_eq!(parse_transcript_line(&again).unwrap(), t);
    }
}

pub fn raw_mcq_line(data: &[u8]) {
    let Ok(line) = std::str::from_utf8(data) else { return };
    let Ok(mcq) = parse_raw_mcq_line(line, "fuzz") else { return };
    let _ = mcq.violations();
    if let Ok((info, task)) = split_mcq(&mcq) {
        assert!(!info.trim().is_empty());
        assert_eq!(task.options, mcq.options);
    }
}

pub fn extraction_output(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Some(pairs) = parse_extraction_output(text) {
        assert!(pairs.iter().all(|(k, _)| !k.trim().is_empty()));
    }
}

pub fn solver_choice(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let task = TaskSpec {
        question: "Which is most likely?".into(),
        options: ["aspirin", "heparin", "no treatment", "surgery"]
            .iter()
            .zip(["A", "B", "C", "D"])
            .map(|(t, l)| AnswerOption { label: l.into(), text: (*t).into() })
            .collect(),
        answer_label: "A".into(),
    };
    if let Some(label) = parse_solver_choice(text, &task) {
        assert!(task.options.iter().any(|o| o.label == label));
    }
}

pub fn chat_response(data: &[u8]) {
    let _ = parse_chat_response(data);
}

pub fn mcq_split(data: &[u8]) {
    let Ok(stem) = std::str::from_utf8(data) else { return };
    let mcq = consult_core::dataset::RawMcq {
        id: "fuzz".into(),
        stem: stem.to_string(),
        options: vec![
            AnswerOption { label: "A".into(), text: "x".into() },
            AnswerOption { label: "B".into(), text: "y".into() },
        ],
        answer_label: "A".into(),
    };
    if let Ok((info, task)) = split_mcq(&mcq) {
        let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        assert_eq!(squash(&format!("{info} {}", task.question)), squash(stem));
    }
}

pub fn template(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(t) = Template::parse(text) else { return };
    let names: Vec<&str> = t.placeholders().into_iter().collect();
    let vars: Vec<(&str, &str)> = names.iter().map(|n| (*n, "{{x}}")).collect();
    let rendered = t.render(&vars).unwrap();
    if names.is_empty() {
        assert_eq!(rendered, text);
    } else if let Some(missing) = names.first() {
        let partial: Vec<(&str, &str)> = vars.iter().copied().filter(|(n, _)| n != missing).collect();
        assert!(t.render(&partial).is_err());
    }
}

pub fn tokens(data: &[u8]) {
    let text = String::from_utf8_lossy(data);
    let once = tokenize(&text);
    assert!(once.iter().all(|w| !w.is_empty()));
    assert_eq!(tokenize(&once.join(" ")), once);
}

pub fn harness_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = HarnessConfig::parse(text, Path::new("/fuzz/config.toml")) {
        let _ = cfg.validate(true);
        let _ = cfg.digest();
    }
}

/// Target name to check, for replaying seed directories.
pub const TARGETS: &[(&str, fn(&[u8]))] = &[
    ("parse_case_line", case_line),
    ("parse_transcript_line", transcript_line),
    ("parse_raw_mcq_line", raw_mcq_line),
    ("parse_extraction_output", extraction_output),
    ("parse_solver_choice", solver_choice),
    ("parse_chat_response", chat_response),
    ("split_mcq", mcq_split),
    ("template_parse", template),
    ("tokenize", tokens),
    ("harness_config", harness_config),
];
