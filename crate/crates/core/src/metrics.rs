//! Tokenizer, ROUGE scoring, coverage and diversity measures, and run-level
//! aggregation.
//!
//! Every word count in the harness (corpus statistics, turn lengths, coverage
//! scores) goes through [`tokenize`], so all of them share one definition of a
//! word. Scores are stored raw in `[0, 1]` and only scaled by 100 when
//! rendered.

use crate::agents::{solve_task, Solver};
use crate::model::{
    ConsultationCase, DiversityScores, EvalRecord, MedicalFact, Role, RunMode, Transcript,
};
use crate::orchestrator::{render_solver_context, truncate_transcript, ContextOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt::Write as _;

/// Lowercases, then splits on every non-alphanumeric character. Empty pieces are
/// dropped; there is no stemming or stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore {
        recall: 0.0,
        precision: 0.0,
        f1: 0.0,
    };

    pub fn from_recall_precision(recall: f64, precision: f64) -> Self {
        RougeScore {
            recall,
            precision,
            f1: harmonic_mean(recall, precision),
        }
    }

    /// `matches` over the reference and candidate totals; an empty side yields 0.
    pub fn from_counts(matches: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |total: usize| {
            if total == 0 {
                0.0
            } else {
                matches as f64 / total as f64
            }
        };
        Self::from_recall_precision(ratio(reference_total), ratio(candidate_total))
    }

    /// Range check plus the harmonic-mean identity within 1e-9.
    pub fn check(&self) -> Result<(), String> {
        for (name, v) in [
            ("recall", self.recall),
            ("precision", self.precision),
            ("f1", self.f1),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} {v} outside [0, 1]"));
            }
        }
        let expected = harmonic_mean(self.recall, self.precision);
        if (expected - self.f1).abs() > 1e-9 {
            return Err(format!("f1 {} is not the harmonic mean {expected}", self.f1));
        }
        Ok(())
    }
}

pub fn harmonic_mean(recall: f64, precision: f64) -> f64 {
    if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        let key: Vec<&str> = window.iter().map(|t| t.as_ref()).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> RougeScore {
    assert!(n >= 1, "rouge_n requires n >= 1");
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matches: usize = refc
        .iter()
        .map(|(gram, &rc)| cand.get(gram).map_or(0, |&cc| cc.min(rc)))
        .sum();
    let total = |len: usize| (len + 1).saturating_sub(n);
    RougeScore::from_counts(matches, total(candidate.len()), total(reference.len()))
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x.as_ref() == y.as_ref() {
                diag + 1
            } else {
                row[j + 1].max(row[j])
            };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L from the longest common subsequence.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    RougeScore::from_counts(
        lcs_len(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RougeVariant {
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "rouge2")]
    Rouge2,
    #[serde(rename = "rougeL")]
    RougeL,
}

impl RougeVariant {
    pub const ALL: [RougeVariant; 3] = [RougeVariant::Rouge1, RougeVariant::Rouge2, RougeVariant::RougeL];

    pub fn score<S: AsRef<str>>(self, candidate: &[S], reference: &[S]) -> RougeScore {
        match self {
            RougeVariant::Rouge1 => rouge_n(candidate, reference, 1),
            RougeVariant::Rouge2 => rouge_n(candidate, reference, 2),
            RougeVariant::RougeL => rouge_l(candidate, reference),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RougeVariant::Rouge1 => "ROUGE-1",
            RougeVariant::Rouge2 => "ROUGE-2",
            RougeVariant::RougeL => "ROUGE-L",
        }
    }
}

/// Which turns count toward coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageOptions {
    pub patient_includes_initial_request: bool,
    pub doctor_includes_final_turn: bool,
}

impl Default for CoverageOptions {
    fn default() -> Self {
        CoverageOptions {
            patient_includes_initial_request: true,
            doctor_includes_final_turn: true,
        }
    }
}

fn concat_tokens<'a>(texts: impl Iterator<Item = &'a str>) -> Vec<String> {
    texts.flat_map(tokenize).collect()
}

/// ROUGE-1 of everything the patient said against the concatenated fact values.
pub fn patient_coverage(
    transcript: &Transcript,
    facts: &[MedicalFact],
    opts: &CoverageOptions,
) -> RougeScore {
    let skip = usize::from(!opts.patient_includes_initial_request);
    let candidate = concat_tokens(
        transcript
            .turns
            .iter()
            .filter(|t| t.role == Role::Patient)
            .skip(skip)
            .map(|t| t.text.as_str()),
    );
    let reference = concat_tokens(facts.iter().map(|f| f.value.as_str()));
    rouge_n(&candidate, &reference, 1)
}

/// ROUGE-1 of everything the doctor said against the concatenated fact keys.
pub fn doctor_coverage(
    transcript: &Transcript,
    facts: &[MedicalFact],
    opts: &CoverageOptions,
) -> RougeScore {
    let turns: Vec<&str> = if opts.doctor_includes_final_turn {
        transcript
            .turns_by(Role::Doctor)
            .map(|t| t.text.as_str())
            .collect()
    } else {
        transcript
            .doctor_queries()
            .into_iter()
            .map(|t| t.text.as_str())
            .collect()
    };
    let candidate = concat_tokens(turns.into_iter());
    let reference = concat_tokens(facts.iter().map(|f| f.key.as_str()));
    rouge_n(&candidate, &reference, 1)
}

/// Mean pairwise similarity (f1 of `variant`) over all ordered pairs `i != j`
/// of the queries. `None` when fewer than two queries exist.
///
/// The pair scores are summed in sorted order, which makes the result exactly
/// invariant under permutations of `queries`.
pub fn diversity<S: AsRef<str>>(queries: &[Vec<S>], variant: RougeVariant) -> Option<f64> {
    let k = queries.len();
    if k < 2 {
        return None;
    }
    // f1 is symmetric in its arguments, so each unordered pair covers (i, j) and (j, i).
    let mut sims = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            sims.push(variant.score(&queries[i], &queries[j]).f1);
        }
    }
    sims.sort_by(f64::total_cmp);
    let total: f64 = sims.iter().sum();
    Some(total / sims.len() as f64)
}

pub fn diversity_scores(transcript: &Transcript) -> Option<DiversityScores> {
    let queries: Vec<Vec<String>> = transcript
        .doctor_queries()
        .into_iter()
        .map(|t| tokenize(&t.text))
        .collect();
    Some(DiversityScores {
        rouge1: diversity(&queries, RougeVariant::Rouge1)?,
        rouge2: diversity(&queries, RougeVariant::Rouge2)?,
        rouge_l: diversity(&queries, RougeVariant::RougeL)?,
    })
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Computes the dialogue metrics of one consultation transcript.
pub fn evaluate_transcript(
    case: &ConsultationCase,
    transcript: &Transcript,
    opts: &CoverageOptions,
) -> EvalRecord {
    let patient_lens: Vec<f64> = transcript
        .turns_by(Role::Patient)
        .skip(1)
        .map(|t| t.word_count as f64)
        .collect();
    let doctor_lens: Vec<f64> = transcript
        .turns_by(Role::Doctor)
        .map(|t| t.word_count as f64)
        .collect();
    EvalRecord {
        case_id: case.id.clone(),
        mode: RunMode::Consultation,
        patient_scores: Some(patient_coverage(transcript, &case.facts, opts)),
        doctor_scores: Some(doctor_coverage(transcript, &case.facts, opts)),
        patient_avg_len: mean_of(&patient_lens),
        doctor_avg_len: mean_of(&doctor_lens),
        turn_count: Some(doctor_lens.len()),
        solver_choice: None,
        correct: false,
        diversity: diversity_scores(transcript),
        error: None,
    }
}

/// Record for a bound-mode case. The lower bound scores the initial request as
/// the only patient output; the upper bound has no patient output at all.
pub fn evaluate_bound(case: &ConsultationCase, mode: RunMode) -> EvalRecord {
    let patient_scores = (mode == RunMode::LowerBound).then(|| {
        let candidate = tokenize(&case.initial_request);
        let reference = concat_tokens(case.fact_values());
        rouge_n(&candidate, &reference, 1)
    });
    EvalRecord {
        case_id: case.id.clone(),
        mode,
        patient_scores,
        doctor_scores: None,
        patient_avg_len: None,
        doctor_avg_len: None,
        turn_count: None,
        solver_choice: None,
        correct: false,
        diversity: None,
        error: None,
    }
}

/// Component-wise means of per-case scores. Unlike [`RougeScore`], `f1` is the
/// mean of per-case f1 values, not the harmonic mean of the mean recall/precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub mode: RunMode,
    pub n_cases: usize,
    pub n_errors: usize,
    pub patient: Option<MeanScores>,
    pub patient_len: Option<f64>,
    pub doctor: Option<MeanScores>,
    pub doctor_len: Option<f64>,
    pub turn: Option<f64>,
    pub accuracy: f64,
    pub diversity: Option<DiversityScores>,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty record list")]
    EmptyRecords,
    #[error("records mix run modes ({0} and {1})")]
    MixedModes(RunMode, RunMode),
    #[error("complexity binning needs at least 3 cases, got {0}")]
    TooFewCases(usize),
    #[error("no result for case {0:?}")]
    MissingRecord(String),
    #[error("percentages must be ascending values in (0, 1]: {0:?}")]
    BadPercentages(Vec<f64>),
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
}

fn mean_scores(scores: &[crate::metrics::RougeScore]) -> Option<MeanScores> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(MeanScores {
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    })
}

/// Means over non-error records; accuracy over all records, errors counting as
/// incorrect.
pub fn aggregate_report(label: &str, records: &[EvalRecord]) -> Result<RunReport, MetricsError> {
    let first = records.first().ok_or(MetricsError::EmptyRecords)?;
    if let Some(other) = records.iter().find(|r| r.mode != first.mode) {
        return Err(MetricsError::MixedModes(first.mode, other.mode));
    }
    let ok: Vec<&EvalRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let patient: Vec<RougeScore> = ok.iter().filter_map(|r| r.patient_scores).collect();
    let doctor: Vec<RougeScore> = ok.iter().filter_map(|r| r.doctor_scores).collect();
    let collect = |f: &dyn Fn(&EvalRecord) -> Option<f64>| -> Vec<f64> {
        ok.iter().filter_map(|r| f(r)).collect()
    };
    let patient_len = collect(&|r| r.patient_avg_len);
    let doctor_len = collect(&|r| r.doctor_avg_len);
    let turns = collect(&|r| r.turn_count.map(|t| t as f64));
    let div: Vec<DiversityScores> = ok.iter().filter_map(|r| r.diversity).collect();
    let diversity = (!div.is_empty()).then(|| {
        let n = div.len() as f64;
        DiversityScores {
            rouge1: div.iter().map(|d| d.rouge1).sum::<f64>() / n,
            rouge2: div.iter().map(|d| d.rouge2).sum::<f64>() / n,
            rouge_l: div.iter().map(|d| d.rouge_l).sum::<f64>() / n,
        }
    });
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(RunReport {
        label: label.to_string(),
        mode: first.mode,
        n_cases: records.len(),
        n_errors: records.len() - ok.len(),
        patient: mean_scores(&patient),
        patient_len: mean_of(&patient_len),
        doctor: mean_scores(&doctor),
        doctor_len: mean_of(&doctor_len),
        turn: mean_of(&turns),
        accuracy: correct as f64 / records.len() as f64,
        diversity,
    })
}

impl RunReport {
    /// SHA-256 over the canonical JSON encoding of the report.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("report serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0))
}

fn plain(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Renders rows as an aligned plain-text table with the layout
/// `Case | Patient Rec Pre F1 Len | Doctor Rec Pre F1 Len | Turn | Acc.`.
/// Scores are scaled by 100; missing values print as `-`.
pub fn render_report_table(rows: &[RunReport]) -> String {
    let header = [
        "Case", "P.Rec", "P.Pre", "P.F1", "P.Len", "D.Rec", "D.Pre", "D.F1", "D.Len", "Turn",
        "Acc.",
    ];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        cells.push(vec![
            r.label.clone(),
            pct(r.patient.map(|s| s.recall)),
            pct(r.patient.map(|s| s.precision)),
            pct(r.patient.map(|s| s.f1)),
            plain(r.patient_len),
            pct(r.doctor.map(|s| s.recall)),
            pct(r.doctor.map(|s| s.precision)),
            pct(r.doctor.map(|s| s.f1)),
            plain(r.doctor_len),
            plain(r.turn),
            format!("{:.2}", r.accuracy * 100.0),
        ]);
    }
    render_grid(&cells)
}

/// Diversity table: one row per doctor policy, three ROUGE variants (lower means
/// more varied queries).
pub fn render_diversity_table(rows: &[(String, DiversityScores)]) -> String {
    let mut cells = vec![vec![
        "Model".to_string(),
        "ROUGE-1".to_string(),
        "ROUGE-2".to_string(),
        "ROUGE-L".to_string(),
    ]];
    for (label, d) in rows {
        cells.push(vec![
            label.clone(),
            format!("{:.2}", d.rouge1 * 100.0),
            format!("{:.2}", d.rouge2 * 100.0),
            format!("{:.2}", d.rouge_l * 100.0),
        ]);
    }
    render_grid(&cells)
}

pub fn render_grid(cells: &[Vec<String>]) -> String {
    let cols = cells.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            cells
                .iter()
                .filter_map(|row| row.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnCurvePoint {
    pub percentage: f64,
    pub accuracy: f64,
    pub patient_f1: f64,
    pub doctor_f1: f64,
}

/// One consultation to re-score along the turn curve.
#[derive(Debug, Clone, Copy)]
pub struct CurveInput<'a> {
    pub case: &'a ConsultationCase,
    pub transcript: &'a Transcript,
    /// The original run failed on this case: counted incorrect, excluded from means.
    pub errored: bool,
}

pub fn check_percentages(percentages: &[f64]) -> Result<(), MetricsError> {
    let in_range = percentages.iter().all(|&p| p > 0.0 && p <= 1.0);
    let ascending = percentages.windows(2).all(|w| w[0] < w[1]);
    if percentages.is_empty() || !in_range || !ascending {
        return Err(MetricsError::BadPercentages(percentages.to_vec()));
    }
    Ok(())
}

/// Re-scores every transcript truncated to each percentage of its rounds and
/// re-solves the task on the truncated context.
pub fn turn_curve(
    inputs: &[CurveInput<'_>],
    percentages: &[f64],
    solver: &dyn Solver,
    coverage: &CoverageOptions,
    context: &ContextOptions,
) -> Result<Vec<TurnCurvePoint>, MetricsError> {
    check_percentages(percentages)?;
    let mut points = Vec::with_capacity(percentages.len());
    for &p in percentages {
        let per_case: Vec<Option<(bool, f64, f64)>> = inputs
            .par_iter()
            .map(|input| -> Result<_, MetricsError> {
                if input.errored {
                    return Ok(None);
                }
                let truncated = truncate_transcript(input.transcript, p);
                let ctx = render_solver_context(&truncated, &input.case.task, context);
                let choice = solve_task(solver, input.case, &ctx)?;
                let correct = choice.as_deref() == Some(input.case.task.answer_label.as_str());
                let pf1 = patient_coverage(&truncated, &input.case.facts, coverage).f1;
                let df1 = doctor_coverage(&truncated, &input.case.facts, coverage).f1;
                Ok(Some((correct, pf1, df1)))
            })
            .collect::<Result<_, _>>()?;
        let ok: Vec<(bool, f64, f64)> = per_case.iter().flatten().copied().collect();
        let correct = ok.iter().filter(|x| x.0).count();
        let pf1: Vec<f64> = ok.iter().map(|x| x.1).collect();
        let df1: Vec<f64> = ok.iter().map(|x| x.2).collect();
        points.push(TurnCurvePoint {
            percentage: p,
            accuracy: if inputs.is_empty() {
                0.0
            } else {
                correct as f64 / inputs.len() as f64
            },
            patient_f1: mean_of(&pf1).unwrap_or(0.0),
            doctor_f1: mean_of(&df1).unwrap_or(0.0),
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityBin {
    Short,
    Medium,
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityBinResult {
    pub bin: ComplexityBin,
    pub accuracy: f64,
    pub n_cases: usize,
    pub min_facts: usize,
    pub max_facts: usize,
    pub case_ids: Vec<String>,
}

/// Sorts cases by fact count (ties by id) and splits them into three contiguous
/// groups whose sizes differ by at most one, larger groups first.
pub fn complexity_bins(
    corpus: &[ConsultationCase],
    records: &[EvalRecord],
) -> Result<Vec<ComplexityBinResult>, MetricsError> {
    if corpus.len() < 3 {
        return Err(MetricsError::TooFewCases(corpus.len()));
    }
    let by_id: HashMap<&str, &EvalRecord> =
        records.iter().map(|r| (r.case_id.as_str(), r)).collect();
    let mut sorted: Vec<&ConsultationCase> = corpus.iter().collect();
    sorted.sort_by(|a, b| a.facts.len().cmp(&b.facts.len()).then_with(|| a.id.cmp(&b.id)));
    let base = sorted.len() / 3;
    let extra = sorted.len() % 3;
    let mut out = Vec::with_capacity(3);
    let mut start = 0;
    for (i, bin) in [ComplexityBin::Short, ComplexityBin::Medium, ComplexityBin::Long]
        .into_iter()
        .enumerate()
    {
        let size = base + usize::from(i < extra);
        let group = &sorted[start..start + size];
        start += size;
        let mut correct = 0;
        for case in group {
            let rec = by_id
                .get(case.id.as_str())
                .ok_or_else(|| MetricsError::MissingRecord(case.id.clone()))?;
            correct += usize::from(rec.correct);
        }
        out.push(ComplexityBinResult {
            bin,
            accuracy: correct as f64 / size as f64,
            n_cases: size,
            min_facts: group.first().map_or(0, |c| c.facts.len()),
            max_facts: group.last().map_or(0, |c| c.facts.len()),
            case_ids: group.iter().map(|c| c.id.clone()).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(toks("39.1°C fever!"), vec!["39", "1", "c", "fever"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("  Blood-Pressure:120/80 "), vec!["blood", "pressure", "120", "80"]);
    }

    #[test]
    fn rouge_hand_cases() {
        let s = rouge_n(&toks("fever and cough"), &toks("high fever cough"), 1);
        assert_eq!((s.recall, s.precision, s.f1), (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0));
        let s = rouge_n(&toks("a b c"), &toks("a b d"), 2);
        assert_eq!((s.recall, s.precision), (0.5, 0.5));
        let s = rouge_l(&toks("the cat sat"), &toks("the sat cat"));
        assert_eq!((s.recall, s.precision), (2.0 / 3.0, 2.0 / 3.0));
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        let a = toks("chest pain for two hours");
        for v in RougeVariant::ALL {
            let s = v.score(&a, &a);
            assert_eq!((s.recall, s.precision, s.f1), (1.0, 1.0, 1.0));
            let d = v.score(&a, &toks("no overlap here"));
            assert_eq!(d, RougeScore::ZERO);
        }
    }

    #[test]
    fn short_sequences_and_empty_sides_score_zero() {
        let one = toks("fever");
        assert_eq!(rouge_n(&one, &one, 2), RougeScore::ZERO);
        let empty: Vec<String> = vec![];
        assert_eq!(rouge_l(&empty, &one), RougeScore::ZERO);
        assert_eq!(rouge_l(&one, &empty), RougeScore::ZERO);
    }

    #[test]
    fn clipped_counts() {
        // candidate repeats "fever" three times but the reference has it once
        let s = rouge_n(&toks("fever fever fever"), &toks("fever cough"), 1);
        assert_eq!(s.recall, 0.5);
        assert_eq!(s.precision, 1.0 / 3.0);
    }

    #[test]
    fn diversity_edges() {
        let q = vec![toks("do you smoke"); 4];
        for v in RougeVariant::ALL {
            assert_eq!(diversity(&q, v), Some(1.0));
        }
        let pair = vec![toks("any fever"), toks("what medications")];
        assert_eq!(diversity(&pair, RougeVariant::Rouge1), Some(0.0));
        assert_eq!(diversity(&q[..1], RougeVariant::Rouge1), None);
    }

    #[test]
    fn aggregate_counts_errors_as_incorrect() {
        let mk = |id: &str, correct: bool, err: bool| EvalRecord {
            case_id: id.into(),
            mode: RunMode::Consultation,
            patient_scores: Some(RougeScore::from_recall_precision(0.5, 0.25)),
            doctor_scores: Some(RougeScore::from_recall_precision(1.0, 0.5)),
            patient_avg_len: Some(6.0),
            doctor_avg_len: Some(5.0),
            turn_count: Some(4),
            solver_choice: Some("A".into()),
            correct,
            diversity: None,
            error: err.then(|| "boom".to_string()),
        };
        let recs = vec![mk("a", true, false), mk("b", true, false), mk("c", false, false), mk("d", false, true)];
        let r = aggregate_report("x", &recs).unwrap();
        assert_eq!(format!("{:.2}", r.accuracy * 100.0), "50.00");
        assert_eq!(r.n_errors, 1);
        assert_eq!(r.turn, Some(4.0));
        assert!(aggregate_report("x", &[]).is_err());
    }

    #[test]
    fn bins_remainder_rule() {
        use crate::model::{AnswerOption, TaskSpec};
        let corpus: Vec<ConsultationCase> = (0..10)
            .map(|i| ConsultationCase {
                id: format!("c{i:02}"),
                source: "t".into(),
                medical_info: "x".into(),
                facts: (0..=i)
                    .map(|j| MedicalFact::new(&format!("k{j}"), "v").unwrap())
                    .collect(),
                initial_request: "help".into(),
                task: TaskSpec {
                    question: "q?".into(),
                    options: vec![
                        AnswerOption { label: "A".into(), text: "a".into() },
                        AnswerOption { label: "B".into(), text: "b".into() },
                    ],
                    answer_label: "A".into(),
                },
            })
            .collect();
        let records: Vec<EvalRecord> = corpus
            .iter()
            .map(|c| EvalRecord {
                correct: c.facts.len() % 2 == 0,
                ..evaluate_bound(c, RunMode::UpperBound)
            })
            .collect();
        let bins = complexity_bins(&corpus, &records).unwrap();
        assert_eq!(bins.iter().map(|b| b.n_cases).collect::<Vec<_>>(), vec![4, 3, 3]);
        assert_eq!((bins[0].min_facts, bins[0].max_facts), (1, 4));
        assert_eq!(bins[0].accuracy, 0.5);
        assert!(complexity_bins(&corpus[..2], &records).is_err());
    }

    #[test]
    fn table_uses_dashes_for_missing_columns() {
        let r = RunReport {
            label: "Lower-B".into(),
            mode: RunMode::LowerBound,
            n_cases: 1,
            n_errors: 0,
            patient: Some(MeanScores { recall: 0.0345, precision: 0.2278, f1: 0.0575 }),
            patient_len: None,
            doctor: None,
            doctor_len: None,
            turn: None,
            accuracy: 0.3549,
            diversity: None,
        };
        let table = render_report_table(&[r]);
        let row = table.lines().nth(2).unwrap();
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cols, vec!["Lower-B", "3.45", "22.78", "5.75", "-", "-", "-", "-", "-", "-", "35.49"]);
    }
}
