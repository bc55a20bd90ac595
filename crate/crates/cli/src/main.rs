use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use consult_core::agents::{AgentRole, Gateway, GoldenDoctor, ScriptedPatient};
use consult_core::config::{make_solver, HarnessConfig};
use consult_core::dataset::{
    build_corpus, compute_corpus_stats, generate_golden_dialogue, read_raw_mcqs,
    render_stats_table, top_key_frequencies,
};
use consult_core::jsonl;
use consult_core::metrics::{
    complexity_bins, render_grid, render_report_table, turn_curve, CurveInput, RougeVariant,
    RunReport,
};
use consult_core::model::{read_corpus, read_transcripts, write_corpus, EvalRecord, RunMode};
use consult_core::orchestrator::{self, run_batch};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

const CONFIG_SNAPSHOT: &str = "config.json";

#[derive(Parser)]
#[command(name = "consult", version, about = "Doctor/patient consultation benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rebuild raw multiple-choice questions into a consultation corpus.
    Build(BuildArgs),
    /// Run consultations (or a bound mode) over the corpus.
    Run(RunArgs),
    /// Turn curves, diversity, complexity bins, and order comparison for finished runs.
    Analyze(AnalyzeArgs),
    /// Print the results table for one or more run directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Refuse model-backed agents; nothing touches the network.
    #[arg(long)]
    offline: bool,
    /// Serve every model call from the response cache.
    #[arg(long)]
    replay: bool,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    common: Common,
    /// Raw question file (overrides `raw` in the config).
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Output corpus (overrides `corpus` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop questions whose stem repeats an earlier one.
    #[arg(long)]
    dedup: bool,
    /// Also write golden training dialogues here.
    #[arg(long)]
    golden: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Consult,
    Upper,
    Lower,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Consult => RunMode::Consultation,
            ModeArg::Upper => RunMode::UpperBound,
            ModeArg::Lower => RunMode::LowerBound,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    max_turns: Option<usize>,
    /// Exact run directory (default: `<run_dir>/<label>` from the config).
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directories produced by `consult run`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    percentages: Option<Vec<f64>>,
    #[arg(long)]
    offline: bool,
    #[arg(long)]
    replay: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Run(a) => cmd_run(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &Common) -> Result<HarnessConfig> {
    let mut cfg = HarnessConfig::load(&common.config)?;
    if let Some(p) = common.parallelism {
        cfg.run.parallelism = p;
        cfg.build.parallelism = p;
    }
    cfg.run.replay |= common.replay;
    cfg.gateway.replay |= common.replay;
    Ok(cfg)
}

fn report_network(gateway: Option<&Arc<Gateway>>) {
    let calls = gateway.map_or(0, |g| g.network_calls());
    let hits = gateway.map_or(0, |g| g.cache_hits());
    eprintln!("network calls: {calls}, cache hits: {hits}");
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_build(args: BuildArgs) -> Result<bool> {
    let mut cfg = load_config(&args.common)?;
    cfg.build.dedup |= args.dedup;
    cfg.check(args.common.offline)?;
    let raw = args
        .raw
        .or_else(|| cfg.raw.clone())
        .context("no raw question file: pass --raw or set `raw` in the config")?;
    let out = args.out.unwrap_or_else(|| cfg.corpus.clone());
    let mcqs = read_raw_mcqs(&raw)?;
    let gateway = cfg.gateway_for(&[AgentRole::Extractor, AgentRole::RequestGenerator, AgentRole::GoldenDoctor])?;
    let agents = cfg.build_agents(gateway.as_ref())?;
    let built = build_corpus(&mcqs, &agents, &cfg.build);
    write_corpus(&built.cases, &out)?;

    let stats = compute_corpus_stats(&built.cases);
    let top = top_key_frequencies(&built.cases, 20);
    print!("{}", render_stats_table(&stats));
    println!();
    let mut rows = vec![vec!["Key".to_string(), "Count".to_string()]];
    rows.extend(top.iter().map(|k| vec![k.key.clone(), k.count.to_string()]));
    print!("{}", render_grid(&rows));
    write_json(&out.with_extension("stats.json"), &serde_json::json!({ "stats": stats, "top_keys": top }))?;

    if let Some(path) = args.golden {
        let doctor: Arc<dyn GoldenDoctor> = cfg.golden_doctor(gateway.as_ref())?;
        let patient = ScriptedPatient;
        let mut dialogues = Vec::new();
        for case in &built.cases {
            match generate_golden_dialogue(case, doctor.as_ref(), &patient) {
                Ok(t) => dialogues.push(t),
                Err(e) => eprintln!("golden dialogue skipped: {e}"),
            }
        }
        jsonl::write_records(&path, &dialogues)?;
    }

    println!();
    println!(
        "built {} of {} questions into {}",
        built.cases.len(),
        mcqs.len(),
        out.display()
    );
    for id in &built.duplicates {
        println!("duplicate stem dropped: {id}");
    }
    for id in &built.truncated_requests {
        println!("initial request truncated: {id}");
    }
    for f in &built.failures {
        println!("failed {}: {}", f.id, f.reason);
    }
    report_network(gateway.as_ref());
    Ok(built.failures.is_empty())
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let mut cfg = load_config(&args.common)?;
    if let Some(m) = args.mode {
        cfg.run.mode = m.into();
    }
    if let Some(t) = args.max_turns {
        cfg.run.max_turns = t;
    }
    cfg.check(args.common.offline)?;
    let run_config = cfg.run_config();
    let run_dir = args
        .run_dir
        .unwrap_or_else(|| cfg.run_dir.join(sanitize(&run_config.report_label())));
    let corpus = read_corpus(&cfg.corpus)?;
    if corpus.is_empty() {
        bail!("corpus {} is empty", cfg.corpus.display());
    }
    let roles: &[AgentRole] = match run_config.mode {
        RunMode::Consultation => &[AgentRole::Doctor, AgentRole::Patient, AgentRole::Solver],
        _ => &[AgentRole::Solver],
    };
    let gateway = cfg.gateway_for(roles)?;
    let agents = cfg.run_agents(gateway.as_ref())?;
    std::fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    write_json(&run_dir.join(CONFIG_SNAPSHOT), &cfg)?;

    let output = run_batch(&corpus, &agents, &run_config, Some(&run_dir))?;
    print!("{}", render_report_table(std::slice::from_ref(&output.report)));
    let verbose: usize = output.outcomes.iter().map(|o| o.result.verbosity_violations).sum();
    let leaks: usize = output.outcomes.iter().map(|o| o.result.leaked_keys.len()).sum();
    if run_config.mode == RunMode::Consultation {
        println!("verbose patient replies: {verbose}, unprompted disclosures: {leaks}");
    }
    for o in &output.outcomes {
        if let Some(e) = &o.result.error {
            println!("case {} failed: {e}", o.result.case_id);
        }
    }
    println!(
        "{} cases ({} executed, {} resumed) in {}; report digest {}",
        output.outcomes.len(),
        output.executed,
        output.outcomes.len() - output.executed,
        run_dir.display(),
        output.report.digest()
    );
    report_network(gateway.as_ref());
    Ok(output.report.n_errors == 0)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect::<String>()
        .to_lowercase()
}

struct LoadedRun {
    dir: PathBuf,
    config: HarnessConfig,
    report: RunReport,
    records: Vec<EvalRecord>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let snapshot = dir.join(CONFIG_SNAPSHOT);
    let text = std::fs::read_to_string(&snapshot)
        .with_context(|| format!("{} is not a run directory (no {CONFIG_SNAPSHOT})", dir.display()))?;
    let config: HarnessConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", snapshot.display()))?;
    let report_path = dir.join(orchestrator::REPORT_JSON);
    let report: RunReport = serde_json::from_str(
        &std::fs::read_to_string(&report_path).with_context(|| format!("reading {}", report_path.display()))?,
    )?;
    let records = jsonl::read_records::<EvalRecord>(&dir.join(orchestrator::RECORDS_FILE))?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        report,
        records,
    })
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<bool> {
    let runs = args.runs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let mut diversity_rows = Vec::new();
    let mut oracle_rows = Vec::new();
    for run in &runs {
        let mut cfg = run.config.clone();
        if let Some(p) = &args.percentages {
            cfg.analysis.percentages = p.clone();
        }
        cfg.run.replay |= args.replay;
        cfg.gateway.replay |= args.replay;
        cfg.check(args.offline)?;
        let corpus = read_corpus(&cfg.corpus)?;
        println!("== {} ({})", run.report.label, run.dir.display());

        let bins = complexity_bins(&corpus, &run.records)?;
        let mut rows = vec![vec!["Bin".to_string(), "Facts".to_string(), "Cases".to_string(), "Acc.".to_string()]];
        rows.extend(bins.iter().map(|b| {
            vec![
                format!("{:?}", b.bin).to_lowercase(),
                format!("{}-{}", b.min_facts, b.max_facts),
                b.n_cases.to_string(),
                format!("{:.2}", b.accuracy * 100.0),
            ]
        }));
        print!("{}", render_grid(&rows));
        write_json(&run.dir.join("bins.json"), &bins)?;

        if run.report.mode != RunMode::Consultation {
            continue;
        }
        let transcripts_path = run.dir.join(orchestrator::TRANSCRIPTS_FILE);
        if !transcripts_path.exists() {
            bail!("no transcripts in {}", run.dir.display());
        }
        let transcripts: HashMap<String, _> = read_transcripts(&transcripts_path)?
            .into_iter()
            .map(|t| (t.case_id.clone(), t))
            .collect();
        let errored: HashMap<&str, bool> = run
            .records
            .iter()
            .map(|r| (r.case_id.as_str(), r.error.is_some()))
            .collect();
        let inputs: Vec<CurveInput> = corpus
            .iter()
            .filter_map(|case| {
                Some(CurveInput {
                    case,
                    transcript: transcripts.get(&case.id)?,
                    errored: errored.get(case.id.as_str()).copied().unwrap_or(true),
                })
            })
            .collect();
        let solver_policy = cfg.run_config().solver_policy;
        let gateway = cfg.gateway_for(&[AgentRole::Solver])?;
        let solver = make_solver(&solver_policy, gateway.as_ref())?;
        let curve = turn_curve(&inputs, &cfg.analysis.percentages, solver.as_ref(), &cfg.run.coverage, &cfg.run.context)?;
        let mut rows = vec![vec!["Pct".to_string(), "Acc.".to_string(), "P.F1".to_string(), "D.F1".to_string()]];
        rows.extend(curve.iter().map(|p| {
            vec![
                format!("{:.0}%", p.percentage * 100.0),
                format!("{:.2}", p.accuracy * 100.0),
                format!("{:.2}", p.patient_f1 * 100.0),
                format!("{:.2}", p.doctor_f1 * 100.0),
            ]
        }));
        print!("{}", render_grid(&rows));
        jsonl::write_records(&run.dir.join("curve.jsonl"), &curve)?;
        report_network(gateway.as_ref());

        if let Some(d) = run.report.diversity {
            diversity_rows.push((run.report.label.clone(), d, cfg.analysis.diversity_variants.clone()));
        }
        let doctor = cfg.run_config().doctor_policy;
        if let Some(order) = doctor.oracle_order() {
            oracle_rows.push((order.name(), &run.report));
        }
    }

    if !diversity_rows.is_empty() {
        println!("== diversity (lower is more varied)");
        let variants = diversity_rows[0].2.clone();
        let mut rows = vec![std::iter::once("Model".to_string())
            .chain(variants.iter().map(|v| v.label().to_string()))
            .collect::<Vec<_>>()];
        for (label, d, _) in &diversity_rows {
            let mut row = vec![label.clone()];
            row.extend(variants.iter().map(|v| {
                let x = match v {
                    RougeVariant::Rouge1 => d.rouge1,
                    RougeVariant::Rouge2 => d.rouge2,
                    RougeVariant::RougeL => d.rouge_l,
                };
                format!("{:.2}", x * 100.0)
            }));
            rows.push(row);
        }
        print!("{}", render_grid(&rows));
    }

    let distinct: std::collections::BTreeSet<_> = oracle_rows.iter().map(|(o, _)| format!("{o:?}")).collect();
    if distinct.len() >= 2 {
        println!("== oracle question order");
        let mut rows = vec![vec!["Order".to_string(), "Acc.".to_string(), "P.Rec".to_string(), "D.Rec".to_string()]];
        for (order, report) in &oracle_rows {
            rows.push(vec![
                format!("{order:?}").to_lowercase(),
                format!("{:.2}", report.accuracy * 100.0),
                report.patient.map_or("-".into(), |s| format!("{:.2}", s.recall * 100.0)),
                report.doctor.map_or("-".into(), |s| format!("{:.2}", s.recall * 100.0)),
            ]);
        }
        print!("{}", render_grid(&rows));
    }
    Ok(true)
}

fn cmd_report(args: ReportArgs) -> Result<bool> {
    let runs = args.runs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
    print!("{}", render_report_table(&reports));
    for r in &reports {
        println!("{}: {}", r.label, r.digest());
    }
    Ok(reports.iter().all(|r| r.n_errors == 0))
}
