//! Harness configuration file (TOML) and the agent factories built from it.
//!
//! Relative paths in the file are resolved against the file's directory.

use crate::agents::llm::{
    LlmDoctor, LlmExtractor, LlmGoldenDoctor, LlmPatient, LlmRequestGenerator, LlmSolver,
};
use crate::agents::prompt::{self, Template};
use crate::agents::scripted::{HeuristicExtractor, ScriptedGoldenDoctor, TemplateRequestGenerator};
use crate::agents::{
    AgentKind, AgentPolicy, AgentRole, Doctor, FactExtractor, Gateway, GatewayConfig, GatewayError,
    GoldenDoctor, MockSolver, OracleDoctor, Patient, PromptVariant, RequestGenerator,
    ScriptedPatient, Solver, TemplateError,
};
use crate::dataset::{BuildAgents, BuildOptions};
use crate::digest::json_digest;
use crate::metrics::{check_percentages, CoverageOptions, RougeVariant};
use crate::model::RunMode;
use crate::orchestrator::{ContextOptions, RunAgents, RunConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// A policy as written under `[agents.<role>]`; the role comes from the table name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDef {
    pub id: String,
    #[serde(flatten)]
    pub kind: AgentKind,
}

impl PolicyDef {
    pub fn with_role(&self, role: AgentRole) -> AgentPolicy {
        AgentPolicy {
            id: self.id.clone(),
            role,
            kind: self.kind.clone(),
        }
    }
}

fn heuristic(id: &str) -> PolicyDef {
    PolicyDef {
        id: id.to_string(),
        kind: AgentKind::Heuristic,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentsSection {
    pub doctor: PolicyDef,
    pub patient: PolicyDef,
    pub solver: PolicyDef,
    #[serde(default = "default_extractor")]
    pub extractor: PolicyDef,
    #[serde(default = "default_request_generator")]
    pub request_generator: PolicyDef,
    #[serde(default = "default_golden_doctor")]
    pub golden_doctor: PolicyDef,
}

fn default_extractor() -> PolicyDef {
    heuristic("heuristic-extractor")
}
fn default_request_generator() -> PolicyDef {
    heuristic("template-request")
}
fn default_golden_doctor() -> PolicyDef {
    heuristic("scripted-golden")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub max_turns: usize,
    pub parallelism: usize,
    pub replay: bool,
    pub mode: RunMode,
    pub context: ContextOptions,
    pub coverage: CoverageOptions,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            max_turns: 10,
            parallelism: 4,
            replay: false,
            mode: RunMode::Consultation,
            context: ContextOptions::default(),
            coverage: CoverageOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSection {
    pub percentages: Vec<f64>,
    pub diversity_variants: Vec<RougeVariant>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            percentages: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            diversity_variants: RougeVariant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub corpus: PathBuf,
    pub run_dir: PathBuf,
    /// Raw question file for `build`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<PathBuf>,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub build: BuildOptions,
    pub agents: AgentsSection,
}

impl HarnessConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: HarnessConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.run_dir);
        if let Some(raw) = self.raw.as_mut() {
            fix(raw);
        }
        fix(&mut self.gateway.cache_dir);
        for def in self.policy_defs_mut() {
            if let AgentKind::Llm { prompt: Some(p), .. } = &mut def.kind {
                fix(p);
            }
        }
    }

    fn policy_defs_mut(&mut self) -> [&mut PolicyDef; 6] {
        let a = &mut self.agents;
        [
            &mut a.doctor,
            &mut a.patient,
            &mut a.solver,
            &mut a.extractor,
            &mut a.request_generator,
            &mut a.golden_doctor,
        ]
    }

    pub fn policies(&self) -> [AgentPolicy; 6] {
        let a = &self.agents;
        [
            a.doctor.with_role(AgentRole::Doctor),
            a.patient.with_role(AgentRole::Patient),
            a.solver.with_role(AgentRole::Solver),
            a.extractor.with_role(AgentRole::Extractor),
            a.request_generator.with_role(AgentRole::RequestGenerator),
            a.golden_doctor.with_role(AgentRole::GoldenDoctor),
        ]
    }

    /// Every problem found; empty means the configuration is usable. With
    /// `offline`, any model-backed policy is an error.
    pub fn validate(&self, offline: bool) -> Vec<String> {
        let mut out = Vec::new();
        if self.run.max_turns < 1 {
            out.push("run.max_turns must be at least 1".into());
        }
        if self.run.parallelism < 1 {
            out.push("run.parallelism must be at least 1".into());
        }
        if check_percentages(&self.analysis.percentages).is_err() {
            out.push(format!(
                "analysis.percentages must be ascending within (0, 1]: {:?}",
                self.analysis.percentages
            ));
        }
        for policy in self.policies() {
            out.extend(policy.validate());
            if let AgentKind::Llm { prompt: Some(p), .. } = &policy.kind {
                if !p.is_file() {
                    out.push(format!("{}: prompt template {} does not exist", policy.id, p.display()));
                }
            }
            if offline && policy.is_llm() {
                out.push(format!("{}: model-backed agent not allowed offline", policy.id));
            }
        }
        out
    }

    pub fn check(&self, offline: bool) -> Result<(), ConfigError> {
        let problems = self.validate(offline);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    /// Digest of the whole parsed configuration, insensitive to formatting and
    /// key order in the file.
    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn run_config(&self) -> RunConfig {
        let [doctor, patient, solver, ..] = self.policies();
        RunConfig {
            doctor_policy: doctor,
            patient_policy: patient,
            solver_policy: solver,
            max_turns: self.run.max_turns,
            parallelism: self.run.parallelism,
            mode: self.run.mode,
            replay: self.run.replay,
            context: self.run.context,
            coverage: self.run.coverage,
        }
    }

    /// A gateway when any of `roles` is model-backed.
    pub fn gateway_for(&self, roles: &[AgentRole]) -> Result<Option<Arc<Gateway>>, ConfigError> {
        let needed = self
            .policies()
            .iter()
            .any(|p| roles.contains(&p.role) && p.is_llm());
        if !needed {
            return Ok(None);
        }
        let mut gw = self.gateway.clone();
        gw.replay |= self.run.replay;
        Ok(Some(Arc::new(Gateway::from_env(gw)?)))
    }

    pub fn run_agents(&self, gateway: Option<&Arc<Gateway>>) -> Result<RunAgents, ConfigError> {
        let [doctor, patient, solver, ..] = self.policies();
        Ok(RunAgents {
            doctor: make_doctor(&doctor, gateway)?,
            patient: make_patient(&patient, gateway)?,
            solver: make_solver(&solver, gateway)?,
        })
    }

    pub fn build_agents(&self, gateway: Option<&Arc<Gateway>>) -> Result<BuildAgents, ConfigError> {
        let [.., extractor, generator, _] = self.policies();
        Ok(BuildAgents {
            extractor: make_extractor(&extractor, gateway)?,
            request_generator: make_request_generator(&generator, gateway)?,
        })
    }

    pub fn golden_doctor(&self, gateway: Option<&Arc<Gateway>>) -> Result<Arc<dyn GoldenDoctor>, ConfigError> {
        let [.., golden] = self.policies();
        make_golden_doctor(&golden, gateway)
    }
}

struct LlmParts {
    gateway: Arc<Gateway>,
    model: crate::agents::ModelRef,
    template: Template,
}

fn llm_parts(
    policy: &AgentPolicy,
    gateway: Option<&Arc<Gateway>>,
    builtin: &str,
) -> Result<Option<LlmParts>, ConfigError> {
    let AgentKind::Llm { model, prompt, .. } = &policy.kind else {
        return Ok(None);
    };
    let gateway = gateway
        .cloned()
        .ok_or_else(|| ConfigError::Invalid(vec![format!("{}: no gateway for model-backed agent", policy.id)]))?;
    let template = match prompt {
        Some(path) => Template::load(path)?,
        None => Template::parse(builtin)?,
    };
    Ok(Some(LlmParts {
        gateway,
        model: model.clone(),
        template,
    }))
}

fn unsupported(policy: &AgentPolicy) -> ConfigError {
    ConfigError::Invalid(vec![format!("{}: kind not usable for role {:?}", policy.id, policy.role)])
}

pub fn make_doctor(policy: &AgentPolicy, gateway: Option<&Arc<Gateway>>) -> Result<Arc<dyn Doctor>, ConfigError> {
    if let Some(order) = policy.oracle_order() {
        return Ok(Arc::new(OracleDoctor { order }));
    }
    let builtin = match &policy.kind {
        AgentKind::Llm { variant: Some(PromptVariant::Short), .. } => prompt::DOCTOR_SHORT_TEMPLATE,
        _ => prompt::DOCTOR_LONG_TEMPLATE,
    };
    let p = llm_parts(policy, gateway, builtin)?.ok_or_else(|| unsupported(policy))?;
    Ok(Arc::new(LlmDoctor {
        gateway: p.gateway,
        model: p.model,
        template: p.template,
        question_budget: policy.question_budget(),
    }))
}

pub fn make_patient(policy: &AgentPolicy, gateway: Option<&Arc<Gateway>>) -> Result<Arc<dyn Patient>, ConfigError> {
    if policy.kind == AgentKind::ScriptedPatient {
        return Ok(Arc::new(ScriptedPatient));
    }
    let p = llm_parts(policy, gateway, prompt::PATIENT_TEMPLATE)?.ok_or_else(|| unsupported(policy))?;
    Ok(Arc::new(LlmPatient {
        gateway: p.gateway,
        model: p.model,
        template: p.template,
    }))
}

pub fn make_solver(policy: &AgentPolicy, gateway: Option<&Arc<Gateway>>) -> Result<Arc<dyn Solver>, ConfigError> {
    if let AgentKind::MockSolver { threshold } = policy.kind {
        return Ok(Arc::new(MockSolver { threshold }));
    }
    let p = llm_parts(policy, gateway, prompt::SOLVER_TEMPLATE)?.ok_or_else(|| unsupported(policy))?;
    Ok(Arc::new(LlmSolver {
        gateway: p.gateway,
        model: p.model,
        template: p.template,
    }))
}

pub fn make_extractor(
    policy: &AgentPolicy,
    gateway: Option<&Arc<Gateway>>,
) -> Result<Arc<dyn FactExtractor>, ConfigError> {
    if policy.kind == AgentKind::Heuristic {
        return Ok(Arc::new(HeuristicExtractor));
    }
    let p = llm_parts(policy, gateway, prompt::EXTRACTOR_TEMPLATE)?.ok_or_else(|| unsupported(policy))?;
    Ok(Arc::new(LlmExtractor {
        gateway: p.gateway,
        model: p.model,
        template: p.template,
    }))
}

pub fn make_request_generator(
    policy: &AgentPolicy,
    gateway: Option<&Arc<Gateway>>,
) -> Result<Arc<dyn RequestGenerator>, ConfigError> {
    if policy.kind == AgentKind::Heuristic {
        return Ok(Arc::new(TemplateRequestGenerator));
    }
    let p = llm_parts(policy, gateway, prompt::INITIAL_REQUEST_TEMPLATE)?.ok_or_else(|| unsupported(policy))?;
    Ok(Arc::new(LlmRequestGenerator {
        gateway: p.gateway,
        model: p.model,
        template: p.template,
    }))
}

/// The LLM golden doctor uses the configured prompt (or the built-in one) for
/// questions and always the built-in analysis prompt.
pub fn make_golden_doctor(
    policy: &AgentPolicy,
    gateway: Option<&Arc<Gateway>>,
) -> Result<Arc<dyn GoldenDoctor>, ConfigError> {
    if policy.kind == AgentKind::Heuristic {
        return Ok(Arc::new(ScriptedGoldenDoctor));
    }
    let p = llm_parts(policy, gateway, prompt::GOLDEN_QUESTION_TEMPLATE)?.ok_or_else(|| unsupported(policy))?;
    Ok(Arc::new(LlmGoldenDoctor {
        gateway: p.gateway,
        model: p.model,
        question_template: p.template,
        analysis_template: Template::parse(prompt::GOLDEN_ANALYSIS_TEMPLATE)?,
    }))
}
