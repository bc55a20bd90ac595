//! Agent policy definitions as they appear in the harness configuration.

use super::gateway::ModelRef;
use crate::digest::derive_seed;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;

/// Question budget advertised by the long doctor prompt.
pub const LONG_PROMPT_MAX_QUESTIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Doctor,
    Patient,
    Solver,
    Extractor,
    RequestGenerator,
    GoldenDoctor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Long,
    Short,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderName {
    Direct,
    Random,
    Reverse,
}

/// Order in which the oracle doctor walks the fact list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuestionOrder {
    Direct,
    Random { seed: u64 },
    Reverse,
}

impl QuestionOrder {
    pub fn name(&self) -> OrderName {
        match self {
            QuestionOrder::Direct => OrderName::Direct,
            QuestionOrder::Random { .. } => OrderName::Random,
            QuestionOrder::Reverse => OrderName::Reverse,
        }
    }

    /// Random orders draw a distinct permutation per case from the run seed.
    pub fn for_case(&self, case_id: &str) -> QuestionOrder {
        match *self {
            QuestionOrder::Random { seed } => QuestionOrder::Random {
                seed: derive_seed(seed, case_id),
            },
            other => other,
        }
    }
}

impl fmt::Display for QuestionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionOrder::Direct => write!(f, "direct"),
            QuestionOrder::Random { seed } => write!(f, "random({seed})"),
            QuestionOrder::Reverse => write!(f, "reverse"),
        }
    }
}

fn default_threshold() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    /// Prompt-driven agent behind the chat gateway.
    Llm {
        model: ModelRef,
        /// Doctor prompt flavor; ignored for other roles.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variant: Option<PromptVariant>,
        /// Overrides the built-in prompt template.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_questions: Option<usize>,
    },
    /// Rule-based doctor asking "Can you tell me about {key}?" over the facts.
    Oracle {
        order: OrderName,
        #[serde(default)]
        seed: u64,
    },
    /// Reveals exactly the asked fact as "My {key} is {value}.".
    ScriptedPatient,
    /// Offline solver: correct iff enough fact values appear in its context.
    MockSolver {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    /// Deterministic rule-based builder agents (extractor, request generator,
    /// golden doctor).
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {
    pub id: String,
    pub role: AgentRole,
    #[serde(flatten)]
    pub kind: AgentKind,
}

impl AgentPolicy {
    pub fn is_llm(&self) -> bool {
        matches!(self.kind, AgentKind::Llm { .. })
    }

    pub fn oracle_order(&self) -> Option<QuestionOrder> {
        match self.kind {
            AgentKind::Oracle { order, seed } => Some(match order {
                OrderName::Direct => QuestionOrder::Direct,
                OrderName::Random => QuestionOrder::Random { seed },
                OrderName::Reverse => QuestionOrder::Reverse,
            }),
            _ => None,
        }
    }

    /// Question budget for LLM doctors: the long prompt always advertises 10.
    pub fn question_budget(&self) -> Option<usize> {
        match &self.kind {
            AgentKind::Llm { variant: Some(PromptVariant::Long), .. } => Some(LONG_PROMPT_MAX_QUESTIONS),
            AgentKind::Llm { max_questions, .. } => *max_questions,
            _ => None,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push("policy id is empty".to_string());
        }
        let allowed = match &self.kind {
            AgentKind::Llm { model, variant, max_questions, .. } => {
                if model.model.trim().is_empty() {
                    out.push(format!("{}: llm policy needs a model", self.id));
                }
                if *variant == Some(PromptVariant::Long)
                    && max_questions.is_some_and(|m| m != LONG_PROMPT_MAX_QUESTIONS)
                {
                    out.push(format!(
                        "{}: long prompt variant advertises {LONG_PROMPT_MAX_QUESTIONS} questions",
                        self.id
                    ));
                }
                if variant.is_some() && self.role != AgentRole::Doctor {
                    out.push(format!("{}: prompt variant only applies to doctors", self.id));
                }
                true
            }
            AgentKind::Oracle { .. } => self.role == AgentRole::Doctor,
            AgentKind::ScriptedPatient => self.role == AgentRole::Patient,
            AgentKind::MockSolver { threshold } => {
                if !(0.0..=1.0).contains(threshold) {
                    out.push(format!("{}: threshold must lie in [0, 1]", self.id));
                }
                self.role == AgentRole::Solver
            }
            AgentKind::Heuristic => matches!(
                self.role,
                AgentRole::Extractor | AgentRole::RequestGenerator | AgentRole::GoldenDoctor
            ),
        };
        if !allowed {
            out.push(format!("{}: kind not usable for role {:?}", self.id, self.role));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let text = r#"
            id = "oracle-random"
            role = "doctor"
            kind = "oracle"
            order = "random"
            seed = 7
        "#;
        let p: AgentPolicy = toml::from_str(text).unwrap();
        assert_eq!(p.oracle_order(), Some(QuestionOrder::Random { seed: 7 }));
        assert!(p.validate().is_empty());

        let text = r#"
            id = "gpt-long"
            role = "doctor"
            kind = "llm"
            variant = "long"
            max_questions = 5
            [model]
            model = "gpt-3.5-turbo"
        "#;
        let p: AgentPolicy = toml::from_str(text).unwrap();
        assert_eq!(p.question_budget(), Some(10));
        assert_eq!(p.validate().len(), 1);
    }

    #[test]
    fn role_mismatch_rejected() {
        let p = AgentPolicy {
            id: "x".into(),
            role: AgentRole::Solver,
            kind: AgentKind::ScriptedPatient,
        };
        assert_eq!(p.validate().len(), 1);
    }

    #[test]
    fn random_seed_differs_per_case() {
        let o = QuestionOrder::Random { seed: 1 };
        assert_ne!(o.for_case("a"), o.for_case("b"));
        assert_eq!(o.for_case("a"), o.for_case("a"));
        assert_eq!(QuestionOrder::Direct.for_case("a"), QuestionOrder::Direct);
    }
}
