//! Classifies agent descriptors as active, passive, or not-an-agent from
//! their module matrices, and audits a descriptor set for tool users that
//! lack a security module.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_module_matrix, CoreAgentKind, ModelError, ModuleMatrix, ModuleName};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("cannot read descriptors: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("duplicate agent {0}")]
    DuplicateAgent(String),
    #[error("agent {agent} variant {variant}: {source}")]
    InvalidMatrix {
        agent: String,
        variant: String,
        source: ModelError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub variant_id: String,
    #[serde(default)]
    pub canonical: bool,
    pub matrix: ModuleMatrix,
    #[serde(default)]
    pub uses_external_tools: bool,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub agent_id: String,
    pub variants: Vec<Variant>,
}

impl AgentDescriptor {
    pub fn canonical(&self) -> &Variant {
        self.variants
            .iter()
            .find(|v| v.canonical)
            .expect("validated descriptors have one canonical variant")
    }
}

/// Minimal counts as present. Passive means only action (and possibly
/// security) is there.
pub fn classify_matrix(matrix: &ModuleMatrix) -> CoreAgentKind {
    if matrix.all_absent() {
        CoreAgentKind::NotAnAgent
    } else if matrix.planning.is_absent() && matrix.memory.is_absent() && matrix.profile.is_absent() {
        CoreAgentKind::Passive
    } else {
        CoreAgentKind::Active
    }
}

pub fn parse_descriptors(text: &str) -> Result<Vec<AgentDescriptor>, ClassifyError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let descriptors: Vec<AgentDescriptor> =
        serde_json::from_str(text).map_err(|e| ClassifyError::ParseError(e.to_string()))?;
    validate_descriptors(&descriptors)?;
    Ok(descriptors)
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<Vec<AgentDescriptor>, ClassifyError> {
    parse_descriptors(&std::fs::read_to_string(path)?)
}

fn validate_descriptors(descriptors: &[AgentDescriptor]) -> Result<(), ClassifyError> {
    let mut agents = HashSet::new();
    for d in descriptors {
        if !agents.insert(d.agent_id.as_str()) {
            return Err(ClassifyError::DuplicateAgent(d.agent_id.clone()));
        }
        let canonical = d.variants.iter().filter(|v| v.canonical).count();
        if canonical != 1 {
            return Err(ClassifyError::ParseError(format!(
                "agent {} has {canonical} canonical variants, expected exactly one",
                d.agent_id
            )));
        }
        let mut ids = HashSet::new();
        for v in &d.variants {
            if !ids.insert(v.variant_id.as_str()) {
                return Err(ClassifyError::ParseError(format!(
                    "agent {} repeats variant {}",
                    d.agent_id, v.variant_id
                )));
            }
            validate_module_matrix(v.matrix).map_err(|source| ClassifyError::InvalidMatrix {
                agent: d.agent_id.clone(),
                variant: v.variant_id.clone(),
                source,
            })?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub agent_id: String,
    pub variant_id: String,
    pub canonical: bool,
    pub matrix: ModuleMatrix,
    pub category: CoreAgentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub passive_count: usize,
    pub active_count: usize,
    pub not_agent_count: usize,
    pub total_agents: usize,
    pub tool_users: usize,
    pub tool_users_without_security: usize,
    pub findings: Vec<String>,
}

impl AuditReport {
    pub fn passive_fraction(&self) -> f64 {
        ratio(self.passive_count, self.total_agents)
    }

    pub fn active_fraction(&self) -> f64 {
        ratio(self.active_count, self.total_agents)
    }

    pub fn unprotected_tool_user_fraction(&self) -> f64 {
        ratio(self.tool_users_without_security, self.tool_users)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:<16} {:>4} {:>4} {:>4} {:>4} {:>4}  category",
            "agent", "variant", "plan", "prof", "mem", "act", "sec"
        );
        for r in &self.rows {
            let marks: Vec<&str> = ModuleName::ALL.iter().map(|m| r.matrix.get(*m).symbol()).collect();
            let _ = writeln!(
                out,
                "{:<18} {:<16} {:>4} {:>4} {:>4} {:>4} {:>4}  {}{}",
                r.agent_id,
                r.variant_id,
                marks[0],
                marks[1],
                marks[2],
                marks[3],
                marks[4],
                r.category,
                if r.canonical { "" } else { " (alt)" }
            );
        }
        let _ = writeln!(
            out,
            "\npassive: {}/{} ({:.0}%)  active: {}/{} ({:.0}%)  n/a: {}",
            self.passive_count,
            self.total_agents,
            100.0 * self.passive_fraction(),
            self.active_count,
            self.total_agents,
            100.0 * self.active_fraction(),
            self.not_agent_count
        );
        let _ = writeln!(
            out,
            "tool users without security: {}/{} ({:.0}%)",
            self.tool_users_without_security,
            self.tool_users,
            100.0 * self.unprotected_tool_user_fraction()
        );
        for f in &self.findings {
            let _ = writeln!(out, "warning: {f}");
        }
        out
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Classifies every variant. Agent-level counts use each agent's canonical
/// variant.
pub fn audit(descriptors: &[AgentDescriptor]) -> AuditReport {
    let rows: Vec<AuditRow> = descriptors
        .iter()
        .flat_map(|d| {
            d.variants.iter().map(|v| AuditRow {
                agent_id: d.agent_id.clone(),
                variant_id: v.variant_id.clone(),
                canonical: v.canonical,
                matrix: v.matrix,
                category: classify_matrix(&v.matrix),
            })
        })
        .collect();
    let (mut passive, mut active, mut not_agent) = (0, 0, 0);
    let (mut tool_users, mut unprotected) = (0, 0);
    let mut findings = Vec::new();
    for d in descriptors {
        let v = d.canonical();
        match classify_matrix(&v.matrix) {
            CoreAgentKind::Passive => passive += 1,
            CoreAgentKind::Active => active += 1,
            CoreAgentKind::NotAnAgent => not_agent += 1,
        }
        if v.uses_external_tools {
            tool_users += 1;
            if v.matrix.security.is_absent() {
                unprotected += 1;
                findings.push(format!(
                    "{} uses external tools without a security module; outbound data is not safeguarded",
                    d.agent_id
                ));
            }
        }
    }
    AuditReport {
        rows,
        passive_count: passive,
        active_count: active,
        not_agent_count: not_agent,
        total_agents: descriptors.len(),
        tool_users,
        tool_users_without_security: unprotected,
        findings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Presence::*;

    fn m(p: &str) -> ModuleMatrix {
        let sym = |c| match c {
            'X' => Present,
            'M' => Minimal,
            _ => Absent,
        };
        let c: Vec<char> = p.chars().collect();
        ModuleMatrix {
            planning: sym(c[0]),
            profile: sym(c[1]),
            memory: sym(c[2]),
            action: sym(c[3]),
            security: sym(c[4]),
        }
    }

    #[test]
    fn table_rows_classify() {
        assert_eq!(classify_matrix(&m("---X-")), CoreAgentKind::Passive);
        assert_eq!(classify_matrix(&m("M-MX-")), CoreAgentKind::Active);
        assert_eq!(classify_matrix(&m("-----")), CoreAgentKind::NotAnAgent);
        assert_eq!(classify_matrix(&m("---XX")), CoreAgentKind::Passive);
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(parse_descriptors("").unwrap().is_empty());
        assert!(parse_descriptors("  \n").unwrap().is_empty());
    }

    #[test]
    fn two_canonical_variants_rejected() {
        let text = r#"[{"agent_id":"a","variants":[
            {"variant_id":"x","canonical":true,"matrix":{"planning":"-","profile":"-","memory":"-","action":"X","security":"-"}},
            {"variant_id":"y","canonical":true,"matrix":{"planning":"-","profile":"-","memory":"-","action":"X","security":"-"}}]}]"#;
        assert!(matches!(parse_descriptors(text), Err(ClassifyError::ParseError(_))));
    }

    #[test]
    fn duplicate_agent_rejected() {
        let one = r#"{"agent_id":"a","variants":[{"variant_id":"x","canonical":true,"matrix":{"planning":"-","profile":"-","memory":"-","action":"X","security":"-"}}]}"#;
        let text = format!("[{one},{one}]");
        assert!(matches!(parse_descriptors(&text), Err(ClassifyError::DuplicateAgent(a)) if a == "a"));
    }

    #[test]
    fn invalid_matrix_carries_context() {
        let text = r#"[{"agent_id":"a","variants":[{"variant_id":"x","canonical":true,"matrix":{"planning":"X","profile":"-","memory":"-","action":"-","security":"-"}}]}]"#;
        match parse_descriptors(text) {
            Err(ClassifyError::InvalidMatrix { agent, variant, .. }) => {
                assert_eq!((agent.as_str(), variant.as_str()), ("a", "x"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_descriptors("[{"), Err(ClassifyError::ParseError(_))));
    }
}
