//! Guardrails on three axes: prompts, responses, and payloads leaving the
//! privacy circle. Rule-based checks (deny patterns, canonical forms, literal
//! secrets) and model-powered classification share one verdict type.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{pattern_matches, ModelPort, ModelRequest, ToolSpec};

pub const REDACTION_MARKER: &str = "[REDACTED]";
pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SecurityError {
    #[error("model-powered guardrail requested but no model is bound")]
    GuardrailUnavailable,
    #[error("invalid policy {policy}: {reason}")]
    InvalidPolicy { policy: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardMode {
    #[default]
    RuleBased,
    LmPowered,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(default)]
    pub policy_id: String,
    #[serde(default)]
    pub deny_patterns: Vec<String>,
    #[serde(default)]
    pub canonical_forms: Vec<String>,
    #[serde(default = "default_threshold")]
    pub jaccard_threshold: f64,
    #[serde(default)]
    pub secrets: Vec<String>,
    #[serde(default)]
    pub blocked_categories: BTreeSet<String>,
    #[serde(default)]
    pub mode: GuardMode,
}

fn default_threshold() -> f64 {
    DEFAULT_JACCARD_THRESHOLD
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            policy_id: String::new(),
            deny_patterns: Vec::new(),
            canonical_forms: Vec::new(),
            jaccard_threshold: DEFAULT_JACCARD_THRESHOLD,
            secrets: Vec::new(),
            blocked_categories: BTreeSet::new(),
            mode: GuardMode::RuleBased,
        }
    }
}

impl Policy {
    /// A policy with no rules: every check allows.
    pub fn permissive() -> Self {
        Self {
            policy_id: "permissive".into(),
            ..Self::default()
        }
    }

    /// Secrets must be nonempty and must not contain `[` or `]` or be a
    /// substring of the redaction marker; otherwise a redacted payload could
    /// still contain them.
    pub fn validate(&self) -> Result<(), SecurityError> {
        let bad = |reason: String| SecurityError::InvalidPolicy {
            policy: self.policy_id.clone(),
            reason,
        };
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            return Err(bad(format!(
                "jaccard_threshold {} outside (0, 1]",
                self.jaccard_threshold
            )));
        }
        for (i, s) in self.secrets.iter().enumerate() {
            if s.is_empty() {
                return Err(bad(format!("secret #{i} is empty")));
            }
            if s.contains('[') || s.contains(']') || REDACTION_MARKER.contains(s.as_str()) {
                return Err(bad(format!("secret #{i} overlaps the redaction marker")));
            }
        }
        Ok(())
    }

    fn needs_model(&self) -> bool {
        matches!(self.mode, GuardMode::LmPowered | GuardMode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Redact,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Prompt,
    Response,
    Privacy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub axis: Axis,
    #[serde(default)]
    pub matched_rule: Option<String>,
    #[serde(default)]
    pub redacted_text: Option<String>,
}

impl Verdict {
    pub fn allow(axis: Axis) -> Self {
        Self {
            decision: Decision::Allow,
            axis,
            matched_rule: None,
            redacted_text: None,
        }
    }

    fn block(axis: Axis, rule: String) -> Self {
        Self {
            decision: Decision::Block,
            axis,
            matched_rule: Some(rule),
            redacted_text: None,
        }
    }

    pub fn is_block(&self) -> bool {
        self.decision == Decision::Block
    }
}

fn normalize_tokens(text: &str) -> BTreeSet<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Best canonical form with token-set Jaccard similarity at or above
/// `threshold`; earlier forms win ties.
pub fn canonical_match(text: &str, forms: &[String], threshold: f64) -> Option<(String, f64)> {
    let tokens = normalize_tokens(text);
    let mut best: Option<(usize, f64)> = None;
    for (i, form) in forms.iter().enumerate() {
        let sim = jaccard(&tokens, &normalize_tokens(form));
        if sim >= threshold && best.is_none_or(|(_, b)| sim > b) {
            best = Some((i, sim));
        }
    }
    best.map(|(i, sim)| (forms[i].clone(), sim))
}

fn rule_block(text: &str, policy: &Policy, axis: Axis) -> Option<Verdict> {
    let lowered = text.to_lowercase();
    if let Some(p) = policy
        .deny_patterns
        .iter()
        .find(|p| pattern_matches(&p.to_lowercase(), &lowered))
    {
        return Some(Verdict::block(axis, format!("deny:{p}")));
    }
    canonical_match(text, &policy.canonical_forms, policy.jaccard_threshold)
        .map(|(form, _)| Verdict::block(axis, format!("canonical:{form}")))
}

fn lm_block(text: &str, policy: &Policy, model: &dyn ModelPort, axis: Axis) -> Option<Verdict> {
    let response = model.complete(&ModelRequest::new(format!("CLASSIFY: {text}")));
    let label = response.first().trim();
    policy
        .blocked_categories
        .contains(label)
        .then(|| Verdict::block(axis, format!("lm:{label}")))
}

fn screen(
    text: &str,
    policy: &Policy,
    model: Option<&dyn ModelPort>,
    axis: Axis,
) -> Result<Option<Verdict>, SecurityError> {
    if policy.needs_model() && model.is_none() {
        return Err(SecurityError::GuardrailUnavailable);
    }
    if matches!(policy.mode, GuardMode::RuleBased | GuardMode::Both) {
        if let Some(v) = rule_block(text, policy, axis) {
            return Ok(Some(v));
        }
    }
    if let (true, Some(m)) = (policy.needs_model(), model) {
        return Ok(lm_block(text, policy, m, axis));
    }
    Ok(None)
}

pub fn check_prompt(
    text: &str,
    policy: &Policy,
    model: Option<&dyn ModelPort>,
) -> Result<Verdict, SecurityError> {
    Ok(screen(text, policy, model, Axis::Prompt)?.unwrap_or_else(|| Verdict::allow(Axis::Prompt)))
}

pub fn check_response(
    text: &str,
    policy: &Policy,
    model: Option<&dyn ModelPort>,
) -> Result<Verdict, SecurityError> {
    if let Some(v) = screen(text, policy, model, Axis::Response)? {
        return Ok(v);
    }
    Ok(redact_verdict(text, policy, Axis::Response))
}

/// Payload leaving the agent toward `destination`. Internal tools sit inside
/// the privacy circle and see the payload untouched.
pub fn filter_egress(payload: &str, destination: &ToolSpec, policy: &Policy) -> (String, Verdict) {
    if !destination.external {
        return (payload.to_string(), Verdict::allow(Axis::Privacy));
    }
    if let Some(v) = rule_block_patterns_only(payload, policy) {
        return (String::new(), v);
    }
    let verdict = redact_verdict(payload, policy, Axis::Privacy);
    let delivered = verdict
        .redacted_text
        .clone()
        .unwrap_or_else(|| payload.to_string());
    (delivered, verdict)
}

fn rule_block_patterns_only(text: &str, policy: &Policy) -> Option<Verdict> {
    let lowered = text.to_lowercase();
    policy
        .deny_patterns
        .iter()
        .find(|p| pattern_matches(&p.to_lowercase(), &lowered))
        .map(|p| Verdict::block(Axis::Privacy, format!("deny:{p}")))
}

fn redact_verdict(text: &str, policy: &Policy, axis: Axis) -> Verdict {
    match redact_secrets(text, &policy.secrets) {
        Some((redacted, first)) => Verdict {
            decision: Decision::Redact,
            axis,
            matched_rule: Some(format!("secret:{first}")),
            redacted_text: Some(redacted),
        },
        None => Verdict::allow(axis),
    }
}

/// Replaces every maximal run of overlapping secret occurrences with the
/// marker. Returns `None` when no secret occurs, otherwise the redacted text
/// and the index of the first secret found.
pub fn redact_secrets(text: &str, secrets: &[String]) -> Option<(String, usize)> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut first = None;
    for (i, s) in secrets.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(pos) = text[from..].find(s.as_str()) {
            let start = from + pos;
            spans.push((start, start + s.len()));
            first.get_or_insert(i);
            // Step one char so overlapping occurrences are caught.
            from = start + text[start..].chars().next().map_or(1, char::len_utf8);
        }
    }
    let first = first?;
    spans.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in spans {
        match merged.last_mut() {
            Some(last) if s < last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (s, e) in merged {
        out.push_str(&text[cursor..s]);
        out.push_str(REDACTION_MARKER);
        cursor = e;
    }
    out.push_str(&text[cursor..]);
    Some((out, first))
}
