//! Shared vocabulary: module presence, core-agent kinds, message envelopes,
//! the model and tool ports, and the scripted model used as a deterministic
//! stand-in for an LLM.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Presence level of one module inside a core-agent.
///
/// Serialized with the three-symbol notation used by classification tables:
/// `"X"` present, `"M"` minimal, `"-"` absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Presence {
    #[serde(rename = "-")]
    Absent,
    #[serde(rename = "M")]
    Minimal,
    #[serde(rename = "X")]
    Present,
}

impl Presence {
    pub fn is_absent(self) -> bool {
        self == Presence::Absent
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Presence::Absent => "-",
            Presence::Minimal => "M",
            Presence::Present => "X",
        }
    }
}

/// The five core-agent modules a matrix tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModuleName {
    Planning,
    Profile,
    Memory,
    Action,
    Security,
}

impl ModuleName {
    pub const ALL: [ModuleName; 5] = [
        ModuleName::Planning,
        ModuleName::Profile,
        ModuleName::Memory,
        ModuleName::Action,
        ModuleName::Security,
    ];
}

impl fmt::Display for ModuleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModuleName::Planning => "planning",
            ModuleName::Profile => "profile",
            ModuleName::Memory => "memory",
            ModuleName::Action => "action",
            ModuleName::Security => "security",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModuleMatrix {
    pub planning: Presence,
    pub profile: Presence,
    pub memory: Presence,
    pub action: Presence,
    pub security: Presence,
}

impl ModuleMatrix {
    pub const EMPTY: ModuleMatrix = ModuleMatrix {
        planning: Presence::Absent,
        profile: Presence::Absent,
        memory: Presence::Absent,
        action: Presence::Absent,
        security: Presence::Absent,
    };

    pub fn get(&self, module: ModuleName) -> Presence {
        match module {
            ModuleName::Planning => self.planning,
            ModuleName::Profile => self.profile,
            ModuleName::Memory => self.memory,
            ModuleName::Action => self.action,
            ModuleName::Security => self.security,
        }
    }

    pub fn set(&mut self, module: ModuleName, value: Presence) {
        match module {
            ModuleName::Planning => self.planning = value,
            ModuleName::Profile => self.profile = value,
            ModuleName::Memory => self.memory = value,
            ModuleName::Action => self.action = value,
            ModuleName::Security => self.security = value,
        }
    }

    pub fn with(mut self, module: ModuleName, value: Presence) -> Self {
        self.set(module, value);
        self
    }

    pub fn all_absent(&self) -> bool {
        ModuleName::ALL.iter().all(|m| self.get(*m).is_absent())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreAgentKind {
    Active,
    Passive,
    NotAnAgent,
}

impl fmt::Display for CoreAgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoreAgentKind::Active => "Active",
            CoreAgentKind::Passive => "Passive",
            CoreAgentKind::NotAnAgent => "N/A",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid module matrix: action is absent while {0} is not")]
    InvalidMatrix(ModuleName),
    #[error("unknown correlation id {0}")]
    UnknownCorrelation(u64),
}

/// Accepts a matrix whose action module is present, or one with every module
/// absent (the not-an-agent case).
pub fn validate_module_matrix(matrix: ModuleMatrix) -> Result<ModuleMatrix, ModelError> {
    if !matrix.action.is_absent() {
        return Ok(matrix);
    }
    match ModuleName::ALL
        .iter()
        .find(|m| !matrix.get(**m).is_absent())
    {
        Some(offender) => Err(ModelError::InvalidMatrix(*offender)),
        None => Ok(matrix),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Task,
    Plan,
    ApiCallRequest,
    ToolResult,
    Feedback,
    HumanMsg,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub msg_id: u64,
    pub sender: String,
    pub recipient: String,
    pub kind: EnvelopeKind,
    pub payload: Value,
    pub correlation: Option<u64>,
}

/// Append-only log of envelopes exchanged in one run. Allocates message ids
/// and rejects correlations that do not point at an earlier message.
#[derive(Debug, Default, Clone)]
pub struct EnvelopeLog {
    envelopes: Vec<Envelope>,
}

impl EnvelopeLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(
        &mut self,
        sender: impl Into<String>,
        recipient: impl Into<String>,
        kind: EnvelopeKind,
        payload: Value,
        correlation: Option<u64>,
    ) -> Result<&Envelope, ModelError> {
        let msg_id = self.envelopes.len() as u64;
        if let Some(c) = correlation {
            if c >= msg_id {
                return Err(ModelError::UnknownCorrelation(c));
            }
        }
        self.envelopes.push(Envelope {
            msg_id,
            sender: sender.into(),
            recipient: recipient.into(),
            kind,
            payload,
            correlation,
        });
        Ok(self.envelopes.last().expect("just pushed"))
    }

    pub fn get(&self, msg_id: u64) -> Option<&Envelope> {
        self.envelopes.get(msg_id as usize)
    }

    pub fn envelopes(&self) -> &[Envelope] {
        &self.envelopes
    }

    /// Follows correlation links back from `msg_id` to the root of its chain.
    pub fn chain(&self, msg_id: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        let mut cursor = Some(msg_id);
        while let Some(id) = cursor {
            if !seen.insert(id) {
                break;
            }
            out.push(id);
            cursor = self.get(id).and_then(|e| e.correlation);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub prompt: String,
    #[serde(default)]
    pub system_prefix: Option<String>,
    #[serde(default)]
    pub adapter_tags: Vec<String>,
    pub max_candidates: usize,
}

impl ModelRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            system_prefix: None,
            adapter_tags: Vec::new(),
            max_candidates: 1,
        }
    }

    pub fn with_candidates(mut self, n: usize) -> Self {
        self.max_candidates = n.max(1);
        self
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.adapter_tags = tags.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub candidates: Vec<String>,
    /// Id of the scripted rule that fired, or `"echo"` for the fallback.
    pub source: String,
}

impl ModelResponse {
    pub fn first(&self) -> &str {
        self.candidates.first().map(String::as_str).unwrap_or("")
    }

    pub fn is_echo(&self) -> bool {
        self.source == ECHO_SOURCE
    }
}

pub const ECHO_SOURCE: &str = "echo";

/// Anything that turns a request into candidate completions.
pub trait ModelPort: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> ModelResponse;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub tool_id: String,
    #[serde(default)]
    pub domains: BTreeSet<String>,
    #[serde(default)]
    pub external: bool,
    #[serde(default)]
    pub arg_names: Vec<String>,
}

impl ToolSpec {
    pub fn internal(tool_id: impl Into<String>) -> Self {
        Self {
            tool_id: tool_id.into(),
            domains: BTreeSet::new(),
            external: false,
            arg_names: Vec::new(),
        }
    }

    pub fn external(tool_id: impl Into<String>) -> Self {
        Self {
            external: true,
            ..Self::internal(tool_id)
        }
    }
}

/// Matches `text` against a pattern made of a literal core with an optional
/// single leading and/or trailing `*`.
///
/// * `core` with no star matches when `core` occurs anywhere in `text`.
/// * `core*` matches when some word of `text` starts with `core`.
/// * `*core` matches when some word of `text` ends with `core`.
/// * `*` alone matches everything.
pub fn pattern_matches(pattern: &str, text: &str) -> bool {
    let rest = pattern.strip_prefix('*');
    let leading = rest.is_some();
    let rest = rest.unwrap_or(pattern);
    let core = rest.strip_suffix('*');
    let trailing = core.is_some();
    let core = core.unwrap_or(rest);
    if core.is_empty() {
        return true;
    }
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    text.match_indices(core).any(|(start, m)| {
        let end = start + m.len();
        let starts_word = text[..start].chars().next_back().is_none_or(|c| !is_word(c));
        let ends_word = text[end..].chars().next().is_none_or(|c| !is_word(c));
        match (leading, trailing) {
            (false, false) => true,
            (false, true) => starts_word,
            (true, false) => ends_word,
            (true, true) => true,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub id: String,
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub adapter_tag: Option<String>,
    pub responses: Vec<String>,
}

impl ScriptRule {
    pub fn new<I, S>(id: impl Into<String>, pattern: impl Into<String>, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            id: id.into(),
            pattern: pattern.into(),
            adapter_tag: None,
            responses: responses.into_iter().map(Into::into).collect(),
        }
    }

    pub fn requiring_tag(mut self, tag: impl Into<String>) -> Self {
        self.adapter_tag = Some(tag.into());
        self
    }

    fn fires(&self, request: &ModelRequest) -> bool {
        pattern_matches(&self.pattern, &request.prompt)
            && self
                .adapter_tag
                .as_ref()
                .is_none_or(|t| request.adapter_tags.iter().any(|have| have == t))
    }
}

/// First matching rule wins; no match falls back to echoing the prompt.
pub fn scripted_complete(script: &[ScriptRule], request: &ModelRequest) -> ModelResponse {
    let limit = request.max_candidates.max(1);
    for rule in script {
        if rule.fires(request) && !rule.responses.is_empty() {
            return ModelResponse {
                candidates: rule.responses.iter().take(limit).cloned().collect(),
                source: rule.id.clone(),
            };
        }
    }
    ModelResponse {
        candidates: vec![format!("ECHO:{}", request.prompt)],
        source: ECHO_SOURCE.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptedModel {
    pub rules: Vec<ScriptRule>,
}

impl ScriptedModel {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }
}

impl ModelPort for ScriptedModel {
    fn complete(&self, request: &ModelRequest) -> ModelResponse {
        scripted_complete(&self.rules, request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Presence::*;

    fn matrix(p: Presence, pr: Presence, m: Presence, a: Presence, s: Presence) -> ModuleMatrix {
        ModuleMatrix {
            planning: p,
            profile: pr,
            memory: m,
            action: a,
            security: s,
        }
    }

    #[test]
    fn toolformer_row_validates() {
        let m = matrix(Absent, Absent, Absent, Present, Absent);
        assert_eq!(validate_module_matrix(m), Ok(m));
    }

    #[test]
    fn empty_matrix_validates() {
        assert_eq!(
            validate_module_matrix(ModuleMatrix::EMPTY),
            Ok(ModuleMatrix::EMPTY)
        );
    }

    #[test]
    fn planning_without_action_rejected() {
        let m = ModuleMatrix::EMPTY.with(ModuleName::Planning, Present);
        assert_eq!(
            validate_module_matrix(m),
            Err(ModelError::InvalidMatrix(ModuleName::Planning))
        );
    }

    #[test]
    fn presence_order() {
        assert!(Absent < Minimal && Minimal < Present);
        assert_eq!(serde_json::to_string(&Minimal).unwrap(), "\"M\"");
        assert_eq!(serde_json::from_str::<Presence>("\"-\"").unwrap(), Absent);
    }

    #[test]
    fn hotwire_rule_fires() {
        let script = vec![ScriptRule::new("r0", "hotwire*", ["REFUSE"])];
        let out = scripted_complete(&script, &ModelRequest::new("how to hotwire a car"));
        assert_eq!(out.candidates, vec!["REFUSE"]);
        assert_eq!(out.source, "r0");
    }

    #[test]
    fn empty_script_echoes() {
        let out = scripted_complete(&[], &ModelRequest::new("hi"));
        assert_eq!(out.candidates, vec!["ECHO:hi"]);
        assert!(out.is_echo());
    }

    #[test]
    fn adapter_tag_gates_rule() {
        let script = vec![ScriptRule::new("sql", "insert", ["INSERT INTO t VALUES (1)"])
            .requiring_tag("sql-profile")];
        let untagged = scripted_complete(&script, &ModelRequest::new("insert"));
        assert_eq!(untagged.candidates, vec!["ECHO:insert"]);
        let tagged = scripted_complete(
            &script,
            &ModelRequest::new("insert").with_tags(["sql-profile"]),
        );
        assert_eq!(tagged.candidates, vec!["INSERT INTO t VALUES (1)"]);
    }

    #[test]
    fn candidates_truncated() {
        let script = vec![ScriptRule::new("r", "*", ["a", "b", "c"])];
        let out = scripted_complete(&script, &ModelRequest::new("x").with_candidates(2));
        assert_eq!(out.candidates, vec!["a", "b"]);
    }

    #[test]
    fn wildcard_forms() {
        assert!(pattern_matches("*", "anything"));
        assert!(pattern_matches("cat", "concatenate"));
        assert!(pattern_matches("hot*", "a hotdog"));
        assert!(!pattern_matches("dog*", "a hotdog"));
        assert!(pattern_matches("*dog", "a hotdog"));
        assert!(!pattern_matches("*hot", "a hotdog"));
        assert!(pattern_matches("*ate*", "concatenate"));
    }

    #[test]
    fn envelope_correlation_must_point_back() {
        let mut log = EnvelopeLog::new();
        let first = log
            .send("human", "agent", EnvelopeKind::Task, Value::Null, None)
            .unwrap()
            .msg_id;
        let second = log
            .send("agent", "human", EnvelopeKind::HumanMsg, Value::Null, Some(first))
            .unwrap()
            .msg_id;
        assert_eq!(log.chain(second), vec![1, 0]);
        assert_eq!(
            log.send("a", "b", EnvelopeKind::Control, Value::Null, Some(9))
                .unwrap_err(),
            ModelError::UnknownCorrelation(9)
        );
    }
}
