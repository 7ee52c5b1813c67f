//! Action module: inline API-call parsing, tool execution behind egress
//! filtering, and read-only knowledge repositories.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::memory::{cosine, embed, MemoryRecord, MemoryStore};
use crate::model::ToolSpec;
use crate::security::{filter_egress, Decision, Policy};
use crate::trace::{Trace, TraceKind};

pub type Args = IndexMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    PlanFollowing,
    ApiCallRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionGoal {
    TaskCompletion,
    Communication,
    EnvironmentExploration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impact {
    EnvironmentChange,
    InternalStateChange,
    Chained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub trigger: Trigger,
    pub goal: ActionGoal,
    pub target: String,
    pub args: Args,
}

impl ActionRequest {
    pub fn api_call(call: &InlineCall) -> Self {
        Self {
            trigger: Trigger::ApiCallRequest,
            goal: ActionGoal::TaskCompletion,
            target: call.tool_id.clone(),
            args: call.args.clone(),
        }
    }

    pub fn plan_step(target: impl Into<String>, args: Args) -> Self {
        Self {
            trigger: Trigger::PlanFollowing,
            goal: ActionGoal::TaskCompletion,
            target: target.into(),
            args,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub output: String,
    pub impact: BTreeSet<Impact>,
    pub chained_requests: Vec<ActionRequest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InlineCall {
    pub tool_id: String,
    pub args: Args,
    /// Byte range of the whole `[CALL ...]` marker in the source text.
    pub span: Range<usize>,
}

const CALL_OPEN: &str = "[CALL ";

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Parses `[CALL tool(name="value", ...)]` markers in textual order. Values
/// are double-quoted with `\"` and `\\` escapes. Malformed markers are
/// skipped.
pub fn parse_inline_calls(text: &str) -> Vec<InlineCall> {
    let mut calls = Vec::new();
    let mut from = 0;
    while let Some(pos) = text[from..].find(CALL_OPEN) {
        let start = from + pos;
        match parse_one(text, start) {
            Some(call) => {
                from = call.span.end;
                calls.push(call);
            }
            None => from = start + 1,
        }
    }
    calls
}

fn parse_one(text: &str, start: usize) -> Option<InlineCall> {
    let mut cur = Cursor {
        text,
        pos: start + CALL_OPEN.len(),
    };
    let tool_id = cur.ident()?;
    cur.expect('(')?;
    let mut args = Args::new();
    cur.skip_ws();
    if cur.peek() == Some(')') {
        cur.bump();
    } else {
        loop {
            cur.skip_ws();
            let name = cur.ident()?;
            cur.skip_ws();
            cur.expect('=')?;
            cur.skip_ws();
            let value = cur.quoted()?;
            if args.insert(name, value).is_some() {
                return None;
            }
            cur.skip_ws();
            match cur.bump()? {
                ',' => continue,
                ')' => break,
                _ => return None,
            }
        }
    }
    cur.expect(']')?;
    Some(InlineCall {
        tool_id,
        args,
        span: start..cur.pos,
    })
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn expect(&mut self, want: char) -> Option<()> {
        (self.bump()? == want).then_some(())
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c == ' ') {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> Option<String> {
        let rest = &self.text[self.pos..];
        let len = rest.find(|c: char| !is_ident(c)).unwrap_or(rest.len());
        if len == 0 {
            return None;
        }
        self.pos += len;
        Some(rest[..len].to_string())
    }

    fn quoted(&mut self) -> Option<String> {
        self.expect('"')?;
        let mut out = String::new();
        loop {
            match self.bump()? {
                '"' => return Some(out),
                '\\' => match self.bump()? {
                    c @ ('"' | '\\') => out.push(c),
                    _ => return None,
                },
                c => out.push(c),
            }
        }
    }
}

/// Renders a call back into marker text; `parse_inline_calls` inverts this.
pub fn render_inline_call(tool_id: &str, args: &Args) -> String {
    let body: Vec<String> = args
        .iter()
        .map(|(k, v)| format!("{k}=\"{}\"", v.replace('\\', "\\\\").replace('"', "\\\"")))
        .collect();
    format!("[CALL {tool_id}({})]", body.join(", "))
}

/// Serializes args as `name=value` lines; this is the payload the egress
/// filter sees and an external tool receives.
pub fn encode_payload(args: &Args) -> String {
    args.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inverse of [`encode_payload`]. A line that does not start with a known
/// argument name continues the previous value.
pub fn decode_payload(payload: &str, arg_names: &[String]) -> Args {
    let mut args = Args::new();
    let mut current: Option<String> = None;
    for line in payload.split('\n') {
        let known = line.split_once('=').filter(|(k, _)| {
            (arg_names.is_empty() && !k.is_empty() && k.chars().all(is_ident))
                || arg_names.iter().any(|n| n == k)
        });
        match (known, &current) {
            (Some((k, v)), _) if !args.contains_key(k) => {
                args.insert(k.to_string(), v.to_string());
                current = Some(k.to_string());
            }
            (_, Some(k)) => {
                let slot = args.get_mut(k).expect("current key was inserted");
                slot.push('\n');
                slot.push_str(line);
            }
            (_, None) if !line.is_empty() => {
                args.insert("input".into(), line.to_string());
                current = Some("input".into());
            }
            _ => {}
        }
    }
    args
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("tool failure: {0}")]
    ToolFailure(String),
    #[error("payload to {tool} blocked by policy rule {rule}")]
    BlockedByPolicy { tool: String, rule: String },
    #[error("unknown repository {0}")]
    UnknownRepository(String),
}

impl ActionError {
    /// Text handed back to the planner as tool feedback.
    pub fn feedback_text(&self) -> String {
        format!("error: {self}")
    }
}

/// Named key-value state bag that mutating tools write into.
pub type Environment = BTreeMap<String, String>;

/// Mock tool behaviors loadable from scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolBehavior {
    /// Arithmetic over `+ - * /` and parentheses, argument `expr`.
    Calculator,
    /// Static phrase map, argument `text`.
    Translator { phrases: BTreeMap<String, String> },
    /// Top passage of a knowledge repository, argument `query`.
    Wiki { repo: String },
    /// Echoes the payload it receives.
    RemoteApi,
    /// Returns scripted output keyed by the `code` argument.
    CodeRunner {
        #[serde(default)]
        results: BTreeMap<String, String>,
    },
    /// Fixed output regardless of input.
    Static { output: String },
    /// Writes `key`=`value` into the environment.
    EnvSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDef {
    #[serde(flatten)]
    pub spec: ToolSpec,
    #[serde(flatten)]
    pub behavior: ToolBehavior,
}

impl ToolDef {
    pub fn new(spec: ToolSpec, behavior: ToolBehavior) -> Self {
        Self { spec, behavior }
    }

    pub fn mutates_environment(&self) -> bool {
        matches!(self.behavior, ToolBehavior::EnvSet)
    }

    fn invoke(
        &self,
        args: &Args,
        repos: &Repositories,
        env: &mut Environment,
    ) -> Result<String, ActionError> {
        let arg = |name: &str| args.get(name).map(String::as_str).unwrap_or("");
        match &self.behavior {
            ToolBehavior::Calculator => calculate(arg("expr"))
                .map(format_number)
                .map_err(ActionError::ToolFailure),
            ToolBehavior::Translator { phrases } => {
                let text = arg("text");
                phrases
                    .get(text)
                    .or_else(|| phrases.get(&text.to_lowercase()))
                    .cloned()
                    .ok_or_else(|| ActionError::ToolFailure(format!("no translation for {text:?}")))
            }
            ToolBehavior::Wiki { repo } => {
                let hits = repos.query(repo, arg("query"), 1)?;
                hits.into_iter()
                    .next()
                    .map(|h| h.passage)
                    .ok_or_else(|| ActionError::ToolFailure("empty repository".into()))
            }
            ToolBehavior::RemoteApi => Ok(format!("received: {}", encode_payload(args))),
            ToolBehavior::CodeRunner { results } => Ok(results
                .get(arg("code"))
                .cloned()
                .unwrap_or_else(|| "ok".to_string())),
            ToolBehavior::Static { output } => Ok(output.clone()),
            ToolBehavior::EnvSet => {
                let key = arg("key");
                if key.is_empty() {
                    return Err(ActionError::ToolFailure("missing key".into()));
                }
                env.insert(key.to_string(), arg("value").to_string());
                Ok(format!("set {key}"))
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: IndexMap<String, ToolDef>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previous definition when `tool_id` was already registered.
    pub fn register(&mut self, tool: ToolDef) -> Option<ToolDef> {
        self.tools.insert(tool.spec.tool_id.clone(), tool)
    }

    pub fn get(&self, tool_id: &str) -> Option<&ToolDef> {
        self.tools.get(tool_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repository {
    pub repo_id: String,
    pub passages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Passage {
    pub index: usize,
    pub passage: String,
    pub score: f64,
}

/// Read-only knowledge repositories, pre-embedded at load time.
#[derive(Debug, Clone, Default)]
pub struct Repositories {
    repos: BTreeMap<String, (Repository, Vec<[f64; crate::memory::EMBEDDING_DIM]>)>,
}

impl Repositories {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&mut self, repo: Repository) {
        let vectors = repo.passages.iter().map(|p| embed(p)).collect();
        self.repos.insert(repo.repo_id.clone(), (repo, vectors));
    }

    pub fn get(&self, repo_id: &str) -> Option<&Repository> {
        self.repos.get(repo_id).map(|(r, _)| r)
    }

    /// Top `top_n` passages by trigram cosine similarity; ties keep corpus order.
    pub fn query(
        &self,
        repo_id: &str,
        query: &str,
        top_n: usize,
    ) -> Result<Vec<Passage>, ActionError> {
        let (repo, vectors) = self
            .repos
            .get(repo_id)
            .ok_or_else(|| ActionError::UnknownRepository(repo_id.to_string()))?;
        let q = embed(query);
        let mut scored: Vec<Passage> = repo
            .passages
            .iter()
            .zip(vectors)
            .enumerate()
            .map(|(index, (p, v))| Passage {
                index,
                passage: p.clone(),
                score: cosine(&q, v),
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
        scored.truncate(top_n.max(1));
        Ok(scored)
    }
}

pub fn query_repository(
    repos: &Repositories,
    repo_id: &str,
    query: &str,
    top_n: usize,
) -> Result<Vec<Passage>, ActionError> {
    repos.query(repo_id, query, top_n)
}

/// Everything one action execution may touch.
pub struct ActionContext<'a> {
    pub tools: &'a ToolRegistry,
    pub repos: &'a Repositories,
    /// Egress policy; `None` runs the filter with an empty policy.
    pub guard: Option<&'a Policy>,
    /// Present only for stateful (active) executors.
    pub memory: Option<&'a mut MemoryStore>,
    pub env: &'a mut Environment,
    pub trace: &'a mut Trace,
    /// Participant executing the action, recorded as the trace actor.
    pub actor: &'a str,
    /// Call id correlating the call, verdict, and delivery events.
    pub call_id: String,
    /// Task owning short-term memory writes.
    pub task_id: &'a str,
}

pub fn execute_action(
    request: &ActionRequest,
    ctx: &mut ActionContext<'_>,
) -> Result<ActionResult, ActionError> {
    let tool = ctx
        .tools
        .get(&request.target)
        .ok_or_else(|| ActionError::UnknownTool(request.target.clone()))?;
    let payload = encode_payload(&request.args);
    ctx.trace.emit(
        TraceKind::ToolCalled,
        ctx.actor,
        json!({
            "call_id": ctx.call_id,
            "tool": tool.spec.tool_id,
            "external": tool.spec.external,
            "trigger": request.trigger,
            "goal": request.goal,
            "payload": payload,
        }),
    );
    let permissive = Policy::permissive();
    let policy = ctx.guard.unwrap_or(&permissive);
    let (delivered, verdict) = filter_egress(&payload, &tool.spec, policy);
    if tool.spec.external {
        ctx.trace.emit(
            TraceKind::GuardrailVerdict,
            ctx.actor,
            json!({
                "call_id": ctx.call_id,
                "tool": tool.spec.tool_id,
                "verdict": verdict,
            }),
        );
    }
    if verdict.decision == Decision::Block {
        return Err(ActionError::BlockedByPolicy {
            tool: tool.spec.tool_id.clone(),
            rule: verdict.matched_rule.unwrap_or_default(),
        });
    }
    ctx.trace.emit(
        TraceKind::ToolPayloadDelivered,
        ctx.actor,
        json!({
            "call_id": ctx.call_id,
            "tool": tool.spec.tool_id,
            "external": tool.spec.external,
            "payload": delivered,
        }),
    );
    let args = if tool.spec.external {
        decode_payload(&delivered, &tool.spec.arg_names)
    } else {
        request.args.clone()
    };
    let output = tool.invoke(&args, ctx.repos, ctx.env)?;

    let mut impact = BTreeSet::new();
    if tool.mutates_environment() {
        impact.insert(Impact::EnvironmentChange);
    }
    if let Some(memory) = ctx.memory.as_deref_mut() {
        let key = format!("{}/{}", ctx.task_id, ctx.call_id);
        memory.write(MemoryRecord::text(key.clone(), output.clone()).short_term(ctx.task_id));
        ctx.trace.emit(
            TraceKind::MemoryWrite,
            ctx.actor,
            json!({"key": key, "scope": "short_term", "format": "natural_language"}),
        );
        impact.insert(Impact::InternalStateChange);
    }
    let chained_requests: Vec<ActionRequest> = parse_inline_calls(&output)
        .iter()
        .map(ActionRequest::api_call)
        .collect();
    if !chained_requests.is_empty() {
        impact.insert(Impact::Chained);
    }
    Ok(ActionResult {
        output,
        impact,
        chained_requests,
    })
}

/// Recursive-descent evaluator for `+ - * /` with parentheses and unary minus.
pub fn calculate(expr: &str) -> Result<f64, String> {
    let tokens: Vec<char> = expr.chars().filter(|c| !c.is_whitespace()).collect();
    let mut p = Calc { tokens, pos: 0 };
    let v = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(format!("unexpected {:?}", p.tokens[p.pos]));
    }
    Ok(v)
}

struct Calc {
    tokens: Vec<char>,
    pos: usize,
}

impl Calc {
    fn peek(&self) -> Option<char> {
        self.tokens.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<f64, String> {
        let mut acc = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == '+' { acc + rhs } else { acc - rhs };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<f64, String> {
        let mut acc = self.factor()?;
        while let Some(op @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            if op == '/' {
                if rhs == 0.0 {
                    return Err("division by zero".into());
                }
                acc /= rhs;
            } else {
                acc *= rhs;
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<f64, String> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(-self.factor()?)
            }
            Some('(') => {
                self.pos += 1;
                let v = self.expr()?;
                if self.peek() != Some(')') {
                    return Err("unbalanced parenthesis".into());
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
                    self.pos += 1;
                }
                let s: String = self.tokens[start..self.pos].iter().collect();
                s.parse().map_err(|_| format!("bad number {s:?}"))
            }
            Some(c) => Err(format!("unexpected {c:?}")),
            None => Err("unexpected end of expression".into()),
        }
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Tool output as a JSON value for trace payloads.
pub fn result_json(result: &ActionResult) -> Value {
    json!({
        "output": result.output,
        "impact": result.impact,
        "chained": result.chained_requests.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryLocation;

    fn args(pairs: &[(&str, &str)]) -> Args {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn parses_single_call_with_span() {
        let text = r#"x [CALL calc(expr="2+2")] y"#;
        let calls = parse_inline_calls(text);
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].tool_id, "calc");
        assert_eq!(calls[0].args, args(&[("expr", "2+2")]));
        // "x " is two bytes; the marker is 23 bytes long.
        assert_eq!(calls[0].span, 2..25);
        assert_eq!(&text[calls[0].span.clone()], r#"[CALL calc(expr="2+2")]"#);
    }

    #[test]
    fn no_markers_no_calls() {
        assert!(parse_inline_calls("plain text [not a call]").is_empty());
    }

    #[test]
    fn escaped_quotes_unescape() {
        let calls = parse_inline_calls(r#"[CALL t(a="he said \"hi\"")]"#);
        assert_eq!(calls[0].args["a"], r#"he said "hi""#);
    }

    #[test]
    fn malformed_markers_skipped() {
        let text = r#"[CALL bad(a=1)] [CALL (x="y")] [CALL dup(a="1", a="2")] [CALL ok(b="2")] [CALL open(a="x""#;
        let calls = parse_inline_calls(text);
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].tool_id, "ok");
    }

    #[test]
    fn empty_arg_list() {
        let calls = parse_inline_calls("[CALL now()]");
        assert_eq!(calls[0].tool_id, "now");
        assert!(calls[0].args.is_empty());
    }

    #[test]
    fn multiple_calls_in_order() {
        let calls = parse_inline_calls(r#"[CALL a(x="1")] then [CALL b(y="2", z="3")]"#);
        let ids: Vec<&str> = calls.iter().map(|c| c.tool_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(calls[1].args.keys().collect::<Vec<_>>(), vec!["y", "z"]);
    }

    #[test]
    fn calculator() {
        assert_eq!(calculate("2+2"), Ok(4.0));
        assert_eq!(calculate("2 + 3 * (4 - 1) / 3"), Ok(5.0));
        assert_eq!(calculate("-3*-2"), Ok(6.0));
        assert_eq!(calculate("1/0"), Err("division by zero".to_string()));
        assert!(calculate("2+").is_err());
        assert_eq!(format_number(4.0), "4");
        assert_eq!(format_number(2.5), "2.5");
    }

    #[test]
    fn payload_round_trip() {
        let a = args(&[("expr", "1+1"), ("note", "two\nlines")]);
        let names = vec!["expr".to_string(), "note".to_string()];
        assert_eq!(decode_payload(&encode_payload(&a), &names), a);
    }

    struct Fixture {
        tools: ToolRegistry,
        repos: Repositories,
        env: Environment,
        trace: Trace,
    }

    fn fixture() -> Fixture {
        let mut tools = ToolRegistry::new();
        tools.register(ToolDef::new(ToolSpec::internal("calc"), ToolBehavior::Calculator));
        let mut api = ToolSpec::external("remote_api");
        api.arg_names = vec!["q".into()];
        tools.register(ToolDef::new(api, ToolBehavior::RemoteApi));
        tools.register(ToolDef::new(
            ToolSpec::internal("chain"),
            ToolBehavior::Static {
                output: r#"next: [CALL calc(expr="1+1")]"#.into(),
            },
        ));
        tools.register(ToolDef::new(ToolSpec::internal("set"), ToolBehavior::EnvSet));
        let mut repos = Repositories::new();
        repos.load(Repository {
            repo_id: "wiki".into(),
            passages: vec!["the cat sat on the mat".into(), "stock prices fell".into()],
        });
        Fixture {
            tools,
            repos,
            env: Environment::new(),
            trace: Trace::new(),
        }
    }

    fn run(
        f: &mut Fixture,
        req: &ActionRequest,
        guard: Option<&Policy>,
        memory: Option<&mut MemoryStore>,
    ) -> Result<ActionResult, ActionError> {
        let mut ctx = ActionContext {
            tools: &f.tools,
            repos: &f.repos,
            guard,
            memory,
            env: &mut f.env,
            trace: &mut f.trace,
            actor: "worker",
            call_id: "c0".into(),
            task_id: "t1",
        };
        execute_action(req, &mut ctx)
    }

    #[test]
    fn pure_tool_has_no_impact() {
        let mut f = fixture();
        let r = run(
            &mut f,
            &ActionRequest::plan_step("calc", args(&[("expr", "2+2")])),
            None,
            None,
        )
        .unwrap();
        assert_eq!(r.output, "4");
        assert!(r.impact.is_empty());
    }

    #[test]
    fn division_by_zero_is_tool_failure() {
        let mut f = fixture();
        let err = run(
            &mut f,
            &ActionRequest::plan_step("calc", args(&[("expr", "1/0")])),
            None,
            None,
        )
        .unwrap_err();
        assert_eq!(err, ActionError::ToolFailure("division by zero".into()));
        assert_eq!(err.feedback_text(), "error: tool failure: division by zero");
    }

    #[test]
    fn external_payload_redacted_before_delivery() {
        let mut f = fixture();
        let policy = Policy {
            secrets: vec!["S3CR3T".into()],
            ..Policy::default()
        };
        let req = ActionRequest::plan_step("remote_api", args(&[("q", "token S3CR3T please")]));
        let r = run(&mut f, &req, Some(&policy), None).unwrap();
        let (expected, _) =
            filter_egress("q=token S3CR3T please", &f.tools.get("remote_api").unwrap().spec, &policy);
        assert_eq!(expected, "q=token [REDACTED] please");
        assert_eq!(r.output, format!("received: {expected}"));
        let kinds: Vec<TraceKind> = f.trace.events().iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                TraceKind::ToolCalled,
                TraceKind::GuardrailVerdict,
                TraceKind::ToolPayloadDelivered
            ]
        );
        assert_eq!(f.trace.events()[2].payload["payload"], expected);
    }

    #[test]
    fn blocked_payload_not_delivered() {
        let mut f = fixture();
        let policy = Policy {
            deny_patterns: vec!["drop table".into()],
            ..Policy::default()
        };
        let req = ActionRequest::plan_step("remote_api", args(&[("q", "DROP TABLE users")]));
        let err = run(&mut f, &req, Some(&policy), None).unwrap_err();
        assert!(matches!(err, ActionError::BlockedByPolicy { .. }));
        assert_eq!(f.trace.count(TraceKind::ToolPayloadDelivered), 0);
    }

    #[test]
    fn unknown_tool() {
        let mut f = fixture();
        let err = run(&mut f, &ActionRequest::plan_step("nope", Args::new()), None, None);
        assert_eq!(err.unwrap_err(), ActionError::UnknownTool("nope".into()));
    }

    #[test]
    fn impacts_reflect_memory_env_and_chaining() {
        let mut f = fixture();
        let mut mem = MemoryStore::new(MemoryLocation::Embedded, 8);
        let r = run(
            &mut f,
            &ActionRequest::plan_step("chain", Args::new()),
            None,
            Some(&mut mem),
        )
        .unwrap();
        assert!(r.impact.contains(&Impact::Chained));
        assert!(r.impact.contains(&Impact::InternalStateChange));
        assert_eq!(r.chained_requests.len(), 1);
        assert_eq!(r.chained_requests[0].target, "calc");
        assert_eq!(r.chained_requests[0].trigger, Trigger::ApiCallRequest);
        assert_eq!(mem.len(), 1);
        // chained calls are surfaced, not executed
        assert_eq!(f.trace.count(TraceKind::ToolCalled), 1);

        let r = run(
            &mut f,
            &ActionRequest::plan_step("set", args(&[("key", "door"), ("value", "open")])),
            None,
            None,
        )
        .unwrap();
        assert_eq!(r.impact, [Impact::EnvironmentChange].into());
        assert_eq!(f.env.get("door").map(String::as_str), Some("open"));
    }

    #[test]
    fn repository_queries() {
        let f = fixture();
        let hits = query_repository(&f.repos, "wiki", "the cat sat on the mat", 1).unwrap();
        assert_eq!(hits[0].index, 0);
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        let all = query_repository(&f.repos, "wiki", "cat", 10).unwrap();
        assert_eq!(all.len(), 2);
        assert!(all[0].score >= all[1].score);
        assert_eq!(
            query_repository(&f.repos, "nope", "x", 1).unwrap_err(),
            ActionError::UnknownRepository("nope".into())
        );
    }
}
