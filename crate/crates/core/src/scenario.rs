//! Scenario files: declarative topologies, scripted models, tools, and a
//! schedule of tasks, plus assertions checked against the resulting trace.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::action::{Repositories, Repository, ToolBehavior, ToolDef, ToolRegistry};
use crate::memory::MemoryRecord;
use crate::model::{ModelPort, ScriptedModel};
use crate::orchestration::{
    Architecture, CoreAgentDecl, DomainDef, ElectionSettings, Orchestrator, OrchestratorConfig, Resources,
    Routing, TaskOutcome, Topology, Wiring, DEFAULT_STEP_LIMIT,
};
use crate::planning::TaskSpec;
use crate::profile::Profile;
use crate::security::Policy;
use crate::trace::{Trace, TraceEvent, TraceKind};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDecl {
    pub architecture: Architecture,
    pub core_agents: Vec<CoreAgentDecl>,
    #[serde(default)]
    pub front_model: Option<String>,
    #[serde(default)]
    pub front_profiles: Vec<String>,
    /// Passive ids attached at start; all passives when omitted.
    #[serde(default)]
    pub attached: Option<BTreeSet<String>>,
    #[serde(default)]
    pub wiring: Wiring,
    #[serde(default)]
    pub routing: Routing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleItem {
    Task(TaskSpec),
    Attach(String),
    Detach(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssertionKind {
    EventCount {
        event: TraceKind,
        #[serde(default, rename = "where")]
        predicate: BTreeMap<String, Value>,
        #[serde(default)]
        min: Option<usize>,
        #[serde(default)]
        max: Option<usize>,
    },
    /// The first matching `before` event precedes the first matching `after`
    /// event; both must exist.
    EventOrder {
        before: TraceKind,
        #[serde(default)]
        where_before: BTreeMap<String, Value>,
        after: TraceKind,
        #[serde(default)]
        where_after: BTreeMap<String, Value>,
    },
    ForbidSubstringInExternalPayload {
        text: String,
    },
    RequireEvent {
        event: TraceKind,
        #[serde(default, rename = "where")]
        predicate: BTreeMap<String, Value>,
    },
    ForbidEvent {
        event: TraceKind,
        #[serde(default, rename = "where")]
        predicate: BTreeMap<String, Value>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionSpec {
    #[serde(flatten)]
    pub kind: AssertionKind,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionResult {
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step_limit")]
    pub step_limit: usize,
    #[serde(default)]
    pub election: ElectionSettings,
    #[serde(default = "default_ttl")]
    pub gateway_ttl: u64,
    #[serde(default)]
    pub models: BTreeMap<String, ScriptedModel>,
    #[serde(default)]
    pub tools: Vec<ToolDef>,
    #[serde(default)]
    pub repositories: Vec<Repository>,
    #[serde(default)]
    pub policies: Vec<Policy>,
    #[serde(default)]
    pub profiles: Vec<Profile>,
    #[serde(default)]
    pub domains: BTreeMap<String, DomainDef>,
    pub topology: TopologyDecl,
    pub schedule: Vec<ScheduleItem>,
    #[serde(default)]
    pub assertions: Vec<AssertionSpec>,
}

fn default_step_limit() -> usize {
    DEFAULT_STEP_LIMIT
}

fn default_ttl() -> u64 {
    crate::orchestration::gateway::DEFAULT_TTL
}

pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec, ScenarioError> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

/// Result of one scenario run. `error` holds the orchestration failure that
/// stopped the schedule, if any; the trace up to that point is kept.
#[derive(Debug)]
pub struct ScenarioRun {
    pub scenario_id: String,
    pub seed: u64,
    pub trace: Trace,
    pub outcomes: Vec<TaskOutcome>,
    pub results: Vec<AssertionResult>,
    pub error: Option<String>,
    pub memory: BTreeMap<String, Vec<MemoryRecord>>,
}

impl ScenarioRun {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.results.iter().all(|r| r.passed)
    }
}

fn unique<'a>(kind: &str, ids: impl Iterator<Item = &'a str>) -> Result<(), ScenarioError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(ScenarioError::ScenarioInvalid(format!("duplicate {kind} {id}")));
        }
    }
    Ok(())
}

/// Resolves every cross-reference and builds a ready orchestrator.
pub fn build(spec: &ScenarioSpec, seed: u64) -> Result<Orchestrator, ScenarioError> {
    let invalid = |m: String| ScenarioError::ScenarioInvalid(m);
    unique("tool", spec.tools.iter().map(|t| t.spec.tool_id.as_str()))?;
    unique("policy", spec.policies.iter().map(|p| p.policy_id.as_str()))?;
    unique("profile", spec.profiles.iter().map(|p| p.profile_id.as_str()))?;
    unique("repository", spec.repositories.iter().map(|r| r.repo_id.as_str()))?;

    let mut tools = ToolRegistry::new();
    let repo_ids: BTreeSet<&str> = spec.repositories.iter().map(|r| r.repo_id.as_str()).collect();
    for t in &spec.tools {
        if let ToolBehavior::Wiki { repo } = &t.behavior {
            if !repo_ids.contains(repo.as_str()) {
                return Err(invalid(format!("tool {} names unknown repository {repo}", t.spec.tool_id)));
            }
        }
        tools.register(t.clone());
    }
    let mut repos = Repositories::new();
    for r in &spec.repositories {
        repos.load(r.clone());
    }
    let profiles: BTreeMap<String, Profile> = spec
        .profiles
        .iter()
        .map(|p| (p.profile_id.clone(), p.clone()))
        .collect();
    let policies: BTreeMap<String, Policy> = spec
        .policies
        .iter()
        .map(|p| (p.policy_id.clone(), p.clone()))
        .collect();
    let models: BTreeMap<String, Arc<dyn ModelPort>> = spec
        .models
        .iter()
        .map(|(k, m)| (k.clone(), Arc::new(m.clone()) as Arc<dyn ModelPort>))
        .collect();

    let decl = &spec.topology;
    let agents = decl
        .core_agents
        .iter()
        .map(|d| d.build(&profiles, &policies))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| invalid(e.to_string()))?;
    let front_profiles = decl
        .front_profiles
        .iter()
        .map(|id| {
            profiles
                .get(id)
                .cloned()
                .ok_or_else(|| invalid(format!("unknown profile {id}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut topology = Topology::new(decl.architecture, agents)
        .with_wiring(decl.wiring)
        .with_routing(decl.routing);
    topology.front_model = decl.front_model.clone();
    topology.front_profiles = front_profiles;
    if let Some(attached) = &decl.attached {
        topology.attached = attached.clone();
    }
    let config = OrchestratorConfig {
        step_limit: spec.step_limit,
        seed,
        election: spec.election,
        gateway_ttl: spec.gateway_ttl,
    };
    let resources = Resources {
        models,
        tools,
        repos,
        domains: spec.domains.clone(),
    };
    Orchestrator::new(topology, resources, config).map_err(|e| invalid(e.to_string()))
}

pub fn run_scenario(spec: &ScenarioSpec, seed_override: Option<u64>) -> Result<ScenarioRun, ScenarioError> {
    let seed = seed_override.unwrap_or(spec.seed);
    let mut orch = build(spec, seed)?;
    let mut outcomes = Vec::new();
    let mut error = None;
    for item in &spec.schedule {
        let r = match item {
            ScheduleItem::Task(t) => orch.run_task(t).map(|o| outcomes.push(o)),
            ScheduleItem::Attach(id) => orch.attach(id),
            ScheduleItem::Detach(id) => orch.detach(id),
        };
        if let Err(e) = r {
            error = Some(e.to_string());
            break;
        }
    }
    let results = check_assertions(&orch.trace, &spec.assertions);
    Ok(ScenarioRun {
        scenario_id: spec.scenario_id.clone(),
        seed,
        memory: orch.memory_dump(),
        trace: orch.trace,
        outcomes,
        results,
        error,
    })
}

fn matches(event: &TraceEvent, predicate: &BTreeMap<String, Value>) -> bool {
    predicate
        .iter()
        .all(|(path, want)| event.field(path).as_ref() == Some(want))
}

fn matching<'a>(
    trace: &'a Trace,
    kind: TraceKind,
    predicate: &'a BTreeMap<String, Value>,
) -> impl Iterator<Item = &'a TraceEvent> {
    trace.of_kind(kind).filter(move |e| matches(e, predicate))
}

fn describe(kind: &AssertionKind) -> String {
    match kind {
        AssertionKind::EventCount { event, min, max, .. } => {
            format!("event_count({event}, min={min:?}, max={max:?})")
        }
        AssertionKind::EventOrder { before, after, .. } => format!("event_order({before} before {after})"),
        AssertionKind::ForbidSubstringInExternalPayload { text } => {
            format!("forbid_substring_in_external_payload({text:?})")
        }
        AssertionKind::RequireEvent { event, .. } => format!("require_event({event})"),
        AssertionKind::ForbidEvent { event, .. } => format!("forbid_event({event})"),
    }
}

/// Evaluates each assertion independently; the trace is only read.
pub fn check_assertions(trace: &Trace, assertions: &[AssertionSpec]) -> Vec<AssertionResult> {
    assertions
        .iter()
        .map(|a| {
            let (passed, detail) = check_one(trace, &a.kind);
            AssertionResult {
                description: if a.description.is_empty() {
                    describe(&a.kind)
                } else {
                    a.description.clone()
                },
                passed,
                detail,
            }
        })
        .collect()
}

fn check_one(trace: &Trace, kind: &AssertionKind) -> (bool, String) {
    match kind {
        AssertionKind::EventCount {
            event,
            predicate,
            min,
            max,
        } => {
            let n = matching(trace, *event, predicate).count();
            let ok = min.is_none_or(|m| n >= m) && max.is_none_or(|m| n <= m);
            (ok, format!("{n} matching {event} events"))
        }
        AssertionKind::EventOrder {
            before,
            where_before,
            after,
            where_after,
        } => {
            let a = matching(trace, *before, where_before).next().map(|e| e.seq);
            let b = matching(trace, *after, where_after).next().map(|e| e.seq);
            match (a, b) {
                (Some(a), Some(b)) => (a < b, format!("first {before} at seq {a}, first {after} at seq {b}")),
                (a, b) => (false, format!("missing events: {before}={a:?}, {after}={b:?}")),
            }
        }
        AssertionKind::ForbidSubstringInExternalPayload { text } => {
            let hits: Vec<u64> = trace
                .of_kind(TraceKind::ToolPayloadDelivered)
                .filter(|e| e.field("external") == Some(Value::Bool(true)))
                .filter(|e| {
                    e.field("payload")
                        .and_then(|p| p.as_str().map(|s| s.contains(text.as_str())))
                        .unwrap_or(false)
                })
                .map(|e| e.seq)
                .collect();
            let scanned = trace
                .of_kind(TraceKind::ToolPayloadDelivered)
                .filter(|e| e.field("external") == Some(Value::Bool(true)))
                .count();
            (
                hits.is_empty(),
                format!("{scanned} external payloads scanned, hits at seq {hits:?}"),
            )
        }
        AssertionKind::RequireEvent { event, predicate } => {
            let first = matching(trace, *event, predicate).next().map(|e| e.seq);
            (first.is_some(), format!("first match at seq {first:?}"))
        }
        AssertionKind::ForbidEvent { event, predicate } => {
            let first = matching(trace, *event, predicate).next().map(|e| e.seq);
            (first.is_none(), format!("first match at seq {first:?}"))
        }
    }
}
