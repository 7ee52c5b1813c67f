use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{
    ActiveCoreAgent, Architecture, CoreAgent, Gateway, GatewayRegistration, OrchestrationError, Routing,
    TechniqueConfig, Topology, TopologyError, Wiring,
};
use crate::action::{
    execute_action, parse_inline_calls, render_inline_call, ActionContext, ActionError, ActionRequest,
    ActionResult, Args, Environment, Repositories, ToolRegistry, Trigger,
};
use crate::consensus::{run_election, NetConfig};
use crate::memory::{MemoryRecord, Query, RecordFilter, Scope};
use crate::model::{EnvelopeKind, EnvelopeLog, ModelPort, ModelRequest, ModelResponse};
use crate::planning::{
    decompose, generate_plans, incorporate_feedback, negative_cost, select_plan, Atom, Decomposition,
    DecompositionMode, Feedback, Operator, Plan, Revision, RuleDomain, Step, StepOp, Subtask, TaskSpec,
    Technique,
};
use crate::profile::{apply_profile, Profile};
use crate::security::{check_prompt, check_response, Decision};
use crate::trace::{Trace, TraceKind};

pub const DEFAULT_STEP_LIMIT: usize = 100;

const HUMAN: &str = "human";
const FRONT: &str = "llm";
const SETUP: &str = "setup";
/// Domain tag marking the active core-agent that serves tabular memory steps.
pub const TABULAR_DOMAIN: &str = "sql";

/// Rule-based planning domain loaded from a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainDef {
    pub operators: Vec<Operator>,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
}

fn default_depth() -> usize {
    6
}

#[derive(Default, Clone)]
pub struct Resources {
    pub models: BTreeMap<String, Arc<dyn ModelPort>>,
    pub tools: ToolRegistry,
    pub repos: Repositories,
    pub domains: BTreeMap<String, DomainDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectionSettings {
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
}

fn default_max_ticks() -> u64 {
    200
}

impl Default for ElectionSettings {
    fn default() -> Self {
        Self {
            drop_prob: 0.0,
            max_ticks: default_max_ticks(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrchestratorConfig {
    pub step_limit: usize,
    pub seed: u64,
    pub election: ElectionSettings,
    pub gateway_ttl: u64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            step_limit: DEFAULT_STEP_LIMIT,
            seed: 0,
            election: ElectionSettings::default(),
            gateway_ttl: super::gateway::DEFAULT_TTL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Completed,
    Blocked,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub status: TaskStatus,
    pub answer: Option<String>,
}

/// Wraps a model so every request carries the caller's profiles and every
/// exchange is kept for the trace.
struct Recorder {
    inner: Arc<dyn ModelPort>,
    profiles: Vec<Profile>,
    log: Mutex<Vec<(ModelRequest, ModelResponse)>>,
}

impl Recorder {
    fn new(inner: Arc<dyn ModelPort>, profiles: Vec<Profile>) -> Self {
        Self {
            inner,
            profiles,
            log: Mutex::new(Vec::new()),
        }
    }

    fn drain(&self) -> Vec<(ModelRequest, ModelResponse)> {
        std::mem::take(&mut *self.log.lock().expect("recorder lock"))
    }
}

impl ModelPort for Recorder {
    fn complete(&self, request: &ModelRequest) -> ModelResponse {
        let request = profiled(request.clone(), &self.profiles);
        let response = self.inner.complete(&request);
        self.log
            .lock()
            .expect("recorder lock")
            .push((request, response.clone()));
        response
    }
}

/// Profiles are validated when loaded; an invalid one leaves the request as is.
fn profiled(request: ModelRequest, profiles: &[Profile]) -> ModelRequest {
    profiles
        .iter()
        .fold(request, |r, p| apply_profile(p, r.clone()).unwrap_or(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Executor {
    Own,
    Sibling(usize),
    Passive(usize),
}

enum SubtaskEnd {
    Done(String),
    Aborted(String),
}

/// Runs tasks over one topology and owns the run's trace.
pub struct Orchestrator {
    pub topology: Topology,
    pub resources: Resources,
    pub config: OrchestratorConfig,
    pub trace: Trace,
    pub envelopes: EnvelopeLog,
    pub env: Environment,
    leader: Option<usize>,
    gateway: Option<Gateway>,
    setup_done: bool,
    calls: u64,
    steps: usize,
    world: BTreeSet<Atom>,
}

impl Orchestrator {
    /// Validates the topology and every model, tool, and domain it names.
    pub fn new(
        topology: Topology,
        resources: Resources,
        config: OrchestratorConfig,
    ) -> Result<Self, OrchestrationError> {
        topology.validate()?;
        let unknown = |kind, id: &str| TopologyError::UnknownReference {
            kind,
            id: id.to_string(),
        };
        if let Some(m) = &topology.front_model {
            if !resources.models.contains_key(m) {
                return Err(unknown("model", m).into());
            }
        }
        for p in &topology.front_profiles {
            p.validate()?;
        }
        for agent in &topology.agents {
            let tools = match agent {
                CoreAgent::Active(a) => {
                    if !resources.models.contains_key(&a.model) {
                        return Err(unknown("model", &a.model).into());
                    }
                    if let TechniqueConfig::RuleBased { domain } = &a.planning.technique {
                        let d = resources.domains.get(domain).ok_or_else(|| unknown("domain", domain))?;
                        for op in &d.operators {
                            op.validate()?;
                        }
                    }
                    if let Some(pm) = &a.profile {
                        for p in pm.library.values() {
                            p.validate()?;
                        }
                    }
                    &a.tools
                }
                CoreAgent::Passive(p) => &p.tools,
            };
            if let Some(policy) = agent.security() {
                policy.validate()?;
            }
            for t in tools {
                if t != super::CATCH_ALL && resources.tools.get(t).is_none() {
                    return Err(unknown("tool", t).into());
                }
            }
        }
        Ok(Self {
            topology,
            resources,
            config,
            trace: Trace::new(),
            envelopes: EnvelopeLog::new(),
            env: Environment::new(),
            leader: None,
            gateway: None,
            setup_done: false,
            calls: 0,
            steps: 0,
            world: BTreeSet::new(),
        })
    }

    pub fn leader(&self) -> Option<&str> {
        self.leader.map(|i| self.topology.agents[i].id())
    }

    pub fn gateway(&self) -> Option<&Gateway> {
        self.gateway.as_ref()
    }

    /// Every active core-agent's memory records, keyed by core-agent id.
    pub fn memory_dump(&self) -> BTreeMap<String, Vec<MemoryRecord>> {
        self.topology
            .agents
            .iter()
            .filter_map(|a| a.as_active())
            .filter_map(|a| {
                a.memory
                    .as_ref()
                    .map(|m| (a.core_agent_id.clone(), m.records().cloned().collect()))
            })
            .collect()
    }

    pub fn attach(&mut self, passive_id: &str) -> Result<(), OrchestrationError> {
        self.topology.attach(passive_id)?;
        self.trace.advance();
        let inventory = self.inventory(self.default_orchestrator());
        self.trace.emit(
            TraceKind::Attach,
            "switch",
            json!({"core_agent_id": passive_id, "inventory": inventory}),
        );
        Ok(())
    }

    pub fn detach(&mut self, passive_id: &str) -> Result<(), OrchestrationError> {
        self.topology.detach(passive_id)?;
        self.trace.advance();
        let inventory = self.inventory(self.default_orchestrator());
        self.trace.emit(
            TraceKind::Detach,
            "switch",
            json!({"core_agent_id": passive_id, "inventory": inventory}),
        );
        Ok(())
    }

    fn default_orchestrator(&self) -> Option<usize> {
        self.leader.or_else(|| self.topology.active_indices().first().copied())
    }

    /// Tool ids reachable from `orchestrator` (or from the front model when
    /// `None`) through the current switch state.
    pub fn inventory(&self, orchestrator: Option<usize>) -> BTreeSet<String> {
        self.resources
            .tools
            .ids()
            .filter(|t| self.resolve(orchestrator, t).is_some())
            .map(str::to_string)
            .collect()
    }

    fn resolve(&self, orchestrator: Option<usize>, tool: &str) -> Option<Executor> {
        self.resources.tools.get(tool)?;
        let agents = &self.topology.agents;
        if let Some(o) = orchestrator {
            if agents[o].as_active().is_some_and(|a| a.tools.contains(tool)) {
                return Some(Executor::Own);
            }
            for i in self.topology.active_indices() {
                if i != o && agents[i].as_active().is_some_and(|a| a.tools.contains(tool)) {
                    return Some(Executor::Sibling(i));
                }
            }
        }
        let attached: Vec<usize> = self
            .topology
            .passive_indices()
            .into_iter()
            .filter(|&i| self.topology.is_attached(agents[i].id()))
            .collect();
        if let Some(&i) = attached
            .iter()
            .find(|&&i| agents[i].as_passive().is_some_and(|p| p.tools.contains(tool)))
        {
            return Some(Executor::Passive(i));
        }
        let claimed = agents.iter().any(|a| match a {
            CoreAgent::Active(a) => a.tools.contains(tool),
            CoreAgent::Passive(p) => p.tools.contains(tool),
        });
        if claimed {
            return None;
        }
        attached
            .into_iter()
            .find(|&i| agents[i].as_passive().is_some_and(|p| p.is_catch_all()))
            .map(Executor::Passive)
    }

    fn step(&mut self) -> Result<(), OrchestrationError> {
        self.steps += 1;
        if self.steps > self.config.step_limit {
            return Err(OrchestrationError::StepLimitExceeded(self.config.step_limit));
        }
        Ok(())
    }

    fn model(&self, id: &str) -> Arc<dyn ModelPort> {
        Arc::clone(&self.resources.models[id])
    }

    fn record_calls(&mut self, actor: &str, model_id: &str, exchanges: Vec<(ModelRequest, ModelResponse)>) -> Result<(), OrchestrationError> {
        for (req, resp) in exchanges {
            self.step()?;
            self.trace.emit(
                TraceKind::ModelCall,
                actor,
                json!({
                    "model": model_id,
                    "prompt": req.prompt,
                    "system_prefix": req.system_prefix,
                    "adapter_tags": req.adapter_tags,
                    "candidates": resp.candidates,
                    "source": resp.source,
                }),
            );
        }
        Ok(())
    }

    fn call_model(
        &mut self,
        actor: &str,
        model_id: &str,
        request: ModelRequest,
        profiles: &[Profile],
    ) -> Result<ModelResponse, OrchestrationError> {
        let rec = Recorder::new(self.model(model_id), profiles.to_vec());
        let resp = rec.complete(&request);
        self.record_calls(actor, model_id, rec.drain())?;
        Ok(resp)
    }

    fn emit_profiles(&mut self, actor: &str, profiles: &[Profile], context: Value) {
        for p in profiles {
            self.trace.emit(
                TraceKind::ProfileSet,
                actor,
                json!({
                    "profile_id": p.profile_id,
                    "method": p.method,
                    "adapter_tag": p.adapter_tag,
                    "context": context,
                }),
            );
        }
    }

    fn envelope(
        &mut self,
        from: &str,
        to: &str,
        kind: EnvelopeKind,
        payload: Value,
        correlation: Option<u64>,
    ) -> u64 {
        self.envelopes
            .send(from, to, kind, payload, correlation)
            .expect("correlations point at earlier envelopes")
            .msg_id
    }

    fn human_msg(&mut self, from: &str, to: &str, text: &str, task_id: &str, correlation: Option<u64>) -> u64 {
        let kind = if from == HUMAN { EnvelopeKind::Task } else { EnvelopeKind::HumanMsg };
        let msg_id = self.envelope(from, to, kind, json!(text), correlation);
        self.trace.emit(
            TraceKind::HumanMsg,
            from,
            json!({"from": from, "to": to, "task_id": task_id, "msg_id": msg_id, "text": text}),
        );
        msg_id
    }

    fn setup(&mut self) {
        if self.setup_done {
            return;
        }
        self.setup_done = true;
        let front_profiles = self.topology.front_profiles.clone();
        self.emit_profiles(SETUP, &front_profiles, json!({"target": FRONT, "static": true}));
        let any_active_guard = self
            .topology
            .agents
            .iter()
            .any(|a| a.as_active().is_some_and(|a| a.security.is_some()));
        let tools = &self.resources.tools;
        let external_reach = |a: &CoreAgent| match a {
            CoreAgent::Active(a) => a.tools.iter().any(|t| tools.get(t).is_some_and(|t| t.spec.external)),
            CoreAgent::Passive(p) => {
                p.is_catch_all()
                    || p.tools.iter().any(|t| tools.get(t).is_some_and(|t| t.spec.external))
            }
        };
        let unguarded: Vec<String> = self
            .topology
            .agents
            .iter()
            .filter(|a| external_reach(a))
            .filter(|a| match a {
                CoreAgent::Active(a) => a.security.is_none(),
                CoreAgent::Passive(p) => p.security.is_none() && !any_active_guard,
            })
            .map(|a| a.id().to_string())
            .collect();
        if !unguarded.is_empty() {
            self.trace.emit(
                TraceKind::Warning,
                SETUP,
                json!({
                    "code": "no_egress_safeguard",
                    "message": "no egress safeguard configured",
                    "core_agents": unguarded,
                }),
            );
        }
        if self.topology.routing == Routing::Gateway && self.topology.active_indices().len() > 1 {
            let mut g = Gateway::new(self.config.gateway_ttl);
            for i in self.topology.active_indices() {
                let a = self.topology.agents[i].as_active().expect("active index");
                g.register(GatewayRegistration::new(
                    a.core_agent_id.clone(),
                    a.domains.iter().cloned(),
                    a.capacity,
                ))
                .expect("topology ids are unique");
            }
            self.gateway = Some(g);
        }
    }

    /// Runs one task to a terminal `task_done` event. Errors still leave a
    /// `task_done` carrying the failure.
    pub fn run_task(&mut self, task: &TaskSpec) -> Result<TaskOutcome, OrchestrationError> {
        self.setup();
        self.steps = 0;
        self.trace.advance();
        let result = if self.topology.active_indices().is_empty() {
            self.run_passive(task)
        } else {
            self.run_active(task)
        };
        if let Err(e) = &result {
            let status = match e {
                OrchestrationError::StepLimitExceeded(_) => "step_limit_exceeded",
                _ => "failed",
            };
            self.trace.emit(
                TraceKind::TaskDone,
                "orchestrator",
                json!({"task_id": task.task_id, "status": status, "error": e.to_string()}),
            );
        }
        result
    }

    fn done(&mut self, actor: &str, task: &TaskSpec, status: TaskStatus, answer: Option<String>, extra: Value) -> TaskOutcome {
        let mut payload = json!({"task_id": task.task_id, "status": status, "answer": answer});
        if let (Some(p), Value::Object(extra)) = (payload.as_object_mut(), extra) {
            p.extend(extra);
        }
        self.trace.emit(TraceKind::TaskDone, actor, payload);
        TaskOutcome {
            task_id: task.task_id.clone(),
            status,
            answer,
        }
    }

    fn run_passive(&mut self, task: &TaskSpec) -> Result<TaskOutcome, OrchestrationError> {
        let front = self.topology.front_model.clone().expect("validated");
        let profiles = self.topology.front_profiles.clone();
        self.trace.emit(
            TraceKind::TaskReceived,
            FRONT,
            json!({"task_id": task.task_id, "goal": task.goal_text}),
        );
        let root = self.human_msg(HUMAN, FRONT, &task.goal_text, &task.task_id, None);
        let mut prompt = task.goal_text.clone();
        loop {
            let resp = self.call_model(FRONT, &front, ModelRequest::new(prompt.clone()), &profiles)?;
            let candidate = resp.first().to_string();
            let calls = parse_inline_calls(&candidate);
            if calls.is_empty() {
                self.human_msg(FRONT, HUMAN, &candidate, &task.task_id, Some(root));
                return Ok(self.done(FRONT, task, TaskStatus::Completed, Some(candidate), json!({})));
            }
            let mut results = Vec::new();
            for call in calls {
                self.trace.emit(
                    TraceKind::InlineCallParsed,
                    FRONT,
                    json!({"tool": call.tool_id, "args": call.args, "span": [call.span.start, call.span.end]}),
                );
                let text = match self.dispatch(None, FRONT, &call.tool_id, call.args.clone(), Trigger::ApiCallRequest, task, Some(root))? {
                    Ok(r) => r.output,
                    Err(e) => e.feedback_text(),
                };
                results.push(format!("RESULT {}: {text}", call.tool_id));
            }
            prompt = format!("{prompt}\n{candidate}\n{}", results.join("\n"));
        }
    }

    /// Sends one tool request to whichever participant owns the tool, then
    /// runs any requests chained from its output.
    #[allow(clippy::too_many_arguments)]
    fn dispatch(
        &mut self,
        orchestrator: Option<usize>,
        from: &str,
        tool: &str,
        args: Args,
        trigger: Trigger,
        task: &TaskSpec,
        correlation: Option<u64>,
    ) -> Result<Result<ActionResult, ActionError>, OrchestrationError> {
        let first = match trigger {
            Trigger::ApiCallRequest => ActionRequest::api_call(&crate::action::InlineCall {
                tool_id: tool.to_string(),
                args,
                span: 0..0,
            }),
            Trigger::PlanFollowing => ActionRequest::plan_step(tool, args),
        };
        let mut queue = VecDeque::from([first]);
        let mut first_result = None;
        while let Some(request) = queue.pop_front() {
            let result = self.execute_one(orchestrator, from, &request, task, correlation)?;
            if let Ok(r) = &result {
                queue.extend(r.chained_requests.iter().cloned());
            }
            if first_result.is_none() {
                first_result = Some(result);
            }
        }
        Ok(first_result.expect("queue starts nonempty"))
    }

    fn execute_one(
        &mut self,
        orchestrator: Option<usize>,
        from: &str,
        request: &ActionRequest,
        task: &TaskSpec,
        correlation: Option<u64>,
    ) -> Result<Result<ActionResult, ActionError>, OrchestrationError> {
        self.step()?;
        let Some(executor) = self.resolve(orchestrator, &request.target) else {
            self.trace.emit(
                TraceKind::Warning,
                from,
                json!({"code": "unowned_tool", "tool": request.target}),
            );
            return Ok(Err(ActionError::UnknownTool(request.target.clone())));
        };
        let exec_idx = match executor {
            Executor::Own => orchestrator.expect("own implies orchestrator"),
            Executor::Sibling(i) | Executor::Passive(i) => i,
        };
        let actor = self.topology.agents[exec_idx].id().to_string();
        // Active orchestrators guard everything they dispatch; otherwise the
        // executor's own policy applies.
        let orchestrator_guard = orchestrator.and_then(|o| self.topology.agents[o].security().cloned());
        let guard = match executor {
            Executor::Own => orchestrator_guard,
            Executor::Sibling(i) => self.topology.agents[i].security().cloned().or(orchestrator_guard),
            Executor::Passive(i) => orchestrator_guard.or_else(|| self.topology.agents[i].security().cloned()),
        };
        self.calls += 1;
        let call_id = format!("c{}", self.calls);
        let request_msg = if executor == Executor::Own {
            None
        } else {
            Some(self.envelope(
                from,
                &actor,
                EnvelopeKind::ApiCallRequest,
                json!({"call_id": call_id, "tool": request.target, "args": request.args}),
                correlation,
            ))
        };
        let Orchestrator {
            topology,
            resources,
            trace,
            env,
            ..
        } = self;
        let memory = match &mut topology.agents[exec_idx] {
            CoreAgent::Active(a) => a.memory.as_mut(),
            CoreAgent::Passive(_) => None,
        };
        let mut ctx = ActionContext {
            tools: &resources.tools,
            repos: &resources.repos,
            guard: guard.as_ref(),
            memory,
            env,
            trace,
            actor: &actor,
            call_id: call_id.clone(),
            task_id: &task.task_id,
        };
        let result = execute_action(request, &mut ctx);
        if let Some(req) = request_msg {
            let text = match &result {
                Ok(r) => r.output.clone(),
                Err(e) => e.feedback_text(),
            };
            let kind = if matches!(executor, Executor::Sibling(_)) {
                EnvelopeKind::Feedback
            } else {
                EnvelopeKind::ToolResult
            };
            self.envelope(&actor, from, kind, json!({"call_id": call_id, "output": text}), Some(req));
        }
        Ok(result)
    }

    fn select_orchestrator(&mut self, task: &TaskSpec) -> Result<usize, OrchestrationError> {
        let actives = self.topology.active_indices();
        if actives.len() == 1 {
            return Ok(actives[0]);
        }
        if let Some(g) = self.gateway.as_mut() {
            g.set_now(self.trace.tick());
            let id = g.route(&task.domain_tags)?;
            let load = g.get(&id).map(|r| r.load);
            self.trace.emit(
                TraceKind::RouteSelected,
                "gateway",
                json!({"task_id": task.task_id, "core_agent_id": id, "domains": task.domain_tags, "load": load}),
            );
            let idx = actives
                .into_iter()
                .find(|&i| self.topology.agents[i].id() == id)
                .expect("gateway registers topology actives");
            return Ok(idx);
        }
        if let Some(l) = self.leader {
            return Ok(l);
        }
        let settings = self.config.election;
        let outcome = run_election(
            actives.len(),
            NetConfig::lossy(settings.drop_prob),
            self.config.seed,
            settings.max_ticks,
        )?;
        let idx = actives[(outcome.leader - 1) as usize];
        let candidates: Vec<&str> = actives.iter().map(|&i| self.topology.agents[i].id()).collect();
        let leader_id = self.topology.agents[idx].id().to_string();
        self.trace.advance_to(self.trace.tick() + outcome.ticks_elapsed);
        self.trace.emit(
            TraceKind::LeaderElected,
            leader_id.clone(),
            json!({
                "leader": leader_id,
                "term": outcome.term,
                "election_ticks": outcome.ticks_elapsed,
                "candidates": candidates,
            }),
        );
        self.leader = Some(idx);
        Ok(idx)
    }

    fn active(&self, idx: usize) -> &ActiveCoreAgent {
        self.topology.agents[idx].as_active().expect("orchestrator is active")
    }

    fn run_active(&mut self, task: &TaskSpec) -> Result<TaskOutcome, OrchestrationError> {
        let idx = self.select_orchestrator(task)?;
        let outcome = self.run_active_on(idx, task);
        if let Some(g) = self.gateway.as_mut() {
            let id = self.topology.agents[idx].id().to_string();
            g.release(&id)?;
            g.set_now(self.trace.tick());
            g.heartbeat(&id, g.get(&id).map_or(0, |r| r.load), super::Status::Available)?;
        }
        outcome
    }

    fn run_active_on(&mut self, idx: usize, task: &TaskSpec) -> Result<TaskOutcome, OrchestrationError> {
        let id = self.active(idx).core_agent_id.clone();
        let model_id = self.active(idx).model.clone();
        self.world = task.facts.clone();
        self.trace.emit(
            TraceKind::TaskReceived,
            id.clone(),
            json!({"task_id": task.task_id, "goal": task.goal_text, "domains": task.domain_tags}),
        );
        let root = self.human_msg(HUMAN, &id, &task.goal_text, &task.task_id, None);

        if let Some(policy) = self.active(idx).security.clone() {
            let rec = Recorder::new(self.model(&model_id), Vec::new());
            let verdict = check_prompt(&task.goal_text, &policy, Some(&rec))?;
            self.record_calls(&id, &model_id, rec.drain())?;
            self.trace.emit(
                TraceKind::GuardrailVerdict,
                id.clone(),
                json!({"task_id": task.task_id, "verdict": verdict}),
            );
            if verdict.is_block() {
                self.human_msg(&id, HUMAN, "request refused by prompt guardrail", &task.task_id, Some(root));
                return Ok(self.done(
                    &id,
                    task,
                    TaskStatus::Blocked,
                    None,
                    json!({"axis": verdict.axis, "rule": verdict.matched_rule}),
                ));
            }
        }

        let mode = self.active(idx).planning.decomposition;
        let mut outcomes: Vec<(String, String)> = Vec::new();
        let mut pending: VecDeque<Subtask> = VecDeque::new();
        if mode == DecompositionMode::NonIterative {
            match self.decompose(idx, task, &outcomes)? {
                Decomposition::All(subs) => pending.extend(subs),
                _ => unreachable!("non-iterative decomposition yields all subtasks"),
            }
        }
        loop {
            if mode == DecompositionMode::Iterative {
                match self.decompose(idx, task, &outcomes)? {
                    Decomposition::Next(s) => pending.push_back(s),
                    _ => break,
                }
            }
            let Some(sub) = pending.pop_front() else { break };
            match self.run_subtask(idx, task, &sub, &outcomes, root)? {
                SubtaskEnd::Done(result) => outcomes.push((sub.subtask_id.clone(), result)),
                SubtaskEnd::Aborted(reason) => {
                    self.human_msg(&id, HUMAN, &format!("aborted: {reason}"), &task.task_id, Some(root));
                    return Ok(self.done(&id, task, TaskStatus::Aborted, None, json!({"subtask_id": sub.subtask_id})));
                }
            }
        }
        self.final_answer(idx, task, outcomes, root)
    }

    fn decompose(
        &mut self,
        idx: usize,
        task: &TaskSpec,
        prior: &[(String, String)],
    ) -> Result<Decomposition, OrchestrationError> {
        let a = self.active(idx);
        let (id, model_id, mode) = (a.core_agent_id.clone(), a.model.clone(), a.planning.decomposition);
        let rec = Recorder::new(self.model(&model_id), Vec::new());
        let result = decompose(task, mode, prior, &rec);
        self.record_calls(&id, &model_id, rec.drain())?;
        let d = result?;
        let subs: Vec<&Subtask> = match &d {
            Decomposition::All(s) => s.iter().collect(),
            Decomposition::Next(s) => vec![s],
            Decomposition::Done => Vec::new(),
        };
        let events: Vec<Value> = subs
            .iter()
            .map(|s| {
                json!({
                    "task_id": task.task_id,
                    "subtask_id": s.subtask_id,
                    "ordinal": s.ordinal,
                    "goal": s.goal_text,
                    "depends_on": s.depends_on,
                    "mode": mode,
                })
            })
            .collect();
        for e in events {
            self.trace.emit(TraceKind::Decomposition, id.clone(), e);
        }
        Ok(d)
    }

    fn profiles_for(&self, idx: usize, text: &str) -> Vec<Profile> {
        self.active(idx).profile.as_ref().map(|m| m.select(text)).unwrap_or_default()
    }

    fn run_subtask(
        &mut self,
        idx: usize,
        task: &TaskSpec,
        sub: &Subtask,
        prior: &[(String, String)],
        root: u64,
    ) -> Result<SubtaskEnd, OrchestrationError> {
        let a = self.active(idx);
        let (id, model_id) = (a.core_agent_id.clone(), a.model.clone());
        let planning = a.planning.clone();
        let profiles = self.profiles_for(idx, &sub.goal_text);
        self.emit_profiles(&id, &profiles, json!({"subtask_id": sub.subtask_id, "target": model_id}));

        let mut attempt = sub.clone();
        let mut retries = 0;
        'attempts: loop {
            self.trace.advance();
            let plans = match self.make_plans(idx, task, &attempt, &profiles)? {
                Ok(p) => p,
                Err(e) => {
                    self.trace.emit(
                        TraceKind::Warning,
                        id.clone(),
                        json!({"code": "planning_failed", "subtask_id": sub.subtask_id, "error": e.to_string()}),
                    );
                    return Ok(SubtaskEnd::Done(format!("error: {e}")));
                }
            };
            for p in &plans {
                self.trace.emit(TraceKind::PlanCreated, id.clone(), plan_json(p));
            }
            let selected = select_plan(&plans, negative_cost)?.clone();
            self.trace.emit(
                TraceKind::PlanSelected,
                id.clone(),
                json!({"subtask_id": sub.subtask_id, "plan_id": selected.plan_id, "cost": selected.cost}),
            );
            let mut last = prior
                .iter()
                .rev()
                .find(|(sid, _)| sub.depends_on.contains(sid))
                .map_or_else(|| String::from("no steps needed"), |(_, r)| r.clone());
            for step in &selected.steps {
                let step = expand_args(step, task, sub, &last);
                let output = match self.run_step(idx, task, sub, &step, &profiles, root)? {
                    Ok(out) => {
                        if let Some(name) = &step.operator {
                            self.apply_operator(idx, name);
                        }
                        out
                    }
                    Err(e) => e.feedback_text(),
                };
                match incorporate_feedback(sub, &output, &Feedback::tool(output.clone()), &planning.feedback) {
                    Revision::Proceed => last = output,
                    Revision::Abort => return Ok(SubtaskEnd::Aborted(output)),
                    Revision::Retry if retries < planning.max_retries => {
                        retries += 1;
                        attempt.goal_text = format!("{}\nRETRY AFTER: {output}", sub.goal_text);
                        continue 'attempts;
                    }
                    Revision::Retry => return Ok(SubtaskEnd::Done(output)),
                }
            }
            return Ok(SubtaskEnd::Done(last));
        }
    }

    fn apply_operator(&mut self, idx: usize, name: &str) {
        if let TechniqueConfig::RuleBased { domain } = &self.active(idx).planning.technique {
            if let Some(op) = self.resources.domains[domain].operators.iter().find(|o| o.name == name) {
                if op.applicable(&self.world) {
                    self.world = op.apply(&self.world);
                }
            }
        }
    }

    fn make_plans(
        &mut self,
        idx: usize,
        task: &TaskSpec,
        sub: &Subtask,
        profiles: &[Profile],
    ) -> Result<Result<Vec<Plan>, crate::planning::PlanningError>, OrchestrationError> {
        let a = self.active(idx);
        let (id, model_id) = (a.core_agent_id.clone(), a.model.clone());
        let planning = a.planning.clone();
        let inventory = self.inventory(Some(idx));
        let rec = Recorder::new(self.model(&model_id), profiles.to_vec());
        let plans = match &planning.technique {
            TechniqueConfig::LmPowered => {
                generate_plans(sub, planning.strategy, Technique::LmPowered, &inventory, &rec)
            }
            TechniqueConfig::RuleBased { domain } => {
                let reply = rec.complete(&ModelRequest::new(format!("FORMALIZE: {}", sub.goal_text)));
                let goal: BTreeSet<Atom> = if reply.is_echo() {
                    task.goal_atoms.clone()
                } else {
                    reply
                        .first()
                        .split([',', ' ', '\n'])
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect()
                };
                let def = &self.resources.domains[domain];
                let operators: Vec<Operator> = def
                    .operators
                    .iter()
                    .filter(|o| o.tool.as_ref().is_none_or(|t| inventory.contains(t)))
                    .cloned()
                    .collect();
                let rd = RuleDomain {
                    facts: self.world.clone(),
                    goal,
                    operators,
                    max_depth: def.max_depth,
                };
                generate_plans(sub, planning.strategy, Technique::RuleBased(&rd), &inventory, &rec)
            }
        };
        self.record_calls(&id, &model_id, rec.drain())?;
        Ok(plans)
    }

    fn run_step(
        &mut self,
        idx: usize,
        task: &TaskSpec,
        sub: &Subtask,
        step: &Step,
        profiles: &[Profile],
        root: u64,
    ) -> Result<Result<String, ActionError>, OrchestrationError> {
        let a = self.active(idx);
        let (id, model_id) = (a.core_agent_id.clone(), a.model.clone());
        self.trace.advance();
        match step.op {
            StepOp::ToolCall => {
                let via_model = self.topology.wiring == Wiring::ViaModel
                    && matches!(self.resolve(Some(idx), &step.target), Some(Executor::Passive(_)));
                if !via_model {
                    return Ok(self
                        .dispatch(Some(idx), &id, &step.target, step.args.clone(), Trigger::PlanFollowing, task, Some(root))?
                        .map(|r| r.output));
                }
                let prompt = format!("EXECUTE: {}", render_inline_call(&step.target, &step.args));
                let call_profiles = self.profiles_for(idx, &prompt);
                self.emit_profiles(&id, &call_profiles, json!({"subtask_id": sub.subtask_id, "target": model_id, "tool": step.target}));
                let resp = self.call_model(&id, &model_id, ModelRequest::new(prompt), &call_profiles)?;
                let calls = parse_inline_calls(resp.first());
                if calls.is_empty() {
                    return Ok(Err(ActionError::ToolFailure("model issued no tool call".into())));
                }
                let mut outputs = Vec::new();
                for call in calls {
                    self.trace.emit(
                        TraceKind::InlineCallParsed,
                        FRONT,
                        json!({"tool": call.tool_id, "args": call.args, "span": [call.span.start, call.span.end]}),
                    );
                    match self.dispatch(Some(idx), FRONT, &call.tool_id, call.args, Trigger::ApiCallRequest, task, Some(root))? {
                        Ok(r) => outputs.push(r.output),
                        Err(e) => return Ok(Err(e)),
                    }
                }
                Ok(Ok(outputs.join("\n")))
            }
            StepOp::MemoryOp => self.memory_op(idx, task, step, root),
            StepOp::ModelCall => {
                self.step()?;
                let prompt = step
                    .args
                    .get("prompt")
                    .cloned()
                    .unwrap_or_else(|| sub.goal_text.clone());
                let resp = self.call_model(&id, &model_id, ModelRequest::new(prompt), profiles)?;
                Ok(Ok(resp.first().to_string()))
            }
            StepOp::Emit => {
                self.step()?;
                if step.target == HUMAN {
                    let text = step.args.get("text").cloned().unwrap_or_default();
                    self.human_msg(&id, HUMAN, &text, &task.task_id, Some(root));
                    Ok(Ok(text))
                } else {
                    Ok(Ok(format!("applied {}", step.operator.as_deref().unwrap_or(&step.target))))
                }
            }
        }
    }

    /// Tabular memory operations, served by the active core-agent tagged with
    /// the `sql` domain, else the orchestrator, else any sibling with memory.
    fn memory_op(
        &mut self,
        idx: usize,
        task: &TaskSpec,
        step: &Step,
        root: u64,
    ) -> Result<Result<String, ActionError>, OrchestrationError> {
        self.step()?;
        let from = self.active(idx).core_agent_id.clone();
        let with_memory: Vec<usize> = self
            .topology
            .active_indices()
            .into_iter()
            .filter(|&i| self.active(i).memory.is_some())
            .collect();
        let exec = with_memory
            .iter()
            .copied()
            .find(|&i| self.active(i).domains.contains(TABULAR_DOMAIN))
            .or_else(|| with_memory.contains(&idx).then_some(idx))
            .or_else(|| with_memory.first().copied());
        let Some(exec) = exec else {
            return Ok(Err(ActionError::UnknownTool(crate::planning::MEMORY_TARGET.into())));
        };
        let a = self.active(exec);
        let (actor, model_id) = (a.core_agent_id.clone(), a.model.clone());
        let mut fields = step.args.clone();
        let action = fields.shift_remove("action").unwrap_or_else(|| "select".into());
        let table = fields.shift_remove("table").unwrap_or_else(|| "facts".into());
        let request_msg = (exec != idx).then(|| {
            self.envelope(
                &from,
                &actor,
                EnvelopeKind::ApiCallRequest,
                json!({"target": "memory", "args": step.args}),
                Some(root),
            )
        });
        if self.active(exec).profile.is_some() {
            let rendered: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let prompt = format!("SQL: {action} {table} {}", rendered.join(" "));
            let profiles = self.profiles_for(exec, &prompt);
            self.emit_profiles(&actor, &profiles, json!({"task_id": task.task_id, "target": model_id}));
            self.call_model(&actor, &model_id, ModelRequest::new(prompt), &profiles)?;
        }
        let Orchestrator { topology, trace, .. } = self;
        let mem = topology.agents[exec]
            .as_active_mut()
            .and_then(|a| a.memory.as_mut())
            .expect("executor has memory");
        let result = match action.as_str() {
            "insert" => {
                let key = format!("{table}/{}", mem.clock() + 1);
                let row: Map<String, Value> = fields.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
                mem.write(MemoryRecord::row(key.clone(), table.clone(), row).importance(0.9));
                trace.emit(
                    TraceKind::MemoryWrite,
                    actor.clone(),
                    json!({"key": key, "table": table, "scope": "long_term", "format": "tabular_row"}),
                );
                Ok(format!("inserted {key}"))
            }
            "select" => {
                let filter = fields
                    .iter()
                    .fold(RecordFilter::table(table.clone()), |f, (k, v)| f.eq(k.clone(), v.clone()));
                let hits = mem.read(&Query::ByFilter(filter));
                trace.emit(
                    TraceKind::MemoryRead,
                    actor.clone(),
                    json!({"table": table, "hits": hits.len()}),
                );
                Ok(Value::Array(hits.into_iter().map(|r| r.content).collect()).to_string())
            }
            "delete" => {
                let filter = fields
                    .iter()
                    .fold(RecordFilter::table(table.clone()), |f, (k, v)| f.eq(k.clone(), v.clone()));
                let n = mem.delete_where(&filter);
                trace.emit(
                    TraceKind::MemoryWrite,
                    actor.clone(),
                    json!({"table": table, "deleted": n}),
                );
                Ok(format!("deleted {n}"))
            }
            other => Err(ActionError::ToolFailure(format!("unknown memory action {other}"))),
        };
        if let Some(req) = request_msg {
            let text = match &result {
                Ok(s) => s.clone(),
                Err(e) => e.feedback_text(),
            };
            self.envelope(&actor, &from, EnvelopeKind::Feedback, json!(text), Some(req));
        }
        Ok(result)
    }

    fn final_answer(
        &mut self,
        idx: usize,
        task: &TaskSpec,
        outcomes: Vec<(String, String)>,
        root: u64,
    ) -> Result<TaskOutcome, OrchestrationError> {
        let a = self.active(idx);
        let (id, model_id) = (a.core_agent_id.clone(), a.model.clone());
        let policy = a.security.clone();
        if let Some(mem) = self.topology.agents[idx].as_active_mut().and_then(|a| a.memory.as_mut()) {
            let hits = mem.read(&Query::ByFilter(RecordFilter::scope(Scope::ShortTerm(task.task_id.clone()))));
            self.trace.emit(
                TraceKind::MemoryRead,
                id.clone(),
                json!({"task_id": task.task_id, "scope": "short_term", "hits": hits.len()}),
            );
        }
        let mut prompt = format!("ANSWER: {}\nRESULTS:", task.goal_text);
        for (sid, r) in &outcomes {
            prompt.push_str(&format!("\n{sid}: {r}"));
        }
        let profiles = self.profiles_for(idx, &prompt);
        let n = if policy.is_some() { 3 } else { 1 };
        let resp = self.call_model(&id, &model_id, ModelRequest::new(prompt).with_candidates(n), &profiles)?;
        let mut answer = None;
        for (i, c) in resp.candidates.iter().enumerate() {
            let Some(policy) = &policy else {
                answer = Some(c.clone());
                break;
            };
            let rec = Recorder::new(self.model(&model_id), Vec::new());
            let verdict = check_response(c, policy, Some(&rec))?;
            self.record_calls(&id, &model_id, rec.drain())?;
            self.trace.emit(
                TraceKind::GuardrailVerdict,
                id.clone(),
                json!({"task_id": task.task_id, "candidate": i, "verdict": verdict}),
            );
            match verdict.decision {
                Decision::Block => continue,
                Decision::Redact => {
                    answer = verdict.redacted_text;
                    break;
                }
                Decision::Allow => {
                    answer = Some(c.clone());
                    break;
                }
            }
        }
        let Some(answer) = answer else {
            self.human_msg(&id, HUMAN, "no safe answer available", &task.task_id, Some(root));
            return Ok(self.done(&id, task, TaskStatus::Blocked, None, json!({"axis": "response"})));
        };
        self.human_msg(&id, HUMAN, &answer, &task.task_id, Some(root));
        if let Some(mem) = self.topology.agents[idx].as_active_mut().and_then(|a| a.memory.as_mut()) {
            let key = format!("answer/{}", task.task_id);
            mem.write(MemoryRecord::embedded(key.clone(), answer.clone()).importance(0.8));
            let removed = mem.end_task_scope(&task.task_id);
            self.trace.emit(
                TraceKind::MemoryWrite,
                id.clone(),
                json!({"key": key, "scope": "long_term", "format": "embedding", "short_term_removed": removed}),
            );
        }
        Ok(self.done(&id, task, TaskStatus::Completed, Some(answer), json!({})))
    }
}

/// Fills `{task}`, `{subtask}`, and `{last}` in step arguments.
fn expand_args(step: &Step, task: &TaskSpec, sub: &Subtask, last: &str) -> Step {
    let mut step = step.clone();
    for v in step.args.values_mut() {
        if v.contains('{') {
            *v = v
                .replace("{task}", &task.goal_text)
                .replace("{subtask}", &sub.goal_text)
                .replace("{last}", last);
        }
    }
    step
}

fn plan_json(p: &Plan) -> Value {
    json!({
        "plan_id": p.plan_id,
        "subtask_id": p.subtask_id,
        "cost": p.cost,
        "targets": p.steps.iter().map(|s| s.target.clone()).collect::<Vec<_>>(),
        "steps": p.steps,
    })
}

impl Architecture {
    pub fn has_active(self) -> bool {
        !matches!(self, Architecture::SinglePassive | Architecture::UniformPassive)
    }
}
