use std::collections::BTreeSet;
use std::path::PathBuf;

use serde_json::{json, Value};
use umf::model::ModuleName;
use umf::orchestration::TopologyError;
use umf::planning::TaskSpec;
use umf::scenario::{build, load_scenario, parse_scenario, run_scenario, ScenarioError, ScenarioSpec};
use umf::trace::{TraceEvent, TraceKind};

fn fixture(name: &str) -> ScenarioSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("fixtures/scenarios/{name}.json"));
    load_scenario(path).unwrap()
}

fn spec(v: Value) -> ScenarioSpec {
    parse_scenario(&v.to_string()).unwrap()
}

fn calc_tool() -> Value {
    json!({"tool_id": "calc", "kind": "calculator", "arg_names": ["expr"]})
}

fn single_active(rules: Value, planning: Value) -> Value {
    json!({
        "scenario_id": "probe",
        "models": {"llm": rules},
        "tools": [calc_tool()],
        "topology": {
            "architecture": "single_active",
            "core_agents": [{"core_agent_id": "agent", "kind": "active", "model": "llm",
                             "planning": planning, "tools": ["calc"]}]
        },
        "schedule": [{"task": {"task_id": "t1", "goal_text": "Work it out"}}]
    })
}

fn payloads(events: &[TraceEvent], kind: TraceKind) -> Vec<&Value> {
    events.iter().filter(|e| e.kind == kind).map(|e| &e.payload).collect()
}

#[test]
fn iterative_decomposition_sees_prior_results() {
    let rules = json!([
        {"id": "stop", "match": "DONE t1.s1:", "responses": ["DONE"]},
        {"id": "second", "match": "DONE t1.s0:", "responses": ["Double the result"]},
        {"id": "first", "match": "DECOMPOSE-NEXT:", "responses": ["Add two and two"]},
        {"id": "plan-add", "match": "PLAN: Add", "responses": ["[CALL calc(expr=\"2+2\")]"]},
        {"id": "plan-double", "match": "PLAN: Double", "responses": ["[CALL calc(expr=\"{last}*2\")]"]},
        {"id": "answer", "match": "ANSWER:", "responses": ["done"]}
    ]);
    let run = run_scenario(&spec(single_active(rules, json!({"decomposition": "iterative"}))), None).unwrap();
    assert!(run.error.is_none(), "{:?}", run.error);
    let events = run.trace.events();
    let decs = payloads(events, TraceKind::Decomposition);
    assert_eq!(decs.len(), 2);
    assert!(decs.iter().all(|d| d["mode"] == "iterative"));
    assert_eq!(decs[1]["depends_on"], json!(["t1.s0"]));
    let prompts: Vec<&str> = payloads(events, TraceKind::ModelCall)
        .into_iter()
        .filter_map(|p| p["prompt"].as_str())
        .filter(|p| p.starts_with("DECOMPOSE-NEXT"))
        .collect();
    assert_eq!(prompts.len(), 3);
    assert!(prompts[1].contains("DONE t1.s0: 4"));
    assert!(prompts[2].contains("DONE t1.s1: 8"));
}

#[test]
fn failing_tool_step_is_retried_once_with_feedback() {
    let rules = json!([
        {"id": "decompose", "match": "DECOMPOSE:", "responses": ["Divide the budget"]},
        {"id": "retry", "match": "RETRY AFTER: error", "responses": ["[CALL calc(expr=\"10/2\")]"]},
        {"id": "plan", "match": "PLAN: Divide", "responses": ["[CALL calc(expr=\"10/0\")]"]},
        {"id": "answer", "match": "ANSWER:", "responses": ["five"]}
    ]);
    let run = run_scenario(&spec(single_active(rules, json!({}))), None).unwrap();
    assert!(run.error.is_none());
    let selected = payloads(run.trace.events(), TraceKind::PlanSelected);
    assert_eq!(selected.len(), 2);
    let answer_prompt = payloads(run.trace.events(), TraceKind::ModelCall)
        .into_iter()
        .filter_map(|p| p["prompt"].as_str())
        .find(|p| p.starts_with("ANSWER"))
        .unwrap()
        .to_string();
    assert!(answer_prompt.contains("t1.s0: 5"), "{answer_prompt}");
}

#[test]
fn persistent_failure_stops_after_max_retries() {
    let rules = json!([
        {"id": "decompose", "match": "DECOMPOSE:", "responses": ["Divide the budget"]},
        {"id": "plan", "match": "PLAN: Divide", "responses": ["[CALL calc(expr=\"10/0\")]"]},
        {"id": "answer", "match": "ANSWER:", "responses": ["could not divide"]}
    ]);
    let run = run_scenario(&spec(single_active(rules, json!({"max_retries": 2}))), None).unwrap();
    assert_eq!(payloads(run.trace.events(), TraceKind::PlanSelected).len(), 3);
    assert_eq!(payloads(run.trace.events(), TraceKind::TaskDone)[0]["status"], "completed");
}

#[test]
fn runaway_passive_loop_hits_step_limit_with_partial_trace() {
    let s = spec(json!({
        "scenario_id": "runaway",
        "step_limit": 6,
        "models": {"llm": [{"id": "again", "match": "*", "responses": ["[CALL calc(expr=\"1+1\")]"]}]},
        "tools": [calc_tool()],
        "topology": {
            "architecture": "single_passive",
            "front_model": "llm",
            "core_agents": [{"core_agent_id": "worker", "kind": "passive", "tools": ["calc"]}]
        },
        "schedule": [
            {"task": {"task_id": "t1", "goal_text": "loop"}},
            {"task": {"task_id": "t2", "goal_text": "never reached"}}
        ]
    }));
    let run = run_scenario(&s, None).unwrap();
    assert!(run.error.as_deref().unwrap().contains("step limit of 6"));
    assert!(!run.passed());
    let last = run.trace.events().last().unwrap();
    assert_eq!(last.kind, TraceKind::TaskDone);
    assert_eq!(last.payload["status"], "step_limit_exceeded");
    assert_eq!(last.payload["task_id"], "t1");
    let model_calls = run.trace.count(TraceKind::ModelCall);
    let tool_calls = run.trace.count(TraceKind::ToolCalled);
    assert_eq!(model_calls + tool_calls, 6);
    assert!(payloads(run.trace.events(), TraceKind::TaskReceived).iter().all(|p| p["task_id"] == "t1"));
}

fn passive_view(events: &[TraceEvent], passives: &BTreeSet<&str>) -> Vec<(TraceKind, String, Value)> {
    events
        .iter()
        .filter(|e| passives.contains(e.actor.as_str()))
        .map(|e| {
            let mut p = e.payload.clone();
            if let Some(o) = p.as_object_mut() {
                o.remove("call_id");
            }
            (e.kind, e.actor.clone(), p)
        })
        .collect()
}

#[test]
fn passive_workers_are_stateless_across_repeated_requests() {
    let s = fixture("la1");
    let passives: BTreeSet<&str> = ["toolformer", "confucius"].into();
    let task = TaskSpec::new("again", "Compute 17 times 23.");

    let mut orch = build(&s, s.seed).unwrap();
    orch.run_task(&task).unwrap();
    let first_len = orch.trace.len();
    orch.run_task(&task).unwrap();
    let first = passive_view(&orch.trace.events()[..first_len], &passives);
    let second = passive_view(&orch.trace.events()[first_len..], &passives);
    assert!(!first.is_empty());
    assert_eq!(first, second);

    let mut fresh = build(&s, s.seed).unwrap();
    fresh.run_task(&task).unwrap();
    assert_eq!(passive_view(fresh.trace.events(), &passives), first);
}

#[test]
fn detached_worker_tools_vanish_from_plans() {
    let run = run_scenario(&fixture("detach"), None).unwrap();
    assert!(run.passed());
    let targets = |task: &str| -> BTreeSet<String> {
        payloads(run.trace.events(), TraceKind::PlanCreated)
            .into_iter()
            .filter(|p| p["subtask_id"].as_str().unwrap().starts_with(task))
            .flat_map(|p| p["targets"].as_array().unwrap().iter().map(|t| t.as_str().unwrap().to_string()))
            .collect()
    };
    let both: BTreeSet<String> = ["calc".into(), "remote_calc".into()].into();
    assert_eq!(targets("before."), both);
    assert_eq!(targets("during."), ["remote_calc".to_string()].into());
    assert_eq!(targets("after."), both);

    let inventory = |kind| payloads(run.trace.events(), kind)[0]["inventory"].clone();
    assert_eq!(inventory(TraceKind::Detach), json!(["remote_calc"]));
    assert_eq!(inventory(TraceKind::Attach), json!(["calc", "remote_calc"]));
}

#[test]
fn passive_declaration_with_memory_is_rejected() {
    let mut v = serde_json::to_value(fixture("la1")).unwrap();
    v["topology"]["core_agents"][0]["memory"] = json!({"capacity": 4});
    let Err(ScenarioError::ScenarioInvalid(msg)) = build(&spec(v), 0) else {
        panic!("passive memory accepted");
    };
    let want = TopologyError::PassiveModule {
        agent: "toolformer".into(),
        module: ModuleName::Memory,
    };
    assert!(msg.contains(&want.to_string()), "{msg}");
}

#[test]
fn dangling_tool_reference_is_rejected() {
    let mut v = serde_json::to_value(fixture("la1")).unwrap();
    v["topology"]["core_agents"][0]["tools"] = json!(["calc", "teleporter"]);
    assert!(matches!(build(&spec(v), 0), Err(ScenarioError::ScenarioInvalid(m)) if m.contains("teleporter")));
}

#[test]
fn only_the_leader_plans_in_uniform_active() {
    let run = run_scenario(&fixture("la2a"), None).unwrap();
    let leader = payloads(run.trace.events(), TraceKind::LeaderElected)[0]["leader"]
        .as_str()
        .unwrap()
        .to_string();
    for e in run.trace.events() {
        if matches!(e.kind, TraceKind::Decomposition | TraceKind::PlanCreated | TraceKind::PlanSelected) {
            assert_eq!(e.actor, leader);
        }
    }
}

#[test]
fn shared_model_requests_carry_the_callers_profile() {
    let run = run_scenario(&fixture("la2a"), None).unwrap();
    let calls: Vec<&TraceEvent> = run.trace.events().iter().filter(|e| e.kind == TraceKind::ModelCall).collect();
    let by = |actor: &'static str| calls.iter().filter(move |e| e.actor == actor).map(|e| &e.payload);
    assert!(by("toolllm").count() > 0 && by("chatdb").count() > 0);
    for p in by("toolllm").filter(|p| !p["prompt"].as_str().unwrap().starts_with("DECOMPOSE")) {
        assert_eq!(p["adapter_tags"], json!(["toolllm-api"]));
        assert!(p["system_prefix"].as_str().unwrap_or("").is_empty());
    }
    for p in by("chatdb") {
        assert!(p["system_prefix"].as_str().unwrap().starts_with("You are ChatDB"));
        assert_eq!(p["adapter_tags"], json!([]));
    }
}

#[test]
fn dependent_subtask_receives_the_previous_result() {
    let run = run_scenario(&fixture("la2a"), None).unwrap();
    let memory = serde_json::to_value(&run.memory).unwrap();
    let rows: Vec<&Value> = memory["chatdb"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["table"] == "weather")
        .collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["content"], json!({"city": "Lyon", "report": "Lyon: light rain, 14 C"}));
}
