//! An active core-agent with planning, memory, a profile and a guardrail
//! decomposes a task, plans with the model, runs the tools and remembers the
//! answer.

use std::sync::Arc;

use umf::action::{ToolBehavior, ToolDef};
use umf::memory::{MemoryLocation, MemoryStore};
use umf::model::{ScriptRule, ScriptedModel, ToolSpec};
use umf::orchestration::{
    ActiveCoreAgent, Architecture, CoreAgent, Orchestrator, OrchestratorConfig, PlanningModule, ProfileModule,
    Resources, Topology,
};
use umf::planning::TaskSpec;
use umf::profile::Profile;
use umf::security::Policy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ScriptedModel::new(vec![
        ScriptRule::new("decompose", "DECOMPOSE:", ["Compute the subtotal\nTranslate the greeting"]),
        ScriptRule::new("plan-sum", "PLAN: Compute", ["[CALL calc(expr=\"12*3+4\")]"]),
        ScriptRule::new("plan-tr", "PLAN: Translate", ["[CALL translator(text=\"thank you\")]"]),
        ScriptRule::new("answer", "ANSWER:", ["Subtotal 40, and merci."]),
    ]);
    let mut resources = Resources::default();
    resources.models.insert("llm".into(), Arc::new(model));
    let mut calc = ToolSpec::internal("calc");
    calc.arg_names = vec!["expr".into()];
    resources.tools.register(ToolDef::new(calc, ToolBehavior::Calculator));
    let mut tr = ToolSpec::external("translator");
    tr.arg_names = vec!["text".into()];
    let phrases = [("thank you".to_string(), "merci".to_string())].into_iter().collect();
    resources.tools.register(ToolDef::new(tr, ToolBehavior::Translator { phrases }));

    let mut agent = ActiveCoreAgent::new("assistant", "llm", PlanningModule::default());
    agent.tools = ["calc", "translator"].map(String::from).into();
    agent.memory = Some(MemoryStore::new(MemoryLocation::Embedded, 16));
    let persona = Profile::handcrafted("clerk", "You are a careful bookkeeping clerk.");
    agent.profile = Some(ProfileModule::new(vec![persona], vec![], vec!["clerk".into()]));
    agent.security = Some(Policy {
        policy_id: "guard".into(),
        secrets: vec!["ACCT-991".into()],
        ..Policy::default()
    });

    let topology = Topology::new(Architecture::SingleActive, vec![CoreAgent::Active(Box::new(agent))]);
    let mut orch = Orchestrator::new(topology, resources, OrchestratorConfig::default())?;
    let outcome = orch.run_task(&TaskSpec::new("t1", "Total the order for ACCT-991 and thank the client."))?;
    println!("{:?}: {}", outcome.status, outcome.answer.unwrap_or_default());
    for e in orch.trace.events() {
        println!("{:>3} {:<24} {:<10} {}", e.seq, e.kind, e.actor, e.payload);
    }
    println!("memory: {}", serde_json::to_string_pretty(&orch.memory_dump())?);
    Ok(())
}
