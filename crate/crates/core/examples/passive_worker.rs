//! A passive core-agent driven by a front model: the model emits an inline
//! call, the worker executes it, and the result flows back into the prompt.

use std::sync::Arc;

use umf::action::{ToolBehavior, ToolDef};
use umf::model::{ScriptRule, ScriptedModel, ToolSpec};
use umf::orchestration::{
    Architecture, CoreAgent, Orchestrator, OrchestratorConfig, PassiveCoreAgent, Resources, Topology,
};
use umf::planning::TaskSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ScriptedModel::new(vec![
        ScriptRule::new("done", "RESULT calc:", ["The product is 391."]),
        ScriptRule::new("call", "17 times 23", ["[CALL calc(expr=\"17*23\")]"]),
    ]);
    let mut resources = Resources::default();
    resources.models.insert("llm".into(), Arc::new(model));
    let mut calc = ToolSpec::internal("calc");
    calc.arg_names = vec!["expr".into()];
    resources.tools.register(ToolDef::new(calc, ToolBehavior::Calculator));

    let worker = CoreAgent::Passive(PassiveCoreAgent::new("toolformer", ["calc"]));
    let topology = Topology::new(Architecture::SinglePassive, vec![worker]).with_front_model("llm", vec![]);
    let mut orch = Orchestrator::new(topology, resources, OrchestratorConfig::default())?;

    let outcome = orch.run_task(&TaskSpec::new("t1", "What is 17 times 23?"))?;
    println!("{:?}: {}", outcome.status, outcome.answer.unwrap_or_default());
    print!("{}", orch.trace.to_jsonl());
    for e in orch.envelopes.envelopes() {
        println!("envelope {} {:?} {} -> {} chain {:?}", e.msg_id, e.kind, e.sender, e.recipient, orch.envelopes.chain(e.msg_id));
    }
    Ok(())
}
