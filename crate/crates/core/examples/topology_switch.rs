//! Attaching and detaching passive workers changes the tools an active
//! core-agent can plan with.

use umf::orchestration::{ActiveCoreAgent, Architecture, CoreAgent, PassiveCoreAgent, PlanningModule, Topology};
use umf::orchestration::{Orchestrator, OrchestratorConfig, Resources};
use umf::action::{ToolBehavior, ToolDef};
use umf::model::{ScriptedModel, ToolSpec};
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut resources = Resources::default();
    resources.models.insert("llm".into(), Arc::new(ScriptedModel::new(vec![])));
    for id in ["calc", "calendar", "weather_api"] {
        let output = format!("{id} ok");
        resources.tools.register(ToolDef::new(ToolSpec::internal(id), ToolBehavior::Static { output }));
    }
    let agents = vec![
        CoreAgent::Active(Box::new(ActiveCoreAgent::new("planner", "llm", PlanningModule::default()))),
        CoreAgent::Passive(PassiveCoreAgent::new("toolformer", ["calc", "calendar"])),
        CoreAgent::Passive(PassiveCoreAgent::new("confucius", ["*"])),
    ];
    let topology = Topology::new(Architecture::HybridOneActive, agents);
    let mut orch = Orchestrator::new(topology, resources, OrchestratorConfig::default())?;

    println!("attached: {:?}", orch.inventory(Some(0)));
    orch.detach("toolformer")?;
    println!("toolformer detached: {:?}", orch.inventory(Some(0)));
    orch.attach("toolformer")?;
    println!("toolformer attached: {:?}", orch.inventory(Some(0)));
    print!("{}", orch.trace.to_jsonl());
    Ok(())
}
