//! Parsing inline tool calls from model text and executing them through the
//! action module, including a repository lookup and egress redaction.

use umf::action::{
    execute_action, parse_inline_calls, ActionContext, ActionRequest, Environment, Repositories, Repository,
    ToolBehavior, ToolDef, ToolRegistry,
};
use umf::model::ToolSpec;
use umf::security::Policy;
use umf::trace::Trace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut tools = ToolRegistry::new();
    let mut calc = ToolSpec::internal("calc");
    calc.arg_names = vec!["expr".into()];
    tools.register(ToolDef::new(calc, ToolBehavior::Calculator));
    let mut wiki = ToolSpec::external("wiki");
    wiki.arg_names = vec!["query".into()];
    tools.register(ToolDef::new(wiki, ToolBehavior::Wiki { repo: "encyclopedia".into() }));

    let mut repos = Repositories::new();
    repos.load(Repository {
        repo_id: "encyclopedia".into(),
        passages: vec![
            "Ada Lovelace published the first algorithm for a machine.".into(),
            "Alan Turing formalised computation.".into(),
        ],
    });
    let policy = Policy {
        secrets: vec!["tok-778".into()],
        ..Policy::default()
    };

    let text = r#"First [CALL calc(expr="(17+3)*2")] then [CALL wiki(query="Ada Lovelace tok-778")]."#;
    let mut env = Environment::new();
    let mut trace = Trace::new();
    for (i, call) in parse_inline_calls(text).iter().enumerate() {
        let mut ctx = ActionContext {
            tools: &tools,
            repos: &repos,
            guard: Some(&policy),
            memory: None,
            env: &mut env,
            trace: &mut trace,
            actor: "worker",
            call_id: format!("c{i}"),
            task_id: "t1",
        };
        let result = execute_action(&ActionRequest::api_call(call), &mut ctx)?;
        println!("{} -> {}", call.tool_id, result.output);
    }
    print!("{}", trace.to_jsonl());
    Ok(())
}
