//! Handcrafted, pluggable, model-generated and dataset-aligned profiles
//! applied to a model request.

use serde_json::json;
use umf::model::{ModelRequest, ScriptRule, ScriptedModel};
use umf::profile::{align_profile, apply_profile, generate_profile, Profile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sql = Profile::handcrafted("chatdb-sql", "You translate questions into SQL.");
    let adapter = Profile::pluggable("toolllm-lora", "toolllm-api");

    let mut req = ModelRequest::new("List all cities with sunny weather");
    for p in [&sql, &adapter] {
        req = apply_profile(p, req)?;
    }
    println!("system prefix: {:?}", req.system_prefix);
    println!("adapter tags: {:?}", req.adapter_tags);

    let model = ScriptedModel::new(vec![ScriptRule::new(
        "gen",
        "GENERATE PROFILE",
        ["You are a patient chemistry tutor who explains every step."],
    )]);
    let attrs = json!({"role": "tutor", "domain": "chemistry"}).as_object().cloned().unwrap();
    let generated = generate_profile(&[sql], &attrs, &model)?;
    println!("{}: {}", generated.profile_id, generated.system_text.unwrap_or_default());

    let record = json!({"name": "Marie", "field": "radiochemistry"}).as_object().cloned().unwrap();
    let aligned = align_profile(&record, "You are {name}, an expert in {field}.")?;
    println!("{}: {}", aligned.profile_id, aligned.system_text.unwrap_or_default());
    Ok(())
}
