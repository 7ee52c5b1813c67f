//! Profiles steer the model either through a system prefix (handcrafted,
//! model-generated, dataset-aligned) or through a pluggable adapter tag.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::memory::fnv1a;
use crate::model::{ModelPort, ModelRequest};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("invalid profile {0}: {1}")]
    InvalidProfile(String, &'static str),
    #[error("model returned an empty profile")]
    EmptyGeneration,
    #[error("template placeholder {{{0}}} has no matching field")]
    MissingField(String),
    #[error("profile generation needs at least one attribute")]
    NoAttributes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMethod {
    HandcraftedIcl,
    LlmGenerated,
    DatasetAligned,
    Pluggable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub profile_id: String,
    pub method: ProfileMethod,
    #[serde(default)]
    pub system_text: Option<String>,
    #[serde(default)]
    pub adapter_tag: Option<String>,
    #[serde(default)]
    pub source_record: Option<Value>,
}

impl Profile {
    pub fn handcrafted(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            profile_id: id.into(),
            method: ProfileMethod::HandcraftedIcl,
            system_text: Some(text.into()),
            adapter_tag: None,
            source_record: None,
        }
    }

    pub fn pluggable(id: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            profile_id: id.into(),
            method: ProfileMethod::Pluggable,
            system_text: None,
            adapter_tag: Some(tag.into()),
            source_record: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let fail = |why| Err(ProfileError::InvalidProfile(self.profile_id.clone(), why));
        match self.method {
            ProfileMethod::Pluggable => {
                if self.adapter_tag.as_deref().is_none_or(str::is_empty) {
                    return fail("pluggable profile needs an adapter tag");
                }
                if self.system_text.is_some() {
                    return fail("pluggable profile cannot carry system text");
                }
            }
            _ => {
                if self.system_text.is_none() {
                    return fail("text profile needs system text");
                }
                if self.adapter_tag.is_some() {
                    return fail("text profile cannot carry an adapter tag");
                }
            }
        }
        Ok(())
    }
}

/// Text profiles replace the system prefix (last applied wins); pluggable
/// profiles add their adapter tag once. The prompt itself is never touched.
pub fn apply_profile(profile: &Profile, mut request: ModelRequest) -> Result<ModelRequest, ProfileError> {
    profile.validate()?;
    match profile.method {
        ProfileMethod::Pluggable => {
            let tag = profile.adapter_tag.as_ref().expect("validated");
            if !request.adapter_tags.contains(tag) {
                request.adapter_tags.push(tag.clone());
            }
        }
        _ => request.system_prefix = profile.system_text.clone(),
    }
    Ok(request)
}

fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn derived_id(prefix: &str, seed: &str) -> String {
    format!("{prefix}-{:08x}", fnv1a(seed.as_bytes()) as u32)
}

pub fn generation_prompt(seeds: &[Profile], attributes: &Map<String, Value>) -> String {
    let mut prompt = String::from("GENERATE PROFILE\nATTRIBUTES:");
    for (k, v) in attributes {
        prompt.push_str(&format!("\n{k}: {}", render_value(v)));
    }
    let examples: Vec<&str> = seeds.iter().filter_map(|p| p.system_text.as_deref()).collect();
    if !examples.is_empty() {
        prompt.push_str("\nEXAMPLES:");
        for e in examples {
            prompt.push_str(&format!("\n- {e}"));
        }
    }
    prompt
}

/// Asks the model for a profile built from `attributes`, with any seed
/// profiles' text as few-shot examples.
pub fn generate_profile(
    seed_profiles: &[Profile],
    attributes: &Map<String, Value>,
    model: &dyn ModelPort,
) -> Result<Profile, ProfileError> {
    if attributes.is_empty() {
        return Err(ProfileError::NoAttributes);
    }
    let prompt = generation_prompt(seed_profiles, attributes);
    let reply = model.complete(&ModelRequest::new(prompt.clone()));
    let text = reply.first().trim();
    if text.is_empty() {
        return Err(ProfileError::EmptyGeneration);
    }
    Ok(Profile {
        profile_id: derived_id("generated", &prompt),
        method: ProfileMethod::LlmGenerated,
        system_text: Some(text.to_string()),
        adapter_tag: None,
        source_record: Some(Value::Object(attributes.clone())),
    })
}

/// Fills `{field}` placeholders in `template` from a dataset record.
pub fn align_profile(record: &Map<String, Value>, template: &str) -> Result<Profile, ProfileError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if close > 0
                    && after[..close]
                        .chars()
                        .all(|c| c.is_alphanumeric() || c == '_') =>
            {
                let name = &after[..close];
                let value = record
                    .get(name)
                    .ok_or_else(|| ProfileError::MissingField(name.to_string()))?;
                out.push_str(&render_value(value));
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(Profile {
        profile_id: derived_id("aligned", &out),
        method: ProfileMethod::DatasetAligned,
        system_text: Some(out),
        adapter_tag: None,
        source_record: Some(Value::Object(record.clone())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScriptRule, ScriptedModel};
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn handcrafted_sets_prefix_only() {
        let p = Profile::handcrafted("sql", "You are a SQL expert.");
        let req = apply_profile(&p, ModelRequest::new("insert")).unwrap();
        assert_eq!(req.system_prefix.as_deref(), Some("You are a SQL expert."));
        assert_eq!(req.prompt, "insert");
    }

    #[test]
    fn pluggable_dedups() {
        let p = Profile::pluggable("tf", "toolformer-ccnet");
        let req = apply_profile(&p, ModelRequest::new("x")).unwrap();
        let req = apply_profile(&p, req).unwrap();
        assert_eq!(req.adapter_tags, vec!["toolformer-ccnet"]);
        assert_eq!(req.prompt, "x");
    }

    #[test]
    fn last_text_profile_wins() {
        let a = Profile::handcrafted("a", "first");
        let b = Profile::handcrafted("b", "second");
        let req = apply_profile(&b, apply_profile(&a, ModelRequest::new("q")).unwrap()).unwrap();
        assert_eq!(req.system_prefix.as_deref(), Some("second"));
    }

    #[test]
    fn invalid_profiles_rejected() {
        let mut p = Profile::pluggable("p", "tag");
        p.system_text = Some("x".into());
        assert!(apply_profile(&p, ModelRequest::new("q")).is_err());
        let mut h = Profile::handcrafted("h", "x");
        h.system_text = None;
        assert!(matches!(h.validate(), Err(ProfileError::InvalidProfile(..))));
    }

    #[test]
    fn generated_profile_takes_first_candidate() {
        let model = ScriptedModel::new(vec![ScriptRule::new(
            "g",
            "GENERATE PROFILE",
            ["You are a 30-year-old chemist."],
        )]);
        let attrs = obj(json!({"age": 30, "interest": "chemistry"}));
        let p = generate_profile(&[], &attrs, &model).unwrap();
        assert_eq!(p.system_text.as_deref(), Some("You are a 30-year-old chemist."));
        assert_eq!(p.method, ProfileMethod::LlmGenerated);
        p.validate().unwrap();
    }

    #[test]
    fn generation_prompt_lists_seeds() {
        let seeds = vec![Profile::handcrafted("s", "You are a tutor.")];
        let prompt = generation_prompt(&seeds, &obj(json!({"role": "coach"})));
        assert!(prompt.contains("role: coach"));
        assert!(prompt.contains("- You are a tutor."));
    }

    #[test]
    fn empty_generation_fails() {
        let model = ScriptedModel::new(vec![ScriptRule::new("g", "*", [""])]);
        assert_eq!(
            generate_profile(&[], &obj(json!({"a": 1})), &model),
            Err(ProfileError::EmptyGeneration)
        );
    }

    #[test]
    fn align_fills_placeholders() {
        let p = align_profile(&obj(json!({"state": "Ohio"})), "You are a voter from {state}.").unwrap();
        assert_eq!(p.system_text.as_deref(), Some("You are a voter from Ohio."));
        assert_eq!(p.method, ProfileMethod::DatasetAligned);
        let plain = align_profile(&obj(json!({})), "No fields {here is prose}").unwrap();
        assert_eq!(plain.system_text.as_deref(), Some("No fields {here is prose}"));
        assert_eq!(
            align_profile(&obj(json!({"state": "Ohio"})), "From {city}"),
            Err(ProfileError::MissingField("city".into()))
        );
    }
}
