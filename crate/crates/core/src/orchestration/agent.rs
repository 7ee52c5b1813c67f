use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TopologyError;
use crate::memory::{MemoryLocation, MemoryStore};
use crate::model::{pattern_matches, CoreAgentKind, ModuleMatrix, ModuleName, Presence};
use crate::planning::{DecompositionMode, FeedbackConfig, Strategy};
use crate::profile::Profile;
use crate::security::Policy;

/// Tool entry that makes a passive core-agent own every tool nobody else
/// claims.
pub const CATCH_ALL: &str = "*";

/// Stateless executor: action plus optional security, nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct PassiveCoreAgent {
    pub core_agent_id: String,
    pub tools: BTreeSet<String>,
    pub security: Option<Policy>,
    pub domains: BTreeSet<String>,
}

impl PassiveCoreAgent {
    pub fn new<I, S>(id: impl Into<String>, tools: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            core_agent_id: id.into(),
            tools: tools.into_iter().map(Into::into).collect(),
            security: None,
            domains: BTreeSet::new(),
        }
    }

    pub fn with_security(mut self, policy: Policy) -> Self {
        self.security = Some(policy);
        self
    }

    pub fn is_catch_all(&self) -> bool {
        self.tools.contains(CATCH_ALL)
    }

    pub fn matrix(&self) -> ModuleMatrix {
        ModuleMatrix::EMPTY
            .with(ModuleName::Action, Presence::Present)
            .with(ModuleName::Security, presence(self.security.is_some()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TechniqueConfig {
    LmPowered,
    /// Operators come from the named scenario domain; the model only
    /// formalizes the goal.
    RuleBased { domain: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningModule {
    #[serde(default = "non_iterative")]
    pub decomposition: DecompositionMode,
    #[serde(default = "single_path")]
    pub strategy: Strategy,
    #[serde(default = "lm_powered")]
    pub technique: TechniqueConfig,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default = "one")]
    pub max_retries: usize,
}

fn non_iterative() -> DecompositionMode {
    DecompositionMode::NonIterative
}

fn single_path() -> Strategy {
    Strategy::SinglePath
}

fn lm_powered() -> TechniqueConfig {
    TechniqueConfig::LmPowered
}

fn one() -> usize {
    1
}

impl Default for PlanningModule {
    fn default() -> Self {
        Self {
            decomposition: non_iterative(),
            strategy: single_path(),
            technique: lm_powered(),
            feedback: FeedbackConfig::default(),
            max_retries: one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub profiles: Vec<String>,
}

/// Profiles selected per request: the first rule whose pattern matches the
/// request text, else the defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileModule {
    pub library: BTreeMap<String, Profile>,
    pub rules: Vec<ProfileRule>,
    pub default: Vec<String>,
}

impl ProfileModule {
    pub fn new(profiles: Vec<Profile>, rules: Vec<ProfileRule>, default: Vec<String>) -> Self {
        Self {
            library: profiles.into_iter().map(|p| (p.profile_id.clone(), p)).collect(),
            rules,
            default,
        }
    }

    pub fn select(&self, text: &str) -> Vec<Profile> {
        let ids = self
            .rules
            .iter()
            .find(|r| pattern_matches(&r.pattern, text))
            .map(|r| &r.profiles)
            .unwrap_or(&self.default);
        ids.iter().filter_map(|id| self.library.get(id).cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveCoreAgent {
    pub core_agent_id: String,
    /// Model binding this agent drives.
    pub model: String,
    pub planning: PlanningModule,
    pub memory: Option<MemoryStore>,
    pub profile: Option<ProfileModule>,
    /// Tools this agent's own action module executes.
    pub tools: BTreeSet<String>,
    pub security: Option<Policy>,
    pub domains: BTreeSet<String>,
    /// Concurrent tasks accepted when registered with a gateway.
    pub capacity: u32,
}

impl ActiveCoreAgent {
    pub fn new(id: impl Into<String>, model: impl Into<String>, planning: PlanningModule) -> Self {
        Self {
            core_agent_id: id.into(),
            model: model.into(),
            planning,
            memory: None,
            profile: None,
            tools: BTreeSet::new(),
            security: None,
            domains: BTreeSet::new(),
            capacity: 1,
        }
    }

    pub fn matrix(&self) -> ModuleMatrix {
        ModuleMatrix {
            planning: Presence::Present,
            profile: presence(self.profile.is_some()),
            memory: presence(self.memory.is_some()),
            action: Presence::Present,
            security: presence(self.security.is_some()),
        }
    }
}

fn presence(on: bool) -> Presence {
    if on {
        Presence::Present
    } else {
        Presence::Absent
    }
}

/// The two shapes are distinct types, so a passive core-agent has nowhere
/// to hold planning, memory, or profile state.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreAgent {
    Active(Box<ActiveCoreAgent>),
    Passive(PassiveCoreAgent),
}

impl CoreAgent {
    pub fn id(&self) -> &str {
        match self {
            CoreAgent::Active(a) => &a.core_agent_id,
            CoreAgent::Passive(p) => &p.core_agent_id,
        }
    }

    pub fn kind(&self) -> CoreAgentKind {
        match self {
            CoreAgent::Active(_) => CoreAgentKind::Active,
            CoreAgent::Passive(_) => CoreAgentKind::Passive,
        }
    }

    pub fn matrix(&self) -> ModuleMatrix {
        match self {
            CoreAgent::Active(a) => a.matrix(),
            CoreAgent::Passive(p) => p.matrix(),
        }
    }

    pub fn security(&self) -> Option<&Policy> {
        match self {
            CoreAgent::Active(a) => a.security.as_ref(),
            CoreAgent::Passive(p) => p.security.as_ref(),
        }
    }

    pub fn as_active(&self) -> Option<&ActiveCoreAgent> {
        match self {
            CoreAgent::Active(a) => Some(a),
            CoreAgent::Passive(_) => None,
        }
    }

    pub fn as_active_mut(&mut self) -> Option<&mut ActiveCoreAgent> {
        match self {
            CoreAgent::Active(a) => Some(a),
            CoreAgent::Passive(_) => None,
        }
    }

    pub fn as_passive(&self) -> Option<&PassiveCoreAgent> {
        match self {
            CoreAgent::Passive(p) => Some(p),
            CoreAgent::Active(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclKind {
    Active,
    Passive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryDecl {
    pub capacity: usize,
    #[serde(default = "embedded")]
    pub location: MemoryLocation,
}

fn embedded() -> MemoryLocation {
    MemoryLocation::Embedded
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProfileDecl {
    #[serde(default)]
    pub rules: Vec<ProfileRule>,
    #[serde(default)]
    pub default: Vec<String>,
}

/// Declarative core-agent as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreAgentDecl {
    pub core_agent_id: String,
    pub kind: DeclKind,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub planning: Option<PlanningModule>,
    #[serde(default)]
    pub memory: Option<MemoryDecl>,
    #[serde(default)]
    pub profile: Option<ProfileDecl>,
    #[serde(default)]
    pub tools: BTreeSet<String>,
    /// Policy id.
    #[serde(default)]
    pub security: Option<String>,
    #[serde(default)]
    pub domains: BTreeSet<String>,
    #[serde(default = "one_u32")]
    pub capacity: u32,
}

fn one_u32() -> u32 {
    1
}

impl CoreAgentDecl {
    /// Resolves profile and policy ids and builds the typed core-agent. A
    /// passive declaration carrying planning, memory, or profile is rejected.
    pub fn build(
        &self,
        profiles: &BTreeMap<String, Profile>,
        policies: &BTreeMap<String, Policy>,
    ) -> Result<CoreAgent, TopologyError> {
        let id = &self.core_agent_id;
        let security = self
            .security
            .as_ref()
            .map(|p| {
                policies.get(p).cloned().ok_or_else(|| TopologyError::UnknownReference {
                    kind: "policy",
                    id: p.clone(),
                })
            })
            .transpose()?;
        match self.kind {
            DeclKind::Passive => {
                for (present, module) in [
                    (self.planning.is_some(), ModuleName::Planning),
                    (self.memory.is_some(), ModuleName::Memory),
                    (self.profile.is_some(), ModuleName::Profile),
                ] {
                    if present {
                        return Err(TopologyError::PassiveModule {
                            agent: id.clone(),
                            module,
                        });
                    }
                }
                Ok(CoreAgent::Passive(PassiveCoreAgent {
                    core_agent_id: id.clone(),
                    tools: self.tools.clone(),
                    security,
                    domains: self.domains.clone(),
                }))
            }
            DeclKind::Active => {
                let planning = self
                    .planning
                    .clone()
                    .ok_or_else(|| TopologyError::MissingPlanning(id.clone()))?;
                let model = self.model.clone().ok_or_else(|| {
                    TopologyError::Invalid(format!("active core-agent {id} has no model binding"))
                })?;
                let profile = self
                    .profile
                    .as_ref()
                    .map(|decl| {
                        let mut used: Vec<&String> = decl.default.iter().collect();
                        used.extend(decl.rules.iter().flat_map(|r| &r.profiles));
                        let library = used
                            .into_iter()
                            .map(|pid| {
                                profiles.get(pid).cloned().ok_or_else(|| TopologyError::UnknownReference {
                                    kind: "profile",
                                    id: pid.clone(),
                                })
                            })
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok::<_, TopologyError>(ProfileModule::new(
                            library,
                            decl.rules.clone(),
                            decl.default.clone(),
                        ))
                    })
                    .transpose()?;
                Ok(CoreAgent::Active(Box::new(ActiveCoreAgent {
                    core_agent_id: id.clone(),
                    model,
                    planning,
                    memory: self.memory.as_ref().map(|m| MemoryStore::new(m.location, m.capacity)),
                    profile,
                    tools: self.tools.clone(),
                    security,
                    domains: self.domains.clone(),
                    capacity: self.capacity.max(1),
                })))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::classify_matrix;

    fn decl(kind: DeclKind) -> CoreAgentDecl {
        CoreAgentDecl {
            core_agent_id: "a".into(),
            kind,
            model: Some("m".into()),
            planning: None,
            memory: None,
            profile: None,
            tools: ["calc".to_string()].into(),
            security: None,
            domains: BTreeSet::new(),
            capacity: 1,
        }
    }

    #[test]
    fn passive_with_profile_rejected() {
        let mut d = decl(DeclKind::Passive);
        d.profile = Some(ProfileDecl::default());
        assert_eq!(
            d.build(&BTreeMap::new(), &BTreeMap::new()),
            Err(TopologyError::PassiveModule {
                agent: "a".into(),
                module: ModuleName::Profile
            })
        );
    }

    #[test]
    fn passive_with_memory_or_planning_rejected() {
        let mut d = decl(DeclKind::Passive);
        d.memory = Some(MemoryDecl {
            capacity: 4,
            location: MemoryLocation::Embedded,
        });
        assert!(matches!(
            d.build(&BTreeMap::new(), &BTreeMap::new()),
            Err(TopologyError::PassiveModule { module: ModuleName::Memory, .. })
        ));
        let mut d = decl(DeclKind::Passive);
        d.planning = Some(PlanningModule::default());
        assert!(matches!(
            d.build(&BTreeMap::new(), &BTreeMap::new()),
            Err(TopologyError::PassiveModule { module: ModuleName::Planning, .. })
        ));
    }

    #[test]
    fn built_agents_classify_as_declared() {
        let p = decl(DeclKind::Passive).build(&BTreeMap::new(), &BTreeMap::new()).unwrap();
        assert_eq!(classify_matrix(&p.matrix()), CoreAgentKind::Passive);
        let mut d = decl(DeclKind::Active);
        d.planning = Some(PlanningModule::default());
        let a = d.build(&BTreeMap::new(), &BTreeMap::new()).unwrap();
        assert_eq!(classify_matrix(&a.matrix()), CoreAgentKind::Active);
    }

    #[test]
    fn unknown_profile_reference() {
        let mut d = decl(DeclKind::Active);
        d.planning = Some(PlanningModule::default());
        d.profile = Some(ProfileDecl {
            rules: vec![],
            default: vec!["ghost".into()],
        });
        assert_eq!(
            d.build(&BTreeMap::new(), &BTreeMap::new()),
            Err(TopologyError::UnknownReference {
                kind: "profile",
                id: "ghost".into()
            })
        );
    }

    #[test]
    fn profile_rules_select_first_match() {
        let m = ProfileModule::new(
            vec![Profile::handcrafted("sql", "SQL expert"), Profile::pluggable("tf", "toolformer")],
            vec![ProfileRule {
                pattern: "database".into(),
                profiles: vec!["sql".into()],
            }],
            vec!["tf".into()],
        );
        assert_eq!(m.select("update the database")[0].profile_id, "sql");
        assert_eq!(m.select("other")[0].profile_id, "tf");
    }
}
