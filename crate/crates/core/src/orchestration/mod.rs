//! Core-agents, the topologies that combine them, and the runtime that
//! executes tasks over a topology.

mod agent;
pub mod gateway;
mod runner;

pub use agent::{
    ActiveCoreAgent, CoreAgent, CoreAgentDecl, DeclKind, MemoryDecl, PassiveCoreAgent, PlanningModule,
    ProfileDecl, ProfileModule, ProfileRule, TechniqueConfig, CATCH_ALL,
};
pub use gateway::{Gateway, GatewayError, GatewayRegistration, Status};
pub use runner::{
    DomainDef, ElectionSettings, Orchestrator, OrchestratorConfig, Resources, TaskOutcome, TaskStatus,
    DEFAULT_STEP_LIMIT, TABULAR_DOMAIN,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::ElectionError;
use crate::model::{CoreAgentKind, ModuleName};
use crate::planning::PlanningError;
use crate::profile::{Profile, ProfileError};
use crate::security::SecurityError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("passive core-agent {agent} cannot carry a {module} module")]
    PassiveModule { agent: String, module: ModuleName },
    #[error("active core-agent {0} needs a planning module")]
    MissingPlanning(String),
    #[error("unknown {kind} {id}")]
    UnknownReference { kind: &'static str, id: String },
    #[error("unknown passive core-agent {0}")]
    UnknownPassiveAgent(String),
    #[error("passive core-agent {0} is already attached")]
    AlreadyAttached(String),
    #[error("passive core-agent {0} is not attached")]
    NotAttached(String),
}

#[derive(Debug, Error)]
pub enum OrchestrationError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("step limit of {0} exceeded")]
    StepLimitExceeded(usize),
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Security(#[from] SecurityError),
    #[error(transparent)]
    Election(#[from] ElectionError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SinglePassive,
    SingleActive,
    UniformPassive,
    UniformActive,
    HybridOneActive,
    ManyActiveManyPassive,
}

/// How an active core-agent reaches passive workers: by dispatching tool
/// steps itself, or by handing them to the model whose inline calls then
/// reach the workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    #[default]
    Direct,
    ViaModel,
}

/// How a task picks its orchestrator when several active core-agents exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    #[default]
    Election,
    Gateway,
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub architecture: Architecture,
    pub agents: Vec<CoreAgent>,
    /// Passive ids currently connected through the switch.
    pub attached: BTreeSet<String>,
    /// Model binding driving passive-only topologies.
    pub front_model: Option<String>,
    /// Profiles fixed on the front model at setup.
    pub front_profiles: Vec<Profile>,
    pub wiring: Wiring,
    pub routing: Routing,
}

impl Topology {
    /// All passive agents start attached.
    pub fn new(architecture: Architecture, agents: Vec<CoreAgent>) -> Self {
        let attached = agents
            .iter()
            .filter(|a| a.kind() == CoreAgentKind::Passive)
            .map(|a| a.id().to_string())
            .collect();
        Self {
            architecture,
            agents,
            attached,
            front_model: None,
            front_profiles: Vec::new(),
            wiring: Wiring::Direct,
            routing: Routing::Election,
        }
    }

    pub fn with_front_model(mut self, model: impl Into<String>, profiles: Vec<Profile>) -> Self {
        self.front_model = Some(model.into());
        self.front_profiles = profiles;
        self
    }

    pub fn with_wiring(mut self, wiring: Wiring) -> Self {
        self.wiring = wiring;
        self
    }

    pub fn with_routing(mut self, routing: Routing) -> Self {
        self.routing = routing;
        self
    }

    pub fn get(&self, id: &str) -> Option<&CoreAgent> {
        self.agents.iter().find(|a| a.id() == id)
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.agents.len())
            .filter(|&i| self.agents[i].kind() == CoreAgentKind::Active)
            .collect()
    }

    pub fn passive_indices(&self) -> Vec<usize> {
        (0..self.agents.len())
            .filter(|&i| self.agents[i].kind() == CoreAgentKind::Passive)
            .collect()
    }

    pub fn is_attached(&self, id: &str) -> bool {
        self.attached.contains(id)
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let invalid = |m: String| Err(TopologyError::Invalid(m));
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            if !ids.insert(a.id()) {
                return invalid(format!("duplicate core-agent {}", a.id()));
            }
            if let CoreAgent::Passive(p) = a {
                if p.tools.is_empty() {
                    return invalid(format!("passive core-agent {} owns no tools", p.core_agent_id));
                }
            }
        }
        let actives = self.active_indices().len();
        let passives = self.passive_indices().len();
        let arch = self.architecture;
        let ok = match arch {
            Architecture::SinglePassive => actives == 0 && passives == 1,
            Architecture::SingleActive => actives == 1 && passives == 0,
            Architecture::UniformPassive => actives == 0 && passives >= 1,
            Architecture::UniformActive => actives >= 1 && passives == 0,
            Architecture::HybridOneActive => actives == 1 && passives >= 1,
            Architecture::ManyActiveManyPassive => actives >= 2 && passives >= 1,
        };
        if !ok {
            return invalid(format!(
                "{arch:?} cannot hold {actives} active and {passives} passive core-agents"
            ));
        }
        if actives == 0 && self.front_model.is_none() {
            return invalid("passive-only topologies need a front model".into());
        }
        for id in &self.attached {
            match self.get(id) {
                Some(CoreAgent::Passive(_)) => {}
                _ => return Err(TopologyError::UnknownPassiveAgent(id.clone())),
            }
        }
        Ok(())
    }

    pub fn attach(&mut self, passive_id: &str) -> Result<(), TopologyError> {
        self.passive(passive_id)?;
        if !self.attached.insert(passive_id.to_string()) {
            return Err(TopologyError::AlreadyAttached(passive_id.to_string()));
        }
        Ok(())
    }

    pub fn detach(&mut self, passive_id: &str) -> Result<(), TopologyError> {
        self.passive(passive_id)?;
        if !self.attached.remove(passive_id) {
            return Err(TopologyError::NotAttached(passive_id.to_string()));
        }
        Ok(())
    }

    fn passive(&self, id: &str) -> Result<&PassiveCoreAgent, TopologyError> {
        match self.get(id) {
            Some(CoreAgent::Passive(p)) => Ok(p),
            _ => Err(TopologyError::UnknownPassiveAgent(id.to_string())),
        }
    }
}
