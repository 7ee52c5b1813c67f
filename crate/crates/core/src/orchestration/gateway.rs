//! Registration-and-routing gateway in front of active core-agents.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TTL: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("core-agent {0} is already registered")]
    DuplicateRegistration(String),
    #[error("core-agent {0} is not registered")]
    UnknownCoreAgent(String),
    #[error("no available core-agent")]
    NoAvailableCoreAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Available,
    Busy,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayRegistration {
    pub core_agent_id: String,
    #[serde(default)]
    pub domains: BTreeSet<String>,
    pub capacity: u32,
    #[serde(default)]
    pub load: u32,
    #[serde(default = "available")]
    pub status: Status,
    #[serde(default)]
    pub registered_at: u64,
    #[serde(default)]
    pub last_heartbeat: u64,
}

fn available() -> Status {
    Status::Available
}

impl GatewayRegistration {
    pub fn new<I, S>(core_agent_id: impl Into<String>, domains: I, capacity: u32) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            core_agent_id: core_agent_id.into(),
            domains: domains.into_iter().map(Into::into).collect(),
            capacity: capacity.max(1),
            load: 0,
            status: Status::Available,
            registered_at: 0,
            last_heartbeat: 0,
        }
    }

    pub fn with_load(mut self, load: u32) -> Self {
        self.load = load;
        self
    }

    fn eligible(&self) -> bool {
        self.status == Status::Available && self.load < self.capacity
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gateway {
    pub ttl: u64,
    now: u64,
    registrations: Vec<GatewayRegistration>,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(DEFAULT_TTL)
    }
}

impl Gateway {
    pub fn new(ttl: u64) -> Self {
        Self {
            ttl,
            now: 0,
            registrations: Vec::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn registrations(&self) -> &[GatewayRegistration] {
        &self.registrations
    }

    pub fn get(&self, id: &str) -> Option<&GatewayRegistration> {
        self.registrations.iter().find(|r| r.core_agent_id == id)
    }

    fn get_mut(&mut self, id: &str) -> Result<&mut GatewayRegistration, GatewayError> {
        self.registrations
            .iter_mut()
            .find(|r| r.core_agent_id == id)
            .ok_or_else(|| GatewayError::UnknownCoreAgent(id.to_string()))
    }

    /// Records `reg` stamped with the current tick.
    pub fn register(&mut self, mut reg: GatewayRegistration) -> Result<(), GatewayError> {
        if self.get(&reg.core_agent_id).is_some() {
            return Err(GatewayError::DuplicateRegistration(reg.core_agent_id));
        }
        reg.registered_at = self.now;
        reg.last_heartbeat = self.now;
        reg.load = reg.load.min(reg.capacity);
        self.registrations.push(reg);
        Ok(())
    }

    pub fn heartbeat(&mut self, id: &str, load: u32, status: Status) -> Result<(), GatewayError> {
        let now = self.now;
        let reg = self.get_mut(id)?;
        reg.load = load.min(reg.capacity);
        reg.status = status;
        reg.last_heartbeat = now;
        Ok(())
    }

    pub fn advance(&mut self, ticks: u64) {
        self.set_now(self.now + ticks);
    }

    /// Moves the clock forward and marks silent registrants offline.
    pub fn set_now(&mut self, now: u64) {
        self.now = self.now.max(now);
        let (now, ttl) = (self.now, self.ttl);
        for r in &mut self.registrations {
            if now - r.last_heartbeat > ttl {
                r.status = Status::Offline;
            }
        }
    }

    /// Least-loaded available registrant, preferring domain matches; ties go
    /// to the earliest registration. The winner's load is incremented.
    pub fn route(&mut self, domains: &BTreeSet<String>) -> Result<String, GatewayError> {
        let now = self.now;
        self.set_now(now);
        let eligible: Vec<usize> = (0..self.registrations.len())
            .filter(|&i| self.registrations[i].eligible())
            .collect();
        let matching: Vec<usize> = eligible
            .iter()
            .copied()
            .filter(|&i| !self.registrations[i].domains.is_disjoint(domains))
            .collect();
        let pool = if matching.is_empty() { eligible } else { matching };
        let winner = pool
            .into_iter()
            .min_by_key(|&i| {
                let r = &self.registrations[i];
                (r.load, r.registered_at, i)
            })
            .ok_or(GatewayError::NoAvailableCoreAgent)?;
        let r = &mut self.registrations[winner];
        r.load += 1;
        Ok(r.core_agent_id.clone())
    }

    /// Gives back one unit of load after a routed task completes.
    pub fn release(&mut self, id: &str) -> Result<(), GatewayError> {
        let reg = self.get_mut(id)?;
        reg.load = reg.load.saturating_sub(1);
        Ok(())
    }
}
