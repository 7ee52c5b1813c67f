//! Deterministic core-agent orchestration.
//!
//! A core-agent sits between a language model and its tools. Active
//! core-agents plan, remember, set the model's profile, act, and guard;
//! passive core-agents only act (and optionally guard) on requests issued by
//! the model or by an active core-agent. This crate provides each module, the
//! multi-core topologies that combine them, leader election and gateway
//! routing between active core-agents, a classifier for agent descriptors,
//! and a scenario harness whose traces are the observable surface of a run.

pub mod action;
pub mod classifier;
pub mod consensus;
pub mod memory;
pub mod model;
pub mod orchestration;
pub mod planning;
pub mod profile;
pub mod scenario;
pub mod security;
pub mod trace;
