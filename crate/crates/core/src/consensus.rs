//! Election-only Raft over a simulated lossy network. Time is logical ticks
//! and every random choice comes from seeded ChaCha streams, so a run is a
//! pure function of (cluster size, network config, seed).

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ELECTION_TIMEOUT_MIN: u64 = 10;
pub const ELECTION_TIMEOUT_MAX: u64 = 20;
pub const HEARTBEAT_INTERVAL: u64 = 3;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    RequestVote,
    VoteGranted,
    Heartbeat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionMessage {
    pub kind: MessageKind,
    pub term: u64,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: NodeId,
    pub role: Role,
    pub term: u64,
    pub voted_for: Option<NodeId>,
    pub timeout_at: u64,
    pub rng_seed: u64,
    votes: BTreeSet<NodeId>,
    next_send: u64,
    rng: ChaCha8Rng,
}

impl NodeState {
    pub fn new(node_id: NodeId, rng_seed: u64) -> Self {
        let mut node = Self {
            node_id,
            role: Role::Follower,
            term: 0,
            voted_for: None,
            timeout_at: 0,
            rng_seed,
            votes: BTreeSet::new(),
            next_send: 0,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        };
        node.reset_timeout(0);
        node
    }

    fn reset_timeout(&mut self, now: u64) {
        self.timeout_at = now + self.rng.gen_range(ELECTION_TIMEOUT_MIN..=ELECTION_TIMEOUT_MAX);
    }

    fn adopt_term(&mut self, term: u64) -> bool {
        if term <= self.term {
            return false;
        }
        let stepped_down = self.role != Role::Follower;
        self.term = term;
        self.role = Role::Follower;
        self.voted_for = None;
        self.votes.clear();
        stepped_down
    }

    fn broadcast(&self, kind: MessageKind, peers: &[NodeId]) -> Vec<ElectionMessage> {
        peers
            .iter()
            .filter(|p| **p != self.node_id)
            .map(|&to| ElectionMessage {
                kind,
                term: self.term,
                from: self.node_id,
                to,
            })
            .collect()
    }

    fn become_leader(&mut self, now: u64, peers: &[NodeId]) -> Vec<ElectionMessage> {
        self.role = Role::Leader;
        self.next_send = now + HEARTBEAT_INTERVAL;
        self.broadcast(MessageKind::Heartbeat, peers)
    }

    /// Applies one election message. Returns outbound messages and whether the
    /// node's role changed in a way worth recording.
    pub fn handle_message(
        &mut self,
        msg: &ElectionMessage,
        peers: &[NodeId],
        now: u64,
    ) -> (Vec<ElectionMessage>, Option<ElectionEventKind>) {
        debug_assert_eq!(msg.to, self.node_id);
        let mut event = self
            .adopt_term(msg.term)
            .then_some(ElectionEventKind::SteppedDown);
        let mut out = Vec::new();
        match msg.kind {
            MessageKind::RequestVote => {
                if msg.term >= self.term && self.voted_for.is_none_or(|v| v == msg.from) {
                    self.voted_for = Some(msg.from);
                    self.reset_timeout(now);
                    out.push(ElectionMessage {
                        kind: MessageKind::VoteGranted,
                        term: self.term,
                        from: self.node_id,
                        to: msg.from,
                    });
                    event = event.or(Some(ElectionEventKind::VoteGranted));
                }
            }
            MessageKind::VoteGranted => {
                if self.role == Role::Candidate && msg.term == self.term {
                    self.votes.insert(msg.from);
                    if self.votes.len() >= majority(peers.len()) {
                        out = self.become_leader(now, peers);
                        event = Some(ElectionEventKind::BecameLeader);
                    }
                }
            }
            MessageKind::Heartbeat => {
                if msg.term >= self.term {
                    if self.role == Role::Candidate {
                        self.role = Role::Follower;
                        self.votes.clear();
                        event = Some(ElectionEventKind::SteppedDown);
                    }
                    if self.role == Role::Follower {
                        self.reset_timeout(now);
                    }
                }
            }
        }
        (out, event)
    }

    /// Timer duties: election timeout for followers and candidates, vote
    /// request retries for candidates, heartbeats for leaders.
    fn on_tick(&mut self, now: u64, peers: &[NodeId]) -> (Vec<ElectionMessage>, Vec<ElectionEventKind>) {
        match self.role {
            Role::Leader if now >= self.next_send => {
                self.next_send = now + HEARTBEAT_INTERVAL;
                (self.broadcast(MessageKind::Heartbeat, peers), Vec::new())
            }
            Role::Candidate if now < self.timeout_at && now >= self.next_send => {
                // Re-ask peers whose votes have not arrived yet.
                self.next_send = now + HEARTBEAT_INTERVAL;
                let missing: Vec<NodeId> = peers
                    .iter()
                    .copied()
                    .filter(|p| !self.votes.contains(p))
                    .collect();
                (self.broadcast(MessageKind::RequestVote, &missing), Vec::new())
            }
            Role::Follower | Role::Candidate if now >= self.timeout_at => {
                self.term += 1;
                self.role = Role::Candidate;
                self.voted_for = Some(self.node_id);
                self.votes = BTreeSet::from([self.node_id]);
                self.reset_timeout(now);
                self.next_send = now + HEARTBEAT_INTERVAL;
                let mut events = vec![ElectionEventKind::StartedElection];
                if self.votes.len() >= majority(peers.len()) {
                    events.push(ElectionEventKind::BecameLeader);
                    return (self.become_leader(now, peers), events);
                }
                (self.broadcast(MessageKind::RequestVote, peers), events)
            }
            _ => (Vec::new(), Vec::new()),
        }
    }
}

/// Votes needed to win among `n` nodes: ceil((n+1)/2).
pub fn majority(n: usize) -> usize {
    n / 2 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub drop_prob: f64,
    pub delay_min: u64,
    pub delay_max: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            drop_prob: 0.0,
            delay_min: 1,
            delay_max: 2,
        }
    }
}

impl NetConfig {
    pub fn lossy(drop_prob: f64) -> Self {
        Self {
            drop_prob,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    deliver_at: u64,
    order: u64,
    msg: ElectionMessage,
}

#[derive(Debug, Clone)]
pub struct SimNet {
    pub config: NetConfig,
    pub seed: u64,
    rng: ChaCha8Rng,
    in_flight: Vec<InFlight>,
    sent: u64,
}

impl SimNet {
    pub fn new(config: NetConfig, seed: u64) -> Self {
        Self {
            config,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            in_flight: Vec::new(),
            sent: 0,
        }
    }

    /// Queues `msg`, or drops it per the seeded loss rate. Returns false on drop.
    fn send(&mut self, now: u64, msg: ElectionMessage) -> bool {
        if self.rng.gen::<f64>() < self.config.drop_prob {
            return false;
        }
        let lo = self.config.delay_min.max(1);
        let hi = self.config.delay_max.max(lo);
        let delay = self.rng.gen_range(lo..=hi);
        self.in_flight.push(InFlight {
            deliver_at: now + delay,
            order: self.sent,
            msg,
        });
        self.sent += 1;
        true
    }

    fn take_due(&mut self, now: u64) -> Vec<ElectionMessage> {
        let (mut due, rest): (Vec<InFlight>, Vec<InFlight>) =
            self.in_flight.drain(..).partition(|m| m.deliver_at <= now);
        self.in_flight = rest;
        due.sort_by_key(|m| m.order);
        due.into_iter().map(|m| m.msg).collect()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectionEventKind {
    StartedElection,
    VoteGranted,
    BecameLeader,
    SteppedDown,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionEvent {
    pub tick: u64,
    pub kind: ElectionEventKind,
    pub node: NodeId,
    pub term: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub nodes: Vec<NodeState>,
    pub net: SimNet,
    pub now: u64,
    peers: Vec<NodeId>,
}

impl Cluster {
    pub fn new(n_nodes: usize, config: NetConfig, seed: u64) -> Self {
        let peers: Vec<NodeId> = (1..=n_nodes as NodeId).collect();
        let nodes = peers
            .iter()
            .map(|&id| NodeState::new(id, node_seed(seed, id)))
            .collect();
        Self {
            nodes,
            net: SimNet::new(config, seed),
            now: 0,
            peers,
        }
    }

    fn index(&self, id: NodeId) -> usize {
        (id - 1) as usize
    }

    fn dispatch(&mut self, from: NodeId, msgs: Vec<ElectionMessage>, events: &mut Vec<ElectionEvent>) {
        for m in msgs {
            if !self.net.send(self.now, m) {
                events.push(ElectionEvent {
                    tick: self.now,
                    kind: ElectionEventKind::Dropped,
                    node: from,
                    term: m.term,
                    peer: Some(m.to),
                });
            }
        }
    }

    /// Advances one tick: deliver due messages in send order, then run each
    /// node's timers in id order.
    pub fn step_tick(&mut self) -> Vec<ElectionEvent> {
        self.now += 1;
        let now = self.now;
        let mut events = Vec::new();
        for msg in self.net.take_due(now) {
            let i = self.index(msg.to);
            let (out, ev) = self.nodes[i].handle_message(&msg, &self.peers, now);
            if let Some(kind) = ev {
                events.push(ElectionEvent {
                    tick: now,
                    kind,
                    node: msg.to,
                    term: self.nodes[i].term,
                    peer: Some(msg.from),
                });
            }
            self.dispatch(msg.to, out, &mut events);
        }
        for i in 0..self.nodes.len() {
            let (out, evs) = self.nodes[i].on_tick(now, &self.peers);
            let node = self.nodes[i].node_id;
            let term = self.nodes[i].term;
            events.extend(evs.into_iter().map(|kind| ElectionEvent {
                tick: now,
                kind,
                node,
                term,
                peer: None,
            }));
            self.dispatch(node, out, &mut events);
        }
        events
    }

    pub fn leader(&self) -> Option<&NodeState> {
        self.nodes.iter().find(|n| n.role == Role::Leader)
    }

    pub fn leaders(&self) -> Vec<&NodeState> {
        self.nodes.iter().filter(|n| n.role == Role::Leader).collect()
    }
}

fn node_seed(seed: u64, id: NodeId) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ u64::from(id).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionOutcome {
    pub leader: NodeId,
    pub term: u64,
    pub ticks_elapsed: u64,
    pub events: Vec<ElectionEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElectionError {
    #[error("no leader elected within {max_ticks} ticks")]
    ElectionTimeout {
        max_ticks: u64,
        events: Vec<ElectionEvent>,
    },
    #[error("cluster needs at least one node")]
    EmptyCluster,
}

/// Steps a fresh cluster until some node is leader or `max_ticks` pass.
pub fn run_election(
    n_nodes: usize,
    config: NetConfig,
    seed: u64,
    max_ticks: u64,
) -> Result<ElectionOutcome, ElectionError> {
    if n_nodes == 0 {
        return Err(ElectionError::EmptyCluster);
    }
    let mut cluster = Cluster::new(n_nodes, config, seed);
    let mut events = Vec::new();
    while cluster.now < max_ticks {
        events.extend(cluster.step_tick());
        if let Some(leader) = cluster.leader() {
            return Ok(ElectionOutcome {
                leader: leader.node_id,
                term: leader.term,
                ticks_elapsed: cluster.now,
                events,
            });
        }
    }
    Err(ElectionError::ElectionTimeout { max_ticks, events })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(kind: MessageKind, term: u64, from: NodeId, to: NodeId) -> ElectionMessage {
        ElectionMessage { kind, term, from, to }
    }

    fn node_at(term: u64, role: Role) -> NodeState {
        let mut n = NodeState::new(1, 7);
        n.term = term;
        n.role = role;
        n
    }

    const PEERS: [NodeId; 3] = [1, 2, 3];

    #[test]
    fn higher_term_vote_granted() {
        let mut n = node_at(2, Role::Follower);
        let (out, _) = n.handle_message(&msg(MessageKind::RequestVote, 3, 2, 1), &PEERS, 5);
        assert_eq!(n.term, 3);
        assert_eq!(n.voted_for, Some(2));
        assert_eq!(out, vec![msg(MessageKind::VoteGranted, 3, 1, 2)]);
    }

    #[test]
    fn one_vote_per_term() {
        let mut n = node_at(2, Role::Follower);
        n.handle_message(&msg(MessageKind::RequestVote, 3, 2, 1), &PEERS, 5);
        let (out, _) = n.handle_message(&msg(MessageKind::RequestVote, 3, 3, 1), &PEERS, 6);
        assert!(out.is_empty());
        assert_eq!(n.voted_for, Some(2));
    }

    #[test]
    fn stale_request_denied() {
        let mut n = node_at(5, Role::Follower);
        let (out, _) = n.handle_message(&msg(MessageKind::RequestVote, 4, 2, 1), &PEERS, 1);
        assert!(out.is_empty());
        assert_eq!(n.term, 5);
    }

    #[test]
    fn leader_steps_down_on_higher_heartbeat() {
        let mut n = node_at(4, Role::Leader);
        let (_, ev) = n.handle_message(&msg(MessageKind::Heartbeat, 5, 2, 1), &PEERS, 9);
        assert_eq!(n.role, Role::Follower);
        assert_eq!(n.term, 5);
        assert_eq!(ev, Some(ElectionEventKind::SteppedDown));
    }

    #[test]
    fn candidate_wins_with_majority() {
        let mut n = node_at(3, Role::Candidate);
        n.votes = BTreeSet::from([1]);
        n.voted_for = Some(1);
        let (out, ev) = n.handle_message(&msg(MessageKind::VoteGranted, 3, 2, 1), &PEERS, 4);
        assert_eq!(n.role, Role::Leader);
        assert_eq!(ev, Some(ElectionEventKind::BecameLeader));
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|m| m.kind == MessageKind::Heartbeat));
    }

    #[test]
    fn majority_sizes() {
        assert_eq!(majority(1), 1);
        assert_eq!(majority(3), 2);
        assert_eq!(majority(4), 3);
        assert_eq!(majority(5), 3);
    }

    #[test]
    fn single_node_elects_itself_at_first_timeout() {
        let out = run_election(1, NetConfig::default(), 42, 100).unwrap();
        assert_eq!(out.leader, 1);
        assert_eq!(out.term, 1);
        assert!((ELECTION_TIMEOUT_MIN..=ELECTION_TIMEOUT_MAX).contains(&out.ticks_elapsed));
    }

    #[test]
    fn three_nodes_lossless_one_leader() {
        let mut c = Cluster::new(3, NetConfig::default(), 1);
        while c.leader().is_none() {
            c.step_tick();
            assert!(c.now < 200);
        }
        for _ in 0..30 {
            c.step_tick();
        }
        let leaders = c.leaders();
        assert_eq!(leaders.len(), 1);
        let lt = leaders[0].term;
        assert!(c.nodes.iter().all(|n| n.term >= lt));
    }

    #[test]
    fn empty_cluster_rejected() {
        assert_eq!(
            run_election(0, NetConfig::default(), 1, 10),
            Err(ElectionError::EmptyCluster)
        );
    }

    #[test]
    fn heavy_loss_may_time_out() {
        match run_election(5, NetConfig::lossy(0.9), 3, 20) {
            Ok(o) => assert!(o.ticks_elapsed <= 20),
            Err(ElectionError::ElectionTimeout { max_ticks, .. }) => assert_eq!(max_ticks, 20),
            Err(e) => panic!("unexpected {e}"),
        }
    }
}
