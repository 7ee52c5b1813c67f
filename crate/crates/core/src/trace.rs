//! Append-only run trace. Every orchestration action lands here and every
//! scenario assertion reads from here.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    TaskReceived,
    Decomposition,
    PlanCreated,
    PlanSelected,
    ProfileSet,
    ModelCall,
    InlineCallParsed,
    ToolCalled,
    ToolPayloadDelivered,
    GuardrailVerdict,
    MemoryWrite,
    MemoryRead,
    RouteSelected,
    LeaderElected,
    Attach,
    Detach,
    HumanMsg,
    Warning,
    TaskDone,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::TaskReceived => "task_received",
            TraceKind::Decomposition => "decomposition",
            TraceKind::PlanCreated => "plan_created",
            TraceKind::PlanSelected => "plan_selected",
            TraceKind::ProfileSet => "profile_set",
            TraceKind::ModelCall => "model_call",
            TraceKind::InlineCallParsed => "inline_call_parsed",
            TraceKind::ToolCalled => "tool_called",
            TraceKind::ToolPayloadDelivered => "tool_payload_delivered",
            TraceKind::GuardrailVerdict => "guardrail_verdict",
            TraceKind::MemoryWrite => "memory_write",
            TraceKind::MemoryRead => "memory_read",
            TraceKind::RouteSelected => "route_selected",
            TraceKind::LeaderElected => "leader_elected",
            TraceKind::Attach => "attach",
            TraceKind::Detach => "detach",
            TraceKind::HumanMsg => "human_msg",
            TraceKind::Warning => "warning",
            TraceKind::TaskDone => "task_done",
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Field order is part of the JSON-lines format: seq, tick, kind, actor, payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub tick: u64,
    pub kind: TraceKind,
    pub actor: String,
    pub payload: Value,
}

impl TraceEvent {
    /// Looks up `actor`, `seq`, `tick`, `kind`, or a dotted path into the payload.
    pub fn field(&self, path: &str) -> Option<Value> {
        match path {
            "actor" => Some(Value::String(self.actor.clone())),
            "seq" => Some(Value::from(self.seq)),
            "tick" => Some(Value::from(self.tick)),
            "kind" => Some(Value::String(self.kind.as_str().to_string())),
            _ => {
                let path = path.strip_prefix("payload.").unwrap_or(path);
                let mut cur = &self.payload;
                for part in path.split('.') {
                    cur = cur.get(part)?;
                }
                Some(cur.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    events: Vec<TraceEvent>,
    tick: u64,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn emit(&mut self, kind: TraceKind, actor: impl Into<String>, payload: Value) -> u64 {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent {
            seq,
            tick: self.tick,
            kind,
            actor: actor.into(),
            payload,
        });
        seq
    }

    pub fn advance(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }

    pub fn advance_to(&mut self, tick: u64) {
        self.tick = self.tick.max(tick);
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Self> {
        let mut events = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent = serde_json::from_str(&line)
                .map_err(|err| io::Error::new(io::ErrorKind::InvalidData, err))?;
            events.push(e);
        }
        let tick = events.last().map_or(0, |e| e.tick);
        Ok(Self { events, tick })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn seq_is_gapless_and_field_order_fixed() {
        let mut t = Trace::new();
        t.emit(TraceKind::TaskReceived, "human", json!({"task_id": "t1"}));
        t.advance();
        t.emit(TraceKind::TaskDone, "agent", json!({"status": "completed"}));
        let text = t.to_jsonl();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"seq":0,"tick":0,"kind":"task_received","actor":"human","payload":{"task_id":"t1"}}"#
        );
        let back = Trace::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back.events(), t.events());
        assert_eq!(back.events()[1].seq, 1);
        assert_eq!(back.events()[1].tick, 1);
    }

    #[test]
    fn field_lookup() {
        let mut t = Trace::new();
        t.emit(TraceKind::GuardrailVerdict, "a", json!({"verdict": {"axis": "prompt"}}));
        let e = &t.events()[0];
        assert_eq!(e.field("actor"), Some(json!("a")));
        assert_eq!(e.field("verdict.axis"), Some(json!("prompt")));
        assert_eq!(e.field("payload.verdict.axis"), Some(json!("prompt")));
        assert_eq!(e.field("missing"), None);
    }
}
