//! Core-agent memory: short/long-term scope, embedded vs extension location,
//! four storage formats, and an importance-then-LRU forgetting rule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const EMBEDDING_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryLocation {
    Embedded,
    Extension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryFormat {
    NaturalLanguage,
    TabularRow,
    Embedding,
    StructuredListNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    ShortTerm(String),
    LongTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub key: String,
    pub content: Value,
    pub format: MemoryFormat,
    pub scope: Scope,
    pub importance: f64,
    #[serde(default)]
    pub created_tick: u64,
    #[serde(default)]
    pub last_access_tick: u64,
    /// Table name for tabular rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    /// Parent key for structured-list nodes; `None` marks a root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
}

impl MemoryRecord {
    fn base(key: impl Into<String>, content: Value, format: MemoryFormat) -> Self {
        Self {
            key: key.into(),
            content,
            format,
            scope: Scope::LongTerm,
            importance: 0.5,
            created_tick: 0,
            last_access_tick: 0,
            table: None,
            parent: None,
            vector: None,
        }
    }

    pub fn text(key: impl Into<String>, text: impl Into<String>) -> Self {
        Self::base(key, Value::String(text.into()), MemoryFormat::NaturalLanguage)
    }

    /// Text record indexed by its trigram embedding.
    pub fn embedded(key: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut r = Self::base(key, Value::String(text.clone()), MemoryFormat::Embedding);
        r.vector = Some(embed(&text).to_vec());
        r
    }

    pub fn row(
        key: impl Into<String>,
        table: impl Into<String>,
        fields: serde_json::Map<String, Value>,
    ) -> Self {
        let mut r = Self::base(key, Value::Object(fields), MemoryFormat::TabularRow);
        r.table = Some(table.into());
        r
    }

    pub fn node(key: impl Into<String>, parent: Option<&str>, content: Value) -> Self {
        let mut r = Self::base(key, content, MemoryFormat::StructuredListNode);
        r.parent = parent.map(str::to_string);
        r
    }

    pub fn short_term(mut self, task_id: impl Into<String>) -> Self {
        self.scope = Scope::ShortTerm(task_id.into());
        self
    }

    pub fn importance(mut self, importance: f64) -> Self {
        self.importance = importance.clamp(0.0, 1.0);
        self
    }

    pub fn content_text(&self) -> String {
        match &self.content {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }

    fn eviction_key(&self) -> (f64, u64, u64) {
        (self.importance, self.last_access_tick, self.created_tick)
    }
}

/// Filter query. Every populated field must match.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordFilter {
    #[serde(default)]
    pub scope: Option<Scope>,
    #[serde(default)]
    pub format: Option<MemoryFormat>,
    #[serde(default)]
    pub table: Option<String>,
    /// Equality predicates over the fields of tabular rows.
    #[serde(default)]
    pub where_eq: Vec<(String, Value)>,
}

impl RecordFilter {
    pub fn scope(scope: Scope) -> Self {
        Self {
            scope: Some(scope),
            ..Self::default()
        }
    }

    pub fn table(table: impl Into<String>) -> Self {
        Self {
            format: Some(MemoryFormat::TabularRow),
            table: Some(table.into()),
            ..Self::default()
        }
    }

    pub fn eq(mut self, field: impl Into<String>, value: impl Into<Value>) -> Self {
        self.where_eq.push((field.into(), value.into()));
        self
    }

    fn accepts(&self, r: &MemoryRecord) -> bool {
        if self.scope.as_ref().is_some_and(|s| *s != r.scope) {
            return false;
        }
        if self.format.is_some_and(|f| f != r.format) {
            return false;
        }
        if self.table.is_some() && self.table != r.table {
            return false;
        }
        self.where_eq
            .iter()
            .all(|(field, want)| r.content.get(field) == Some(want))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    ByKey(String),
    ByFilter(RecordFilter),
    BySimilarity { text: String, top_n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub location: MemoryLocation,
    pub capacity: usize,
    records: BTreeMap<String, MemoryRecord>,
    clock: u64,
}

impl MemoryStore {
    pub fn new(location: MemoryLocation, capacity: usize) -> Self {
        Self {
            location,
            capacity: capacity.max(1),
            records: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn records(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.values()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.records.contains_key(key)
    }

    /// Inserts or overwrites `record` at its key, then enforces capacity
    /// over the other records. Records with an empty key are ignored.
    pub fn write(&mut self, mut record: MemoryRecord) {
        if record.key.is_empty() {
            return;
        }
        self.clock += 1;
        record.created_tick = self.clock;
        record.last_access_tick = self.clock;
        if record.format == MemoryFormat::Embedding && record.vector.is_none() {
            record.vector = Some(embed(&record.content_text()).to_vec());
        }
        let key = record.key.clone();
        self.records.insert(key.clone(), record);
        self.evict_until_fits(Some(&key));
    }

    pub fn read(&mut self, query: &Query) -> Vec<MemoryRecord> {
        let keys: Vec<String> = match query {
            Query::ByKey(key) => self
                .records
                .get(key)
                .map(|r| vec![r.key.clone()])
                .unwrap_or_default(),
            Query::ByFilter(filter) => {
                let mut hits: Vec<&MemoryRecord> =
                    self.records.values().filter(|r| filter.accepts(r)).collect();
                hits.sort_by(|a, b| a.created_tick.cmp(&b.created_tick).then(a.key.cmp(&b.key)));
                hits.into_iter().map(|r| r.key.clone()).collect()
            }
            Query::BySimilarity { text, top_n } => {
                let q = embed(text);
                let mut scored: Vec<(f64, u64, &str)> = self
                    .records
                    .values()
                    .filter(|r| r.format == MemoryFormat::Embedding)
                    .filter_map(|r| {
                        r.vector
                            .as_deref()
                            .map(|v| (cosine(&q, v), r.created_tick, r.key.as_str()))
                    })
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                scored
                    .into_iter()
                    .take((*top_n).max(1))
                    .map(|(_, _, k)| k.to_string())
                    .collect()
            }
        };
        if keys.is_empty() {
            return Vec::new();
        }
        self.clock += 1;
        let now = self.clock;
        keys.iter()
            .filter_map(|k| {
                let r = self.records.get_mut(k)?;
                r.last_access_tick = now;
                Some(r.clone())
            })
            .collect()
    }

    /// Evicts lowest-importance records (then least recently used, then
    /// oldest) until the store fits its capacity.
    pub fn forget_enforce(&mut self) -> Vec<MemoryRecord> {
        self.evict_until_fits(None)
    }

    fn evict_until_fits(&mut self, keep: Option<&str>) -> Vec<MemoryRecord> {
        let mut evicted = Vec::new();
        while self.records.len() > self.capacity {
            let victim = self
                .records
                .values()
                .filter(|r| Some(r.key.as_str()) != keep)
                .min_by(|a, b| {
                    let (ia, la, ca) = a.eviction_key();
                    let (ib, lb, cb) = b.eviction_key();
                    ia.total_cmp(&ib)
                        .then(la.cmp(&lb))
                        .then(ca.cmp(&cb))
                        .then(a.key.cmp(&b.key))
                })
                .map(|r| r.key.clone())
                .expect("store is over capacity so nonempty");
            evicted.extend(self.records.remove(&victim));
        }
        evicted
    }

    /// Drops every short-term record owned by `task_id`.
    pub fn end_task_scope(&mut self, task_id: &str) -> usize {
        let before = self.records.len();
        self.records
            .retain(|_, r| !matches!(&r.scope, Scope::ShortTerm(t) if t == task_id));
        before - self.records.len()
    }

    pub fn delete(&mut self, key: &str) -> Option<MemoryRecord> {
        self.records.remove(key)
    }

    pub fn delete_where(&mut self, filter: &RecordFilter) -> usize {
        let before = self.records.len();
        self.records.retain(|_, r| !filter.accepts(r));
        before - self.records.len()
    }

    /// Children of a structured-list node in insertion order.
    pub fn children(&self, parent: &str) -> Vec<&MemoryRecord> {
        let mut out: Vec<&MemoryRecord> = self
            .records
            .values()
            .filter(|r| {
                r.format == MemoryFormat::StructuredListNode && r.parent.as_deref() == Some(parent)
            })
            .collect();
        out.sort_by_key(|r| r.created_tick);
        out
    }

    /// Test hook for building a store with explicit ticks.
    #[doc(hidden)]
    pub fn insert_raw(&mut self, record: MemoryRecord) {
        self.clock = self.clock.max(record.last_access_tick);
        self.records.insert(record.key.clone(), record);
    }
}

/// 64-bucket character-trigram hash embedding, L2-normalized.
pub fn embed(text: &str) -> [f64; EMBEDDING_DIM] {
    let mut counts = [0.0f64; EMBEDDING_DIM];
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    if chars.len() < 3 {
        return counts;
    }
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut len = 0;
        for c in w {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        counts[(fnv1a(&buf[..len]) % EMBEDDING_DIM as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in counts.iter_mut() {
        *x /= norm;
    }
    counts
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
