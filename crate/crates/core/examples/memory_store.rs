//! Memory formats, scopes, similarity reads and capacity-driven forgetting.

use serde_json::json;
use umf::memory::{MemoryLocation, MemoryRecord, MemoryStore, Query, RecordFilter};

fn main() {
    let mut store = MemoryStore::new(MemoryLocation::Embedded, 4);
    store.write(MemoryRecord::embedded("fact/lyon", "Lyon sits where the Rhone meets the Saone").importance(0.9));
    store.write(MemoryRecord::embedded("fact/paris", "Paris is the capital of France").importance(0.7));
    let row = json!({"city": "Lyon", "report": "sunny"}).as_object().cloned().unwrap();
    store.write(MemoryRecord::row("weather/1", "weather", row));
    store.write(MemoryRecord::text("scratch/1", "intermediate result 42").short_term("t1"));

    let similar = store.read(&Query::BySimilarity { text: "Rhone river city".into(), top_n: 1 });
    println!("most similar: {}", similar[0].key);
    let rows = store.read(&Query::ByFilter(RecordFilter::table("weather").eq("city", "Lyon")));
    println!("weather rows: {}", rows.len());

    println!("short-term records removed: {}", store.end_task_scope("t1"));

    store.write(MemoryRecord::text("note/a", "low value note").importance(0.1));
    store.write(MemoryRecord::text("note/b", "another low value note").importance(0.2));
    println!("size {} of capacity {}", store.len(), store.capacity);
    for r in store.records() {
        println!("kept {} (importance {:.1})", r.key, r.importance);
    }
}
