//! Classifies the bundled agent descriptors and prints the audit report.
//!
//! cargo run --example classify_agents [descriptors.json]

use umf::classifier::{audit, load_descriptors};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/agents.json").to_string());
    let report = audit(&load_descriptors(path)?);
    print!("{}", report.render_text());
    Ok(())
}
