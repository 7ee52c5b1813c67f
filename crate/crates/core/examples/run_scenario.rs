//! Runs a bundled scenario and prints its trace and assertion results.
//!
//! cargo run --example run_scenario [la1|la2a|la2b|la3|la4|detach|gateway] [seed]

use umf::scenario::{load_scenario, run_scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "la4".into());
    let seed = args.next().map(|s| s.parse()).transpose()?;
    let path = format!("{}/fixtures/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let run = run_scenario(&load_scenario(path)?, seed)?;
    for e in run.trace.events() {
        println!("{:>3} {:<24} {:<12} {}", e.seq, e.kind, e.actor, e.payload);
    }
    for r in &run.results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.description, r.detail);
    }
    println!("{} {}", run.scenario_id, if run.passed() { "passed" } else { "failed" });
    Ok(())
}
