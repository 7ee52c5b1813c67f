//! Leader election among five active core-agents over a lossy network.
//!
//! cargo run --example leader_election [seed] [drop]

use umf::consensus::{run_election, NetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let drop: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.3);
    let outcome = run_election(5, NetConfig::lossy(drop), seed, 50)?;
    for e in &outcome.events {
        println!("tick {:>3} node {} term {} {:?} {:?}", e.tick, e.node, e.term, e.kind, e.peer);
    }
    println!("leader {} in term {} after {} ticks", outcome.leader, outcome.term, outcome.ticks_elapsed);
    Ok(())
}
