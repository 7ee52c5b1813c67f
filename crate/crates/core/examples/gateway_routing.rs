//! Gateway routing across three registrants: domain match, load, then
//! registration order, with heartbeat expiry.

use std::collections::BTreeSet;

use umf::orchestration::{Gateway, GatewayRegistration, Status};

fn tags(xs: &[&str]) -> BTreeSet<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut gw = Gateway::new(10);
    gw.register(GatewayRegistration::new("math", ["math"], 2))?;
    gw.advance(1);
    gw.register(GatewayRegistration::new("lang", ["language"], 2))?;
    gw.advance(1);
    gw.register(GatewayRegistration::new("general", ["math", "language"], 4))?;

    for domains in [&["math"][..], &["math"], &["language"], &["astronomy"]] {
        let who = gw.route(&tags(domains))?;
        println!("{domains:?} -> {who} (load {})", gw.get(&who).unwrap().load);
    }

    gw.advance(5);
    gw.heartbeat("general", 0, Status::Available)?;
    gw.advance(8);
    for r in gw.registrations() {
        println!("{} status {:?} last heartbeat {}", r.core_agent_id, r.status, r.last_heartbeat);
    }
    println!("after expiry {:?} -> {}", ["math"], gw.route(&tags(&["math"]))?);
    Ok(())
}
