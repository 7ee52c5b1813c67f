//! Breadth-first planning over a small precondition/effect domain, with the
//! plan replayed to confirm it reaches the goal.

use std::collections::BTreeSet;

use umf::planning::{enumerate_sequences, replay, rule_based_plan, Atom, Operator};

fn atoms(xs: &[&str]) -> BTreeSet<Atom> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ops = vec![
        Operator::new("boil_water", ["has_kettle"], ["hot_water"], [] as [&str; 0]),
        Operator::new("grind_beans", ["has_beans"], ["grounds"], ["has_beans"]),
        Operator::new("brew", ["hot_water", "grounds"], ["coffee"], ["hot_water", "grounds"]),
        Operator::new("buy_coffee", ["has_cash"], ["coffee"], ["has_cash"]),
    ];
    let facts = atoms(&["has_kettle", "has_beans"]);
    let goal = atoms(&["coffee"]);

    let plan = rule_based_plan(&facts, &ops, &goal, 6)?;
    let names = plan.operator_names();
    println!("plan: {}", names.join(" -> "));
    let end = replay(&facts, &ops, &names).expect("plan replays");
    println!("goal reached: {}", goal.is_subset(&end));

    let with_cash = atoms(&["has_kettle", "has_beans", "has_cash"]);
    for seq in enumerate_sequences(&with_cash, &ops, &goal, 6, 3) {
        let names: Vec<&str> = seq.iter().map(|&i| ops[i].name.as_str()).collect();
        println!("alternative: {}", names.join(" -> "));
    }
    Ok(())
}
