//! Reliable broadcast under an equivocating broadcaster. Node a sends one
//! content to half its listeners and a mutation to the rest; the echo and
//! ready thresholds force every honest node onto the same side anyway.

use cobalt::harness::run_checked;
use cobalt::scenario::ScenarioScript;
use cobalt::simnet::FinalState;

const SCRIPT: &str = r#"
protocol = "rbc"
seed = 3
tick_budget = 400

[nodes]
names = ["a", "b", "c", "d"]

[[subsets]]
members = ["a", "b", "c", "d"]
t = 1
q = 3

[faults]
byzantine = { a = "equivocate" }

[adversary]
delay = "uniform"

[rbc]
broadcaster = "a"
content = "ledger-v2"
"#;

fn main() -> cobalt::Result<()> {
    let script = ScenarioScript::parse(SCRIPT)?;
    for seed in 0..8 {
        let (result, verdict) = run_checked(&script, seed)?;
        let mut accepted = Vec::new();
        for (node, state) in &result.finals {
            if let FinalState::Rbc { accepted: Some(c) } = state {
                accepted.push(format!("{node}={c}"));
            }
        }
        println!(
            "seed {seed}: equivocations={} accepted [{}] verdict={}",
            result.outcome.equivocations,
            accepted.join(" "),
            if verdict.ok() { "ok" } else { "FAIL" }
        );
        assert!(verdict.ok());
    }
    println!("honest nodes never split, whichever copy they saw first");
    Ok(())
}
