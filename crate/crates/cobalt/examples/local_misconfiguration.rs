//! Bad configuration is a local problem. Three nodes declare a subset
//! whose quorum can never assemble; the analyzer flags it, the run leaves
//! them empty-handed, and the two sound nodes still finish and agree.

use cobalt::harness::{analyze, run_checked};
use cobalt::scenario::ScenarioScript;
use cobalt::simnet::FinalState;

const SCRIPT: &str = r#"
protocol = "rbc"
seed = 5
tick_budget = 400

[nodes]
names = ["a", "b", "c", "d", "e"]

[[subsets]]
owners = ["a", "b"]
members = ["a", "b", "c", "d", "e"]
t = 1
q = 4

[[subsets]]
owners = ["c", "d", "e"]
members = ["a", "b", "c", "d", "e"]
t = 0
q = 7
unchecked = true

[adversary]
delay = "uniform"

[rbc]
broadcaster = "a"
content = "locality-probe"
"#;

fn main() -> cobalt::Result<()> {
    let script = ScenarioScript::parse(SCRIPT)?;

    let report = analyze(&script)?;
    for line in report.text.lines() {
        if line.contains("BROKEN") || line.starts_with("validation") {
            println!("{line}");
        }
    }

    let (result, verdict) = run_checked(&script, script.seed)?;
    for (node, state) in &result.finals {
        if let FinalState::Rbc { accepted } = state {
            println!("{node} accepted: {accepted:?}");
        }
    }
    println!(
        "goal={} (counts only soundly configured nodes), verdict={}",
        result.outcome.goal,
        if verdict.ok() { "ok" } else { "FAIL" }
    );
    assert!(verdict.ok());
    assert!(result.outcome.goal);
    Ok(())
}
