//! Multi-valued agreement over nine candidates. The trace shows the field
//! narrowing: election backs one value per node, disagreement continues
//! the round, and seed-derived indices prune until one candidate stands.

use cobalt::harness::run_checked;
use cobalt::mvba::MvbaEvent;
use cobalt::scenario::ScenarioScript;
use cobalt::simnet::{FinalState, NodeEvent, RecordLine};

const SCRIPT: &str = r#"
protocol = "mvba"
seed = 1

[nodes]
names = ["a", "b", "c", "d"]

[[subsets]]
members = ["a", "b", "c", "d"]
t = 1
q = 3

[adversary]
delay = "uniform"
fairness = 48

[crs]
master_seed = 17

[[crs.keys]]
id = "lottery"

[mvba]
stagger = 2

[mvba.inputs]
a = ["v0", "v1", "v2", "v3", "v4", "v5", "v6", "v7", "v8"]
b = ["v1", "v2", "v3", "v4", "v5", "v6", "v7", "v8", "v0"]
c = ["v2", "v3", "v4", "v5", "v6", "v7", "v8", "v0", "v1"]
d = ["v3", "v4", "v5", "v6", "v7", "v8", "v0", "v1", "v2"]
"#;

fn main() -> cobalt::Result<()> {
    let script = ScenarioScript::parse(SCRIPT)?;
    let (result, verdict) = run_checked(&script, script.seed)?;

    for line in &result.record.lines {
        if let RecordLine::Out { node, e: NodeEvent::Mvba { event, .. }, .. } = line {
            match event {
                MvbaEvent::Elected { r, v } => println!("{node} backs {v:?} in round {r}"),
                MvbaEvent::StopDecided { r, terminate } => {
                    println!("{node} stop agreement round {r}: terminate={terminate}")
                }
                _ => {}
            }
        }
    }
    for (node, state) in &result.finals {
        if let FinalState::Mvba { decided: Some((v, r)) } = state {
            println!("{node} decided {v:?} in round {r}");
        }
    }
    assert!(verdict.ok());
    Ok(())
}
