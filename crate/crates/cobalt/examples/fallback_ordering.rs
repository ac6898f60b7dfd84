//! When the view list runs out, ordering falls back to a chain that
//! cannot censor: every pinned block must be ratified, in one agreed
//! order, before the chain moves on.

use cobalt::harness::run_checked;
use cobalt::scenario::ScenarioScript;
use cobalt::simnet::{NodeEvent, RecordLine};
use cobalt::txorder::TxEvent;

const SCRIPT: &str = r#"
protocol = "txorder"
seed = 6

[nodes]
names = ["a", "b", "c", "d"]

[[subsets]]
members = ["a", "b", "c", "d"]
t = 1
q = 3

[adversary]
delay = "uniform"
fairness = 64

[crs]
master_seed = 37

[[crs.keys]]
id = "fallback"

[[txorder.views]]
id = 1
members = ["a", "b", "c", "d"]
t = 1

[[txorder.blocks]]
view = 1
seq = 0
batch = "ordinary batch"
at_tick = 0

[[txorder.change_requests]]
at_tick = 8

[[txorder.fallback_proposals]]
id = "fb-batch-a"
proposer = "a"
at_tick = 14

[[txorder.fallback_proposals]]
id = "fb-batch-b"
proposer = "b"
at_tick = 15
"#;

fn main() -> cobalt::Result<()> {
    let script = ScenarioScript::parse(SCRIPT)?;
    let (result, verdict) = run_checked(&script, script.seed)?;

    for line in &result.record.lines {
        let RecordLine::Out { node, e: NodeEvent::Tx { event }, t, .. } = line else {
            continue;
        };
        match event {
            TxEvent::FallbackEngaged => println!("t={t:<3} {node} engages the fallback chain"),
            TxEvent::BlockPinned { id } => println!("t={t:<3} {node} pins {id}"),
            TxEvent::FallbackRatified { pos, id } => {
                println!("t={t:<3} {node} ratifies {id} at position {pos}")
            }
            _ => {}
        }
    }
    println!();
    for check in &verdict.checks {
        println!("{} {}: {}", if check.pass { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    assert!(verdict.ok());
    Ok(())
}
