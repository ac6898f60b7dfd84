//! Coordinated failover. A small outside committee orders the first two
//! blocks and then dies wholesale; the trusting core locks the dead view,
//! agrees on where it ended, and carries on ordering in the next one.

use cobalt::harness::run_checked;
use cobalt::scenario::ScenarioScript;
use cobalt::simnet::{NodeEvent, RecordLine};
use cobalt::txorder::TxEvent;

const SCRIPT: &str = r#"
protocol = "txorder"
seed = 4

[nodes]
names = ["a", "b", "c", "d", "e", "f"]

[[subsets]]
members = ["a", "b", "c", "d"]
t = 1
q = 3

[adversary]
delay = "uniform"
fairness = 64

[crs]
master_seed = 13

[[crs.keys]]
id = "views"
members = ["a", "b", "c", "d"]

[[txorder.views]]
id = 1
members = ["e", "f"]
t = 0

[[txorder.views]]
id = 2
members = ["a", "b", "c", "d"]
t = 1

[[txorder.blocks]]
view = 1
seq = 0
batch = "tx batch zero"
at_tick = 0

[[txorder.blocks]]
view = 1
seq = 1
batch = "tx batch one"
at_tick = 2

[[txorder.kills]]
view = 1
at_tick = 10

[[txorder.change_requests]]
at_tick = 11

[[txorder.blocks]]
view = 2
seq = 2
batch = "tx batch two"
at_tick = 60
"#;

fn main() -> cobalt::Result<()> {
    let script = ScenarioScript::parse(SCRIPT)?;
    let (result, verdict) = run_checked(&script, script.seed)?;

    for line in &result.record.lines {
        let RecordLine::Out { node, e: NodeEvent::Tx { event }, t, .. } = line else {
            continue;
        };
        match event {
            TxEvent::BlockAccepted { view, seq, batch } => {
                println!("t={t:<3} {node} accepts view {view} seq {seq}: {batch:?}")
            }
            TxEvent::Locked { current, target, highest } => {
                println!("t={t:<3} {node} locks view {current} campaigning for {target} (highest {highest:?})")
            }
            TxEvent::ViewAdopted { view, start } => {
                println!("t={t:<3} {node} adopts view {view} starting at seq {start}")
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
