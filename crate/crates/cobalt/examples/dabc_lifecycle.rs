//! A full governance pass: two texts compete for slot 0 while a key
//! admission lands in slot 1, one node dissents, and a waiting query must
//! resolve before anything activates. The trace follows an amendment from
//! proposal through dissemination, stamping, agreement, and ratification.

use cobalt::dabc::DabcEvent;
use cobalt::harness::run_checked;
use cobalt::scenario::ScenarioScript;
use cobalt::simnet::{NodeEvent, RecordLine};

const SCRIPT: &str = r#"
protocol = "dabc"
seed = 9

[nodes]
names = ["a", "b", "c", "d"]

[[subsets]]
members = ["a", "b", "c", "d"]
t = 1
q = 3

[adversary]
delay = "lifo"
fairness = 64

[time]
tick_interval = 10
advance = 20

[crs]
master_seed = 31

[[crs.keys]]
id = "genesis"
bootstrap = true

[[proposals]]
kind = "text"
body = "halve the stamp interval"
slot = 0
proposer = "a"
at_tick = 0
oppose = ["d"]

[[proposals]]
kind = "text"
body = "double the batch budget"
slot = 0
proposer = "b"
at_tick = 1

[[proposals]]
kind = "allow_key"
body = "committee-2026"
slot = 1
proposer = "c"
at_tick = 12

[[waits]]
node = "b"
target = 40
at_tick = 2
"#;

fn main() -> cobalt::Result<()> {
    let script = ScenarioScript::parse(SCRIPT)?;
    let (result, verdict) = run_checked(&script, script.seed)?;

    for line in &result.record.lines {
        let RecordLine::Out { node, e: NodeEvent::Dabc { event }, t, .. } = line else {
            continue;
        };
        match event {
            DabcEvent::Proposed { id, slot } => {
                println!("t={t:<3} {node} proposes {id:?} for slot {slot}")
            }
            DabcEvent::SlotDecided { slot, id, activation, rounds } => println!(
                "t={t:<3} {node} slot {slot} settles on {id:?} (activation {activation}, {rounds} rounds)"
            ),
            DabcEvent::Ratified { slot, id, activation } => {
                println!("t={t:<3} {node} ratifies {id:?} at slot {slot}, law from {activation}")
            }
            DabcEvent::KeyRegistered { key, slot } => {
                println!("t={t:<3} {node} admits key {key:?} via slot {slot}")
            }
            DabcEvent::WaitCompleted { target, ratified } => {
                println!("t={t:<3} {node} knows everything ratified before {target}: {ratified:?}")
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
