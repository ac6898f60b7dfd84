//! Democratic broadcast: echoes carry a per-node stance, so acceptance
//! doubles as a majority witness. Here e opposes the payload and the other
//! four carry it; the record shows who actually backed it.

use cobalt::harness::run_checked;
use cobalt::msg::{Payload, RbcMsg};
use cobalt::scenario::ScenarioScript;
use cobalt::simnet::RecordLine;

const SCRIPT: &str = r#"
protocol = "rbc"
seed = 3

[nodes]
names = ["a", "b", "c", "d", "e"]

[[subsets]]
members = ["a", "b", "c", "d", "e"]
t = 1
q = 4

[rbc]
broadcaster = "b"
content = "raise the batch limit"
democratic = true
oppose = ["e"]
"#;

fn main() -> cobalt::Result<()> {
    let script = ScenarioScript::parse(SCRIPT)?;
    let (result, verdict) = run_checked(&script, script.seed)?;

    let mut echoers = Vec::new();
    for line in &result.record.lines {
        if let RecordLine::Send { from, m: Payload::Rbc { msg: RbcMsg::Echo(c), .. }, .. } = line
        {
            echoers.push(format!("{from} echoed {c:?}"));
        }
    }
    echoers.sort();
    echoers.dedup();
    for e in &echoers {
        println!("{e}");
    }
    println!("dissenter e never echoes, yet cannot block the quorum");
    for check in &verdict.checks {
        println!("{} {}: {}", if check.pass { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    assert!(verdict.ok());
    Ok(())
}
