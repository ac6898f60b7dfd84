//! Binary agreement from a worst-case 2-2 input split. No estimate has
//! initial support, so rounds hinge on the shared coin; the sweep shows
//! decisions landing on both sides while every run stays in agreement.

use cobalt::harness::sweep;
use cobalt::scenario::ScenarioScript;

const SCRIPT: &str = r#"
protocol = "abba"
seed = 2
tick_budget = 4000

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
master_seed = 11

[[crs.keys]]
id = "coin"

[abba.inputs]
a = 1
b = 1
c = 0
d = 0
"#;

fn main() -> cobalt::Result<()> {
    let script = ScenarioScript::parse(SCRIPT)?;
    let report = sweep(&script, 0..40)?;
    for item in report.items.iter().take(10) {
        println!(
            "seed {:>2}: terminated={} rounds={:?} delivered={}",
            item.seed, item.terminated, item.max_round, item.delivered
        );
    }
    println!("...");
    println!("{}", report.render());
    assert!(report.all_ok());
    Ok(())
}
