//! The adversary chooses delivery order within a fairness bound; the
//! guarantees must not care. One scenario, four scheduling policies, a
//! spread of seeds, zero invariant failures, and byte-identical replay.

use cobalt::harness::run_checked;
use cobalt::scenario::ScenarioScript;

const SCRIPT: &str = r#"
protocol = "rbc"
seed = 0
tick_budget = 400

[nodes]
names = ["a", "b", "c", "d", "e"]

[[subsets]]
members = ["a", "b", "c", "d", "e"]
t = 1
q = 4

[faults]
crashed = { e = 3 }
byzantine = { a = "equivocate" }

[adversary]
delay = "none"
fairness = 32
bias = "payload"

[rbc]
broadcaster = "a"
content = "fuzzed payload"
"#;

fn main() -> cobalt::Result<()> {
    for delay in ["none", "uniform", "lifo", "bias"] {
        let text = SCRIPT.replace("delay = \"none\"", &format!("delay = \"{delay}\""));
        let script = ScenarioScript::parse(&text)?;
        let mut ok = 0;
        for seed in 0..25 {
            let (result, verdict) = run_checked(&script, seed)?;
            assert!(verdict.ok(), "{delay}/{seed}: {:?}", verdict.failures());
            let (again, _) = run_checked(&script, seed)?;
            assert_eq!(result.record, again.record, "replay diverged");
            ok += 1;
        }
        println!("{delay:>8}: {ok}/25 seeds clean, replays identical");
    }
    Ok(())
}
