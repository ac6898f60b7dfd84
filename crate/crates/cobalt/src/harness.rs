//! Run orchestration: topology analysis, single runs, parallel seed
//! sweeps, and randomness-predictability trials.

use crate::crs::{
    expand_bit, reference_output, view_reconstructs_all, AdversaryView, CrsOracle, KeySpec,
};
use crate::msg::digest;
use crate::scenario::ScenarioScript;
use crate::simnet::{self, FinalState, RunResult};
use crate::topology::{classify, connectivity, linkage, quorum_model_linked, NodeId};
use crate::verify::{self, fault_assignment, Verdict};
use crate::Result;
use rayon::prelude::*;

/// Everything `analyze` derives from a config.
#[derive(Debug, Clone)]
pub struct AnalyzeReport {
    pub text: String,
    /// All structural checks and linkage expectations hold.
    pub clean: bool,
}

/// Validate a script's topology and report classification, linkage,
/// connectivity, and flat-list overlap checks under its declared faults.
pub fn analyze(script: &ScenarioScript) -> Result<AnalyzeReport> {
    let config = script.trust_config()?;
    let faults = fault_assignment(script);
    let mut text = String::new();
    let mut clean = true;

    let mut broken = 0usize;
    let mut subset_lines = String::new();
    for node in config.nodes() {
        for s in config.subsets_of(node) {
            subset_lines.push_str(&format!(
                "  {node}: n={} t={} q={} members={:?}",
                s.n(),
                s.t,
                s.q,
                s.members.iter().map(|m| m.as_str()).collect::<Vec<_>>()
            ));
            let bad = crate::topology::validate_subset(s.n(), s.t, s.q);
            if !bad.is_empty() {
                broken += 1;
                clean = false;
                let tags: Vec<String> = bad.iter().map(|v| format!("{v}")).collect();
                subset_lines.push_str(&format!(" BROKEN: {}", tags.join(", ")));
            }
            subset_lines.push('\n');
        }
    }
    text.push_str(&format!(
        "protocol: {}\nnodes: {}\nvalidation: {}\n",
        script.protocol,
        config.node_count(),
        if broken == 0 {
            "ok".to_string()
        } else {
            format!("{broken} declared subset(s) break the parameter laws")
        }
    ));
    text.push_str("subsets:\n");
    text.push_str(&subset_lines);

    let classes = classify(&config, &faults)?;
    text.push_str("classification:\n");
    for (node, c) in &classes {
        text.push_str(&format!(
            "  {node}: {:?} healthy={} unblocked={}\n",
            c.status, c.healthy, c.unblocked
        ));
    }

    let nodes: Vec<&NodeId> = config.nodes().collect();
    text.push_str("linkage:\n");
    for (i, a) in nodes.iter().enumerate() {
        for b in nodes.iter().skip(i + 1) {
            let l = linkage(&config, &faults, a, b)?;
            text.push_str(&format!(
                "  {a}-{b}: linked={} fully={}\n",
                l.linked, l.fully_linked
            ));
            if classes[*a].healthy && classes[*b].healthy && !l.linked {
                clean = false;
            }
        }
    }

    text.push_str("connectivity:\n");
    for node in &nodes {
        let c = connectivity(&config, &faults, node)?;
        text.push_str(&format!("  {node}: strong={} weak={}\n", c.strongly, c.weakly));
    }

    // Treat each declared subset as a flat quorum list and cross-check the
    // closed-form overlap requirement.
    let mut shapes: Vec<&crate::topology::EssentialSubset> = Vec::new();
    for node in &nodes {
        for s in config.subsets_of(node) {
            if !shapes.contains(&s) {
                shapes.push(s);
            }
        }
    }
    text.push_str("flat-list overlap:\n");
    for (i, a) in shapes.iter().enumerate() {
        for b in shapes.iter().skip(i) {
            let overlap = a.members.intersection(&b.members).count();
            let verdict = match quorum_model_linked(a.n(), a.q, b.n(), b.q, overlap) {
                Ok(ok) => format!("linked={ok}"),
                Err(_) => "linked=n/a (parameters out of range)".to_string(),
            };
            text.push_str(&format!(
                "  [n={} q={}] x [n={} q={}] overlap={overlap}: {verdict}\n",
                a.n(),
                a.q,
                b.n(),
                b.q
            ));
        }
    }

    Ok(AnalyzeReport { text, clean })
}

/// Run one seed and check every invariant.
pub fn run_checked(script: &ScenarioScript, seed: u64) -> Result<(RunResult, Verdict)> {
    let result = simnet::run_with_seed(script, seed)?;
    let verdict = verify::verify(script, &result)?;
    Ok((result, verdict))
}

/// One seed's contribution to a sweep.
#[derive(Debug, Clone)]
pub struct SweepItem {
    pub seed: u64,
    pub terminated: bool,
    pub goal: bool,
    pub delivered: u64,
    /// Highest decision round among correct nodes, where the protocol has
    /// rounds to count.
    pub max_round: Option<u64>,
    pub verdict_ok: bool,
    pub failures: Vec<String>,
}

/// Aggregate of a seed range, ordered by seed regardless of which finished
/// first.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub items: Vec<SweepItem>,
}

impl SweepReport {
    pub fn runs(&self) -> u64 {
        self.items.len() as u64
    }

    pub fn all_ok(&self) -> bool {
        self.items.iter().all(|i| i.verdict_ok)
    }

    pub fn all_terminated(&self) -> bool {
        self.items.iter().all(|i| i.terminated)
    }

    pub fn goal_rate(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        self.items.iter().filter(|i| i.goal).count() as f64 / self.items.len() as f64
    }

    pub fn mean_round(&self) -> Option<f64> {
        let rounds: Vec<u64> = self.items.iter().filter_map(|i| i.max_round).collect();
        if rounds.is_empty() {
            return None;
        }
        Some(rounds.iter().sum::<u64>() as f64 / rounds.len() as f64)
    }

    pub fn max_round(&self) -> Option<u64> {
        self.items.iter().filter_map(|i| i.max_round).max()
    }

    pub fn mean_delivered(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        self.items.iter().map(|i| i.delivered).sum::<u64>() as f64 / self.items.len() as f64
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "runs={} ok={} terminated={} goal_rate={:.3} mean_delivered={:.1}\n",
            self.runs(),
            self.all_ok(),
            self.all_terminated(),
            self.goal_rate(),
            self.mean_delivered()
        );
        if let Some(mean) = self.mean_round() {
            out.push_str(&format!(
                "mean_round={:.3} max_round={}\n",
                mean,
                self.max_round().unwrap_or(0)
            ));
        }
        for item in self.items.iter().filter(|i| !i.verdict_ok) {
            out.push_str(&format!("seed {}: {}\n", item.seed, item.failures.join("; ")));
        }
        out
    }
}

fn round_of(script: &ScenarioScript, result: &RunResult) -> Option<u64> {
    let correct = script.correct_nodes();
    let rounds: Vec<u64> = result
        .finals
        .iter()
        .filter(|(n, _)| correct.contains(n))
        .filter_map(|(_, f)| match f {
            // Rounds as the machines count them: binary agreement from 0,
            // multi-valued election rounds from 1.
            FinalState::Abba { decided } => decided.map(|(_, r)| r),
            FinalState::Mvba { decided } => decided.as_ref().map(|(_, r)| *r),
            _ => None,
        })
        .collect();
    rounds.into_iter().max()
}

/// Run every seed in the range in parallel and aggregate. Results are
/// sorted by seed, so the report does not depend on scheduling.
pub fn sweep(script: &ScenarioScript, seeds: std::ops::Range<u64>) -> Result<SweepReport> {
    let mut items = seeds
        .collect::<Vec<u64>>()
        .into_par_iter()
        .map(|seed| {
            let (result, verdict) = run_checked(script, seed)?;
            Ok(SweepItem {
                seed,
                terminated: result.outcome.terminated,
                goal: result.outcome.goal,
                delivered: result.outcome.delivered,
                max_round: round_of(script, &result),
                verdict_ok: verdict.ok(),
                failures: verdict
                    .failures()
                    .iter()
                    .map(|c| format!("{}: {}", c.name, c.detail))
                    .collect(),
            })
        })
        .collect::<Result<Vec<SweepItem>>>()?;
    items.sort_by_key(|i| i.seed);
    Ok(SweepReport { items })
}

/// Outcome of a predictability trial series against one key.
#[derive(Debug, Clone)]
pub struct CrsTrialReport {
    pub trials: u64,
    pub leaked: usize,
    /// The leaked material suffices to reconstruct every output exactly.
    pub reconstructable: bool,
    pub successes: u64,
}

impl CrsTrialReport {
    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        self.successes as f64 / self.trials as f64
    }

    pub fn render(&self) -> String {
        format!(
            "trials={} leaked={} reconstructable={} rate={:.4}\n",
            self.trials,
            self.leaked,
            self.reconstructable,
            self.rate()
        )
    }
}

/// Let an adversary holding `leaked` share tokens predict the binary
/// output of fresh tags. Below the reconstruction threshold the guesses
/// are uncorrelated with the truth; at or above it they are exact.
pub fn crs_trials(master_seed: u64, spec: &KeySpec, leaked: usize, trials: u64) -> CrsTrialReport {
    let oracle = CrsOracle::new(master_seed);
    let registry = vec![spec.clone()];
    let holders: Vec<NodeId> = spec.holder_nodes().into_iter().collect();
    let leaked_holders = &holders[..leaked.min(holders.len())];
    let mut successes = 0u64;
    for i in 0..trials {
        let tag = format!("trial/{i}");
        let truth = expand_bit(reference_output(&oracle, &registry, &tag));
        let mut view = AdversaryView::default();
        for h in leaked_holders {
            view.saw_share(&spec.id, h);
        }
        let reconstructable = view_reconstructs_all(&registry, &view);
        let guess = if reconstructable {
            truth
        } else {
            // Best effort from visible material: hash what leaked.
            let mut parts: Vec<Vec<u8>> = vec![tag.as_bytes().to_vec()];
            for h in leaked_holders {
                parts.push(oracle.share_token(&spec.id, &tag, h).0.to_vec());
            }
            let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
            digest(&refs)[0] & 1 == 1
        };
        if guess == truth {
            successes += 1;
        }
    }
    let mut view = AdversaryView::default();
    for h in leaked_holders {
        view.saw_share(&spec.id, h);
    }
    CrsTrialReport {
        trials,
        leaked,
        reconstructable: view_reconstructs_all(&registry, &view),
        successes,
    }
}

/// Mean of a sample; empty samples count as zero.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::EssentialSubset;

    fn flat_key() -> KeySpec {
        KeySpec {
            id: crate::msg::KeyId::new("k0"),
            holders: vec![EssentialSubset::new(["a", "b", "c", "d"], 1, 3)],
        }
    }

    #[test]
    fn analyze_reports_a_clean_flat_topology() {
        let script = ScenarioScript::parse(
            r#"
protocol = "abba"
[nodes]
names = ["a", "b", "c", "d"]
[[subsets]]
members = ["a", "b", "c", "d"]
t = 1
q = 3
[crs]
[[crs.keys]]
id = "k0"
[abba]
inputs = { a = 1, b = 1, c = 1, d = 1 }
"#,
        )
        .unwrap();
        let report = analyze(&script).unwrap();
        assert!(report.clean, "{}", report.text);
        assert!(report.text.contains("linked=true"));
        assert!(report.text.contains("classification"));
    }

    #[test]
    fn sweep_aggregates_sorted_by_seed() {
        let script = ScenarioScript::parse(
            r#"
protocol = "abba"
tick_budget = 5000
[nodes]
names = ["a", "b", "c", "d"]
[[subsets]]
members = ["a", "b", "c", "d"]
t = 1
q = 3
[adversary]
delay = "uniform"
[crs]
[[crs.keys]]
id = "k0"
[abba]
inputs = { a = 0, b = 1, c = 0, d = 1 }
"#,
        )
        .unwrap();
        let report = sweep(&script, 0..16).unwrap();
        assert_eq!(report.runs(), 16);
        assert!(report.all_ok(), "{}", report.render());
        assert!(report.all_terminated());
        let seeds: Vec<u64> = report.items.iter().map(|i| i.seed).collect();
        assert_eq!(seeds, (0..16).collect::<Vec<u64>>());
        assert!(report.mean_round().expect("rounds counted") >= 1.0);
    }

    #[test]
    fn leaked_minority_of_shares_predicts_nothing() {
        let report = crs_trials(11, &flat_key(), 1, 400);
        assert!(!report.reconstructable);
        let rate = report.rate();
        assert!((0.40..=0.60).contains(&rate), "rate {rate}");
    }

    #[test]
    fn leaked_quorum_of_shares_predicts_everything() {
        let report = crs_trials(11, &flat_key(), 2, 100);
        assert!(report.reconstructable);
        assert_eq!(report.rate(), 1.0);
    }
}
