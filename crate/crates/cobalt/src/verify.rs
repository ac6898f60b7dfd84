//! Invariant checking over run records.
//!
//! Every check re-derives its claim from the scenario and the record
//! rather than trusting any machine's say-so: fault classifications come
//! from the script, pairwise linkage from the trust topology, and support
//! witnesses are recomputed from the actual sends in the record.

use crate::dabc::DabcEvent;
use crate::msg::{AmendmentId, DabcMsg, Payload, RbcMsg, Val};
use crate::scenario::{Protocol, ScenarioScript};
use crate::simnet::{FinalState, NodeEvent, RecordLine, RunResult};
use crate::topology::{linkage, FaultAssignment, FaultStatus, NodeId, TrustConfig};
use crate::Result;
use std::collections::{BTreeMap, BTreeSet};

/// One named invariant, checked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// All checks for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Verdict {
    pub checks: Vec<Check>,
}

impl Verdict {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    fn pass(&mut self, name: &str, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), pass: true, detail: detail.into() });
    }

    fn fail(&mut self, name: &str, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), pass: false, detail: detail.into() });
    }

    fn claim(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), pass, detail: detail.into() });
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let mark = if c.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!("{mark} {} {}\n", c.name, c.detail));
        }
        out
    }
}

/// The fault statuses a script declares.
pub fn fault_assignment(script: &ScenarioScript) -> FaultAssignment {
    let mut faults = FaultAssignment::new();
    for node in script.faults.crashed.keys() {
        faults.set(node.clone(), FaultStatus::Crashed);
    }
    for node in script.faults.byzantine.keys() {
        faults.set(node.clone(), FaultStatus::Byzantine);
    }
    // A view kill crashes the whole committee.
    if let Some(tx) = &script.txorder {
        for kill in &tx.kills {
            if let Some(view) = tx.views.iter().find(|v| v.id == kill.view) {
                for member in &view.members {
                    faults.set(NodeId::new(member.clone()), FaultStatus::Crashed);
                }
            }
        }
    }
    faults
}

struct Ctx<'a> {
    script: &'a ScenarioScript,
    result: &'a RunResult,
    config: TrustConfig,
    faults: FaultAssignment,
    honest: Vec<NodeId>,
    correct: Vec<NodeId>,
    /// (record index, sender, payload) for every broadcast.
    sends: Vec<(usize, &'a NodeId, &'a Payload)>,
    /// (record index, event) per node, in record order.
    outs: BTreeMap<&'a NodeId, Vec<(usize, &'a NodeEvent)>>,
}

impl<'a> Ctx<'a> {
    fn new(script: &'a ScenarioScript, result: &'a RunResult) -> Result<Ctx<'a>> {
        let config = script.trust_config()?;
        let faults = fault_assignment(script);
        // Nothing is owed to a node whose own subsets break the parameter
        // laws, so the guarantee sets exclude them along with the faulty.
        let excused = script.misconfigured_nodes();
        let honest: Vec<NodeId> = script
            .node_ids()
            .into_iter()
            .filter(|n| faults.status(n).honest() && !excused.contains(n))
            .collect();
        let correct: Vec<NodeId> = script
            .node_ids()
            .into_iter()
            .filter(|n| faults.status(n).correct() && !excused.contains(n))
            .collect();
        let mut sends = Vec::new();
        let mut outs: BTreeMap<&NodeId, Vec<(usize, &NodeEvent)>> = BTreeMap::new();
        for (i, line) in result.record.lines.iter().enumerate() {
            match line {
                RecordLine::Send { from, m, .. } => sends.push((i, from, m)),
                RecordLine::Out { node, e, .. } => outs.entry(node).or_default().push((i, e)),
                _ => {}
            }
        }
        Ok(Ctx { script, result, config, faults, honest, correct, sends, outs })
    }

    fn linked(&self, i: &NodeId, j: &NodeId) -> bool {
        linkage(&self.config, &self.faults, i, j).map(|l| l.linked).unwrap_or(false)
    }

    fn honest_pairs(&self) -> Vec<(&NodeId, &NodeId)> {
        let mut out = Vec::new();
        for (a, i) in self.honest.iter().enumerate() {
            for j in self.honest.iter().skip(a + 1) {
                out.push((i, j));
            }
        }
        out
    }
}

/// Check every invariant the protocol under test owes the run.
pub fn verify(script: &ScenarioScript, result: &RunResult) -> Result<Verdict> {
    let ctx = Ctx::new(script, result)?;
    let mut v = Verdict::default();

    // A machine fed a lawful configuration must never abort. One whose own
    // declared subsets break the parameter laws gets no such promise.
    let excused = script.misconfigured_nodes();
    let aborted: Vec<String> = result
        .outcome
        .fatals
        .iter()
        .filter(|(n, _)| !excused.contains(*n))
        .map(|(n, what)| format!("{n}: {what}"))
        .collect();
    if aborted.is_empty() {
        v.pass("no-fatal", "no soundly configured machine aborted");
    } else {
        v.fail("no-fatal", aborted.join("; "));
    }

    match script.protocol {
        Protocol::Rbc => check_rbc(&ctx, &mut v),
        Protocol::Abba => check_abba(&ctx, &mut v),
        Protocol::Mvba => check_mvba(&ctx, &mut v),
        Protocol::Dabc => check_dabc(&ctx, &mut v),
        Protocol::Txorder => check_txorder(&ctx, &mut v),
    }
    Ok(v)
}

fn check_rbc(ctx: &Ctx, v: &mut Verdict) {
    let section = ctx.script.rbc.as_ref().expect("rbc scripts carry an [rbc] section");
    let accepted: BTreeMap<&NodeId, &String> = ctx
        .result
        .finals
        .iter()
        .filter_map(|(n, f)| match f {
            FinalState::Rbc { accepted: Some(c) } => Some((n, c)),
            _ => None,
        })
        .collect();

    let mut splits = Vec::new();
    for (i, j) in ctx.honest_pairs() {
        if !ctx.linked(i, j) {
            continue;
        }
        if let (Some(ci), Some(cj)) = (accepted.get(i), accepted.get(j)) {
            if ci != cj {
                splits.push(format!("{i}={ci} vs {j}={cj}"));
            }
        }
    }
    v.claim(
        "rbc-consistency",
        splits.is_empty(),
        if splits.is_empty() {
            format!("{} linked honest pairs agree", ctx.honest_pairs().len())
        } else {
            splits.join("; ")
        },
    );

    if let Some(b) = &section.broadcaster {
        let b = NodeId::new(b.clone());
        if ctx.faults.status(&b).correct() {
            let wrong: Vec<String> = accepted
                .iter()
                .filter(|(n, c)| ctx.faults.status(n).honest() && ***c != section.content)
                .map(|(n, c)| format!("{n}={c}"))
                .collect();
            v.claim(
                "rbc-validity",
                wrong.is_empty(),
                if wrong.is_empty() {
                    "accepted contents match the honest broadcast".to_string()
                } else {
                    wrong.join("; ")
                },
            );
        }
    }

    if section.democratic {
        let mut bad = Vec::new();
        for (node, content) in &accepted {
            if !ctx.faults.status(node).honest() {
                continue;
            }
            let echoers: Vec<&NodeId> = ctx
                .sends
                .iter()
                .filter(|(_, from, m)| {
                    ctx.faults.status(from).honest()
                        && matches!(m, Payload::Rbc { msg: RbcMsg::Echo(c), .. } if c == *content)
                })
                .map(|(_, from, _)| *from)
                .collect();
            let supporters: Vec<&&NodeId> = echoers
                .iter()
                .filter(|e| !section.oppose.iter().any(|o| o == e.as_str()))
                .collect();
            if supporters.is_empty() {
                bad.push(format!("{node} accepted {content} without an honest supporting echo"));
            }
            if echoers.iter().any(|e| section.oppose.iter().any(|o| o == e.as_str())) {
                bad.push(format!("an honest opposer echoed {content}"));
            }
        }
        v.claim(
            "rbc-democracy",
            bad.is_empty(),
            if bad.is_empty() { "every acceptance has honest policy backing".into() } else { bad.join("; ") },
        );
    }
}

fn check_abba(ctx: &Ctx, v: &mut Verdict) {
    let decided: BTreeMap<&NodeId, (bool, u64)> = ctx
        .result
        .finals
        .iter()
        .filter_map(|(n, f)| match f {
            FinalState::Abba { decided: Some(d) } => Some((n, *d)),
            _ => None,
        })
        .collect();

    let missing: Vec<&NodeId> =
        ctx.correct.iter().filter(|n| !decided.contains_key(*n)).collect();
    v.claim(
        "abba-termination",
        missing.is_empty(),
        if missing.is_empty() {
            let max_round = decided.values().map(|(_, r)| *r).max().unwrap_or(0);
            format!("all correct decided, max round {max_round}")
        } else {
            format!("undecided: {missing:?}")
        },
    );

    let bits: BTreeSet<bool> = decided
        .iter()
        .filter(|(n, _)| ctx.faults.status(n).honest())
        .map(|(_, (b, _))| *b)
        .collect();
    v.claim(
        "abba-agreement",
        bits.len() <= 1,
        format!("honest decisions: {bits:?}"),
    );

    let inputs = &ctx.script.abba.as_ref().expect("abba scripts carry inputs").inputs;
    let honest_inputs: BTreeSet<bool> = inputs
        .iter()
        .filter(|(n, _)| ctx.faults.status(&NodeId::new(n.as_str())).honest())
        .map(|(_, v)| *v != 0)
        .collect();
    if honest_inputs.len() == 1 {
        let expected = *honest_inputs.iter().next().expect("nonempty");
        let wrong: Vec<String> = decided
            .iter()
            .filter(|(n, _)| ctx.faults.status(n).honest())
            .filter(|(_, (b, _))| *b != expected)
            .map(|(n, (b, _))| format!("{n}={b}"))
            .collect();
        v.claim(
            "abba-validity",
            wrong.is_empty(),
            if wrong.is_empty() {
                format!("unanimous honest input {expected} decided everywhere")
            } else {
                wrong.join("; ")
            },
        );
    } else if !honest_inputs.is_empty() {
        // Split honest inputs: any decision is valid, but it must trace to
        // an honest first-round estimate for that bit.
        let mut ok = true;
        let mut detail = String::new();
        if let Some((_, (b, _))) = decided.iter().find(|(n, _)| ctx.faults.status(n).honest()) {
            let witness = ctx.sends.iter().any(|(_, from, m)| {
                ctx.faults.status(from).honest()
                    && matches!(m, Payload::Abba { msg: crate::msg::AbbaMsg::Init { r: 0, v }, .. } if v == b)
            });
            ok = witness;
            detail = format!("decided {b} with honest round-0 witness: {witness}");
        }
        v.claim("abba-validity", ok, detail);
    }

    // A node may only reveal its share of a round's coin after pinning the
    // round's viable set, which takes strong support for viable-set claims.
    // Recompute the witness: the claims it saw (or made) before its first
    // share reveal must clear the strong threshold in every subset. Opened
    // relays are exempt: they rebroadcast a value already reconstructable
    // from other holders' tokens and disclose nothing of this node's own.
    let mut order_bad = Vec::new();
    for node in &ctx.honest {
        let es = ctx.config.subsets_of(node).to_vec();
        let mut coin_at: BTreeMap<u64, usize> = BTreeMap::new();
        for (i, from, m) in &ctx.sends {
            if *from == node {
                if let Payload::Abba {
                    msg: crate::msg::AbbaMsg::Coin { r, msg: crate::msg::CrsMsg::Share { .. } },
                    ..
                } = m
                {
                    coin_at.entry(*r).or_insert(*i);
                }
            }
        }
        for (r, at) in &coin_at {
            let mut claimants: BTreeSet<&NodeId> = BTreeSet::new();
            for (i, line) in ctx.result.record.lines.iter().enumerate() {
                if i >= *at {
                    break;
                }
                match line {
                    RecordLine::Deliver {
                        to,
                        from,
                        m: Payload::Abba { msg: crate::msg::AbbaMsg::Conf { r: cr, .. }, .. },
                        ..
                    } if to == node && cr == r => {
                        claimants.insert(from);
                    }
                    RecordLine::Send {
                        from,
                        m: Payload::Abba { msg: crate::msg::AbbaMsg::Conf { r: cr, .. }, .. },
                        ..
                    } if from == node && cr == r => {
                        claimants.insert(from);
                    }
                    _ => {}
                }
            }
            let grade = crate::topology::support_by(&es, |n| claimants.contains(n))
                .unwrap_or(crate::topology::SupportGrade::None);
            if grade < crate::topology::SupportGrade::Strong {
                order_bad.push(format!(
                    "{node} revealed its round-{r} share before strong viable-set support"
                ));
            }
        }
    }
    v.claim(
        "abba-coin-order",
        order_bad.is_empty(),
        if order_bad.is_empty() {
            "shares reveal only after viable sets pin".into()
        } else {
            order_bad.join("; ")
        },
    );
}

fn check_mvba(ctx: &Ctx, v: &mut Verdict) {
    let decided: BTreeMap<&NodeId, &(Val, u64)> = ctx
        .result
        .finals
        .iter()
        .filter_map(|(n, f)| match f {
            FinalState::Mvba { decided: Some(d) } => Some((n, d)),
            _ => None,
        })
        .collect();

    let missing: Vec<&NodeId> =
        ctx.correct.iter().filter(|n| !decided.contains_key(*n)).collect();
    v.claim(
        "mvba-termination",
        missing.is_empty(),
        if missing.is_empty() {
            let rounds: Vec<u64> = decided.values().map(|(_, r)| *r).collect();
            format!("all correct decided, rounds {rounds:?}")
        } else {
            format!("undecided: {missing:?}")
        },
    );

    let values: BTreeSet<&Val> = decided
        .iter()
        .filter(|(n, _)| ctx.faults.status(n).honest())
        .map(|(_, (val, _))| val)
        .collect();
    v.claim("mvba-agreement", values.len() <= 1, format!("honest decisions: {values:?}"));

    let valid: BTreeSet<Val> = ctx
        .script
        .mvba
        .as_ref()
        .expect("mvba scripts carry inputs")
        .inputs
        .values()
        .flatten()
        .map(|label| Val::Label(label.clone()))
        .collect();
    let invalid: Vec<String> = values
        .iter()
        .filter(|val| !valid.contains(**val))
        .map(|val| format!("{val:?}"))
        .collect();
    v.claim(
        "mvba-validity",
        invalid.is_empty(),
        if invalid.is_empty() {
            format!("decision drawn from the {} scripted inputs", valid.len())
        } else {
            format!("decided values outside the valid set: {}", invalid.join("; "))
        },
    );
}

fn check_dabc(ctx: &Ctx, v: &mut Verdict) {
    let logs: BTreeMap<&NodeId, &Vec<(u64, AmendmentId, u64)>> = ctx
        .result
        .finals
        .iter()
        .filter_map(|(n, f)| match f {
            FinalState::Dabc { ratified } => Some((n, ratified)),
            _ => None,
        })
        .collect();

    // Agreement: one (amendment, activation) per slot across honest nodes.
    let mut per_slot: BTreeMap<u64, BTreeSet<(&AmendmentId, u64)>> = BTreeMap::new();
    for (node, log) in &logs {
        if !ctx.faults.status(node).honest() {
            continue;
        }
        for (slot, id, activation) in log.iter() {
            per_slot.entry(*slot).or_default().insert((id, *activation));
        }
    }
    let splits: Vec<String> = per_slot
        .iter()
        .filter(|(_, set)| set.len() > 1)
        .map(|(slot, set)| format!("slot {slot}: {set:?}"))
        .collect();
    v.claim(
        "dabc-agreement",
        splits.is_empty(),
        if splits.is_empty() {
            format!("{} slots ratified identically", per_slot.len())
        } else {
            splits.join("; ")
        },
    );

    // Linearizability: logs of linked honest pairs are prefix-ordered.
    let mut prefix_bad = Vec::new();
    for (i, j) in ctx.honest_pairs() {
        if !ctx.linked(i, j) {
            continue;
        }
        if let (Some(li), Some(lj)) = (logs.get(i), logs.get(j)) {
            let n = li.len().min(lj.len());
            if li[..n] != lj[..n] {
                prefix_bad.push(format!("{i} and {j} diverge within their common prefix"));
            }
        }
    }
    v.claim(
        "dabc-linearizability",
        prefix_bad.is_empty(),
        if prefix_bad.is_empty() {
            "ratification logs are prefix-ordered across linked pairs".into()
        } else {
            prefix_bad.join("; ")
        },
    );

    // Democracy: every ratified amendment has an honest supporting echo,
    // and no honest opposer ever echoed it.
    let policy: BTreeMap<AmendmentId, BTreeSet<&str>> = ctx
        .script
        .proposals
        .iter()
        .map(|p| {
            let amendment = if p.kind == "allow_key" {
                crate::msg::Amendment {
                    payload: crate::msg::AmendmentPayload::AllowKey(crate::msg::KeyId(
                        p.body.clone(),
                    )),
                    slot: p.slot,
                }
            } else {
                crate::msg::Amendment {
                    payload: crate::msg::AmendmentPayload::Text(p.body.clone()),
                    slot: p.slot,
                }
            };
            (amendment.id(), p.oppose.iter().map(String::as_str).collect())
        })
        .collect();
    let mut demo_bad = Vec::new();
    let ratified_ids: BTreeSet<&AmendmentId> = logs
        .iter()
        .filter(|(n, _)| ctx.faults.status(n).honest())
        .flat_map(|(_, log)| log.iter().map(|(_, id, _)| id))
        .collect();
    for id in ratified_ids {
        let Some(opposers) = policy.get(id) else {
            demo_bad.push(format!("{id:?} ratified but never scripted"));
            continue;
        };
        let echoers: Vec<&NodeId> = ctx
            .sends
            .iter()
            .filter(|(_, from, m)| {
                ctx.faults.status(from).honest()
                    && matches!(
                        m,
                        Payload::Dabc(DabcMsg::Drbc { id: mid, msg: RbcMsg::Echo(_) }) if mid == id
                    )
            })
            .map(|(_, from, _)| *from)
            .collect();
        if !echoers.iter().any(|e| !opposers.contains(e.as_str())) {
            demo_bad.push(format!("{id:?} ratified without an honest supporting echo"));
        }
        if let Some(e) = echoers.iter().find(|e| opposers.contains(e.as_str())) {
            demo_bad.push(format!("honest opposer {e} echoed {id:?}"));
        }
    }
    v.claim(
        "dabc-democracy",
        demo_bad.is_empty(),
        if demo_bad.is_empty() {
            "every ratification carries honest policy backing".into()
        } else {
            demo_bad.join("; ")
        },
    );

    // Full knowledge: after a wait for target time returns, no later
    // ratification may activate before that target.
    let mut fk_bad = Vec::new();
    for node in &ctx.correct {
        let Some(events) = ctx.outs.get(node) else { continue };
        let completions: Vec<(usize, u64)> = events
            .iter()
            .filter_map(|(i, e)| match e {
                NodeEvent::Dabc { event: DabcEvent::WaitCompleted { target, .. } } => {
                    Some((*i, *target))
                }
                _ => None,
            })
            .collect();
        for (at, target) in completions {
            for (i, e) in events.iter() {
                if *i <= at {
                    continue;
                }
                if let NodeEvent::Dabc { event: DabcEvent::Ratified { slot, activation, .. } } = e
                {
                    if *activation < target {
                        fk_bad.push(format!(
                            "{node}: slot {slot} activating at {activation} ratified after a wait for {target} returned"
                        ));
                    }
                }
            }
        }
    }
    v.claim(
        "dabc-full-knowledge",
        fk_bad.is_empty(),
        if fk_bad.is_empty() {
            "no late ratification undercuts a completed wait".into()
        } else {
            fk_bad.join("; ")
        },
    );
}

fn check_txorder(ctx: &Ctx, v: &mut Verdict) {
    let logs: BTreeMap<&NodeId, &FinalState> = ctx.result.finals.iter().map(|(n, f)| (n, f)).collect();
    let accepted = |n: &NodeId| -> Option<&Vec<(u64, String, u64)>> {
        match logs.get(n) {
            Some(FinalState::Tx { accepted, .. }) => Some(accepted),
            _ => None,
        }
    };

    // Cross-view safety: one batch per sequence number across linked
    // honest nodes, whatever view accepted it.
    let mut splits = Vec::new();
    for (i, j) in ctx.honest_pairs() {
        if !ctx.linked(i, j) {
            continue;
        }
        let (Some(li), Some(lj)) = (accepted(i), accepted(j)) else { continue };
        let mi: BTreeMap<u64, &String> = li.iter().map(|(s, b, _)| (*s, b)).collect();
        for (s, b, _) in lj {
            if let Some(other) = mi.get(s) {
                if *other != b {
                    splits.push(format!("seq {s}: {i}={other} vs {j}={b}"));
                }
            }
        }
    }
    v.claim(
        "tx-seq-consistency",
        splits.is_empty(),
        if splits.is_empty() {
            "no sequence number carries two batches".into()
        } else {
            splits.join("; ")
        },
    );

    // Correct nodes agree on where they stand: same view, same floor.
    let mut stances: BTreeSet<(u64, u64)> = BTreeSet::new();
    for n in &ctx.correct {
        if let Some(FinalState::Tx { view, min_seq, .. }) = logs.get(n) {
            stances.insert((*view, *min_seq));
        }
    }
    v.claim(
        "tx-view-agreement",
        stances.len() <= 1,
        format!("correct (view, min_seq) stances: {stances:?}"),
    );

    // Fallback: every scripted block ratifies, in one shared order.
    let scripted: Vec<&String> = ctx
        .script
        .txorder
        .as_ref()
        .map(|t| t.fallback_proposals.iter().map(|f| &f.id).collect())
        .unwrap_or_default();
    if !scripted.is_empty() {
        let mut chains: BTreeSet<Vec<String>> = BTreeSet::new();
        let mut missing = Vec::new();
        for n in &ctx.correct {
            if let Some(FinalState::Tx { fallback, .. }) = logs.get(n) {
                chains.insert(fallback.clone());
                for id in &scripted {
                    if !fallback.contains(id) {
                        missing.push(format!("{n} never ratified {id}"));
                    }
                }
            }
        }
        v.claim(
            "tx-fallback-coverage",
            missing.is_empty(),
            if missing.is_empty() {
                format!("all {} pinned blocks ratified everywhere", scripted.len())
            } else {
                missing.join("; ")
            },
        );
        v.claim(
            "tx-fallback-order",
            chains.len() <= 1,
            format!("{} distinct fallback chains", chains.len()),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet;

    #[test]
    fn healthy_abba_run_verifies_clean() {
        let text = r#"
protocol = "abba"
tick_budget = 5000
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
inputs = { a = 0, b = 1, c = 0, d = 1 }
"#;
        let script = ScenarioScript::parse(text).unwrap();
        let result = simnet::run(&script).unwrap();
        let verdict = verify(&script, &result).unwrap();
        assert!(verdict.ok(), "{}", verdict.render());
        assert!(verdict.checks.iter().any(|c| c.name == "abba-agreement"));
        assert!(verdict.checks.iter().any(|c| c.name == "abba-coin-order"));
    }

    #[test]
    fn adversarial_dabc_run_verifies_clean() {
        let text = r#"
protocol = "dabc"
tick_budget = 4000
[nodes]
names = ["a", "b", "c", "d"]
[[subsets]]
members = ["a", "b", "c", "d"]
t = 1
q = 3
[faults]
byzantine = { d = "equivocate" }
[adversary]
delay = "uniform"
[crs]
[[crs.keys]]
id = "genesis"
[[proposals]]
body = "raise-reserve"
slot = 0
proposer = "a"
"#;
        let script = ScenarioScript::parse(text).unwrap();
        let result = simnet::run(&script).unwrap();
        let verdict = verify(&script, &result).unwrap();
        assert!(verdict.ok(), "{}", verdict.render());
        let names: Vec<&str> = verdict.checks.iter().map(|c| c.name.as_str()).collect();
        for expected in
            ["dabc-agreement", "dabc-linearizability", "dabc-democracy", "dabc-full-knowledge"]
        {
            assert!(names.contains(&expected), "missing {expected}");
        }
    }

    #[test]
    fn doctored_record_fails_agreement() {
        let text = r#"
protocol = "abba"
tick_budget = 5000
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
inputs = { a = 0, b = 1, c = 0, d = 1 }
"#;
        let script = ScenarioScript::parse(text).unwrap();
        let mut result = simnet::run(&script).unwrap();
        let flipped = match result.finals.values().next().unwrap() {
            FinalState::Abba { decided: Some((b, r)) } => FinalState::Abba { decided: Some((!b, *r)) },
            _ => panic!("abba final expected"),
        };
        *result.finals.values_mut().next().unwrap() = flipped;
        let verdict = verify(&script, &result).unwrap();
        assert!(!verdict.ok());
        assert!(verdict.failures().iter().any(|c| c.name == "abba-agreement"));
    }
}
