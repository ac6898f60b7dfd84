//! Brute-force oracles for the counting laws the stack rests on.
//!
//! Each oracle re-derives a claim by exhaustive enumeration at small sizes
//! and reports every counterexample it finds. The protocol machines never
//! participate: the point is an independent check of the arithmetic the
//! machines trust.

use crate::msg::RbcMsg;
use crate::rbc::{RbcInstance, RbcMode};
use crate::topology::{validate_subset, EssentialSubset, NodeId, ParamViolation};
use crate::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;

/// Outcome of one oracle sweep.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    /// Cases enumerated.
    pub cases: u64,
    /// Human-readable descriptions of every violation found.
    pub counterexamples: Vec<String>,
    /// Extra context: bounds, caps, tightness notes.
    pub detail: String,
}

impl OracleReport {
    pub fn pass(&self) -> bool {
        self.counterexamples.is_empty()
    }

    pub fn render(&self) -> String {
        let mark = if self.pass() { "PASS" } else { "FAIL" };
        let mut out = format!("{mark} {} cases={} {}\n", self.name, self.cases, self.detail);
        for c in self.counterexamples.iter().take(10) {
            out.push_str(&format!("  counterexample: {c}\n"));
        }
        if self.counterexamples.len() > 10 {
            out.push_str(&format!("  ... {} more\n", self.counterexamples.len() - 10));
        }
        out
    }
}

/// Compare the unsigned-arithmetic parameter validation against a direct
/// signed evaluation of the two structural laws, for every shape up to
/// `max_n` with `t` and `q` ranging past the bounds.
pub fn params_oracle(max_n: usize) -> OracleReport {
    let mut cases = 0u64;
    let mut counterexamples = Vec::new();
    for n in 0..=max_n {
        for t in 0..=n + 2 {
            for q in 0..=n + 2 {
                cases += 1;
                let got: BTreeSet<String> =
                    validate_subset(n, t, q).iter().map(|v| format!("{v:?}")).collect();
                let mut want = BTreeSet::new();
                let (ni, ti, qi) = (n as i64, t as i64, q as i64);
                if ti > ni || qi > ni {
                    want.insert(format!("{:?}", ParamViolation::BoundsExceeded));
                }
                if !(ti < 2 * qi - ni) {
                    want.insert(format!("{:?}", ParamViolation::QuorumOverlapTooSmall));
                }
                if !(2 * ti < qi) {
                    want.insert(format!("{:?}", ParamViolation::QuorumWithinFaults));
                }
                if got != want {
                    counterexamples
                        .push(format!("n={n} t={t} q={q}: got {got:?}, direct law says {want:?}"));
                }
            }
        }
    }
    OracleReport {
        name: "params".into(),
        cases,
        counterexamples,
        detail: format!("shapes up to n={max_n}, t and q ranging to n+2"),
    }
}

/// Every member takes one role in an enumeration of a support round.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    /// Honest, sent the first claim.
    H1,
    /// Honest, sent the second claim.
    H2,
    /// Honest, sent nothing.
    Quiet,
    /// Faulty: counts toward any claim it likes.
    Byz,
}

fn role_vectors(n: usize) -> impl Iterator<Item = Vec<Role>> {
    let total = 4usize.pow(n as u32);
    (0..total).map(move |mut code| {
        (0..n)
            .map(|_| {
                let role = match code % 4 {
                    0 => Role::H1,
                    1 => Role::H2,
                    2 => Role::Quiet,
                    _ => Role::Byz,
                };
                code /= 4;
                role
            })
            .collect()
    })
}

/// Weak support: `t + 1` matching senders within a subset holding at most
/// `t` faulty members always include an honest one. Also confirms the
/// threshold is tight: `t` matching senders can be faulty in their
/// entirety.
pub fn weak_support_oracle(max_n: usize) -> OracleReport {
    let mut cases = 0u64;
    let mut counterexamples = Vec::new();
    let mut tight = true;
    for n in 1..=max_n {
        for t in 0..n {
            let mut forged_at_t = false;
            for roles in role_vectors(n) {
                let byz = roles.iter().filter(|r| **r == Role::Byz).count();
                if byz > t {
                    continue;
                }
                cases += 1;
                // Claimed senders: every H1 plus every faulty member.
                let senders = roles.iter().filter(|r| **r == Role::H1).count() + byz;
                let honest = roles.iter().filter(|r| **r == Role::H1).count();
                if senders >= t + 1 && honest == 0 {
                    counterexamples
                        .push(format!("n={n} t={t}: {senders} senders, none honest"));
                }
                if senders == t && honest == 0 && senders > 0 {
                    forged_at_t = true;
                }
            }
            if t > 0 && !forged_at_t {
                tight = false;
            }
        }
    }
    OracleReport {
        name: "weak-support".into(),
        cases,
        counterexamples,
        detail: format!(
            "subsets up to n={max_n}, every role assignment; threshold tight: {tight}"
        ),
    }
}

/// Strong support: two contradictory claims cannot both gather `q` senders
/// within one subset when at most `t` members are faulty and `t < 2q - n`.
/// Also confirms the law is tight: every shape failing only the overlap
/// constraint admits a split.
pub fn strong_support_oracle(max_n: usize) -> OracleReport {
    let mut cases = 0u64;
    let mut counterexamples = Vec::new();
    let mut slack_shapes = 0u64;
    let mut slack_split = 0u64;
    for n in 1..=max_n {
        for t in 0..=n {
            for q in 1..=n {
                let violations = validate_subset(n, t, q);
                let valid = violations.is_empty();
                let only_overlap =
                    violations == vec![ParamViolation::QuorumOverlapTooSmall];
                if only_overlap {
                    slack_shapes += 1;
                }
                let mut split_found = false;
                for roles in role_vectors(n) {
                    let byz = roles.iter().filter(|r| **r == Role::Byz).count();
                    if byz > t {
                        continue;
                    }
                    cases += 1;
                    let h1 = roles.iter().filter(|r| **r == Role::H1).count();
                    let h2 = roles.iter().filter(|r| **r == Role::H2).count();
                    let support1 = h1 + byz;
                    let support2 = h2 + byz;
                    if support1 >= q && support2 >= q {
                        split_found = true;
                        if valid {
                            counterexamples.push(format!(
                                "n={n} t={t} q={q}: h1={h1} h2={h2} byz={byz} backs both claims"
                            ));
                        }
                    }
                }
                if only_overlap && split_found {
                    slack_split += 1;
                }
            }
        }
    }
    OracleReport {
        name: "strong-support".into(),
        cases,
        counterexamples,
        detail: format!(
            "subsets up to n={max_n}; {slack_split}/{slack_shapes} overlap-violating shapes admit a split"
        ),
    }
}

/// The closed-form overlap requirement between two flat quorum lists never
/// declares a pair linked that a direct split-brain enumeration can break.
pub fn quorum_overlap_oracle(max_n: usize) -> OracleReport {
    let mut cases = 0u64;
    let mut counterexamples = Vec::new();
    for n_i in 1..=max_n {
        for q_i in 1..=n_i {
            for n_j in 1..=max_n {
                for q_j in 1..=n_j {
                    for o in 0..=n_i.min(n_j) {
                        cases += 1;
                        let linked =
                            crate::topology::quorum_model_linked(n_i, q_i, n_j, q_j, o)
                                .expect("shapes in range");
                        if !linked {
                            continue;
                        }
                        // Direct search: faulty overlap members back both
                        // sides, honest overlap splits, private members all
                        // back their own side.
                        let f_i = n_i - q_i;
                        let f_j = n_j - q_j;
                        let split_possible = (0..=f_i.min(f_j).min(o)).any(|b| {
                            let need1 = q_i.saturating_sub(n_i - o) .saturating_sub(b);
                            let need2 = q_j.saturating_sub(n_j - o).saturating_sub(b);
                            need1 + need2 <= o - b
                        });
                        if split_possible {
                            counterexamples.push(format!(
                                "n_i={n_i} q_i={q_i} n_j={n_j} q_j={q_j} overlap={o}: declared linked but splittable"
                            ));
                        }
                    }
                }
            }
        }
    }
    OracleReport {
        name: "quorum-overlap".into(),
        cases,
        counterexamples,
        detail: format!("list pairs up to n={max_n}"),
    }
}

type Pending = BTreeSet<(NodeId, NodeId, RbcMsg<String>)>;

#[derive(Clone)]
struct RbcState {
    machines: Vec<RbcInstance<String>>,
    pending: Pending,
}

impl RbcState {
    fn key(&self) -> [u8; 16] {
        let mut hasher = Sha256::new();
        hasher.update(format!("{:?}|{:?}", self.machines, self.pending).as_bytes());
        let digest = hasher.finalize();
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        out
    }
}

/// Exhaustively explore delivery schedules for a four-node broadcast with
/// an equivocating broadcaster, up to a state cap, asserting that no
/// schedule ever drives two correct nodes to accept different contents.
pub fn rbc_schedule_oracle(max_states: usize) -> OracleReport {
    let names = ["b", "c", "d"];
    let broadcaster = NodeId::new("a");
    let es = vec![EssentialSubset::new(["a", "b", "c", "d"], 1, 3)];
    let build = |split: &[(&str, &str)]| -> RbcState {
        let machines: Vec<RbcInstance<String>> = names
            .iter()
            .map(|n| {
                RbcInstance::new(
                    NodeId::new(*n),
                    es.clone(),
                    RbcMode::Plain,
                    Some(broadcaster.clone()),
                )
            })
            .collect();
        let pending: Pending = split
            .iter()
            .map(|(to, content)| {
                (broadcaster.clone(), NodeId::new(*to), RbcMsg::Init(content.to_string()))
            })
            .collect();
        RbcState { machines, pending }
    };
    let roots = vec![
        build(&[("b", "left"), ("c", "right"), ("d", "right")]),
        build(&[("b", "left"), ("c", "left"), ("d", "right")]),
    ];

    let mut visited: BTreeSet<[u8; 16]> = BTreeSet::new();
    let mut stack = roots;
    let mut counterexamples = Vec::new();
    let mut cases = 0u64;
    while let Some(state) = stack.pop() {
        if visited.len() >= max_states || !counterexamples.is_empty() {
            break;
        }
        if !visited.insert(state.key()) {
            continue;
        }
        for choice in state.pending.iter().cloned().collect::<Vec<_>>() {
            cases += 1;
            let mut next = state.clone();
            next.pending.remove(&choice);
            let (from, to, msg) = choice;
            let index = names.iter().position(|n| *n == to.as_str()).expect("known node");
            let step = next.machines[index].handle(&from, msg);
            for out in step.out {
                for peer in names.iter().filter(|p| **p != to.as_str()) {
                    next.pending.insert((to.clone(), NodeId::new(*peer), out.clone()));
                }
            }
            let accepted: BTreeSet<&String> =
                next.machines.iter().filter_map(|m| m.accepted()).collect();
            if accepted.len() > 1 {
                counterexamples.push(format!(
                    "schedule split acceptance: {accepted:?} after delivering to {to}"
                ));
            }
            stack.push(next);
        }
    }
    OracleReport {
        name: "rbc-schedules".into(),
        cases,
        counterexamples,
        detail: format!(
            "{} states explored (cap {max_states}), equivocating broadcaster, n=4 t=1 q=3",
            visited.len()
        ),
    }
}

/// Run oracles by name: `params`, `support`, `overlap`, `rbc`, or `all`.
pub fn run_oracle(name: &str) -> Result<Vec<OracleReport>> {
    match name {
        "params" => Ok(vec![params_oracle(12)]),
        "support" => Ok(vec![weak_support_oracle(7), strong_support_oracle(7)]),
        "overlap" => Ok(vec![quorum_overlap_oracle(9)]),
        "rbc" => Ok(vec![rbc_schedule_oracle(60_000)]),
        "all" => Ok(vec![
            params_oracle(12),
            weak_support_oracle(7),
            strong_support_oracle(7),
            quorum_overlap_oracle(9),
            rbc_schedule_oracle(60_000),
        ]),
        other => Err(Error::Config(format!(
            "unknown oracle {other}; expected params, support, overlap, rbc, or all"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_match_direct_laws() {
        let report = params_oracle(12);
        assert!(report.pass(), "{}", report.render());
        assert!(report.cases > 1000);
    }

    #[test]
    fn weak_support_always_includes_an_honest_sender() {
        let report = weak_support_oracle(6);
        assert!(report.pass(), "{}", report.render());
        assert!(report.detail.contains("tight: true"), "{}", report.detail);
    }

    #[test]
    fn strong_support_never_splits_on_valid_shapes() {
        let report = strong_support_oracle(6);
        assert!(report.pass(), "{}", report.render());
    }

    #[test]
    fn overlap_formula_is_sound() {
        let report = quorum_overlap_oracle(7);
        assert!(report.pass(), "{}", report.render());
    }

    #[test]
    fn rbc_schedules_never_split_acceptance() {
        let report = rbc_schedule_oracle(8_000);
        assert!(report.pass(), "{}", report.render());
        assert!(report.cases > 1_000);
    }
}
