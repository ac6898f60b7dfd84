//! Trust topology: essential subsets, parameter validation, fault
//! classification, pairwise linkage, and support thresholds.
//!
//! Every node declares a collection of *essential subsets*: groups of nodes
//! it insists on hearing from, each with a tolerated-fault bound `t` and a
//! quorum size `q`. All message counting in the protocol layers reduces to
//! two questions answered here: does a message have *weak* support (`t+1`
//! senders inside some subset, so at least one honest sender) or *strong*
//! support (`q` senders inside every subset)?

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Opaque node identifier. Ordered so that iteration over node sets is
/// deterministic everywhere.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(s: impl Into<String>) -> Self {
        NodeId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n:{}", self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// A group of nodes with a fault bound `t` and quorum size `q`.
///
/// Two subsets are the same subset only if members *and* parameters match;
/// a shared subset between two nodes means both declare it identically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EssentialSubset {
    pub members: BTreeSet<NodeId>,
    pub t: usize,
    pub q: usize,
}

impl EssentialSubset {
    pub fn new<I, N>(members: I, t: usize, q: usize) -> Self
    where
        I: IntoIterator<Item = N>,
        N: Into<NodeId>,
    {
        EssentialSubset {
            members: members.into_iter().map(Into::into).collect(),
            t,
            q,
        }
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    /// How many members may misbehave before this subset stops being
    /// informative: `min(t, n - q)`.
    pub fn slack(&self) -> usize {
        self.t.min(self.n() - self.q.min(self.n()))
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.members.contains(node)
    }
}

impl fmt::Debug for EssentialSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "S{{{} t={} q={}}}",
            self.members
                .iter()
                .map(|m| m.as_str())
                .collect::<Vec<_>>()
                .join(","),
            self.t,
            self.q
        )
    }
}

/// Which structural constraint a subset's parameters break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParamViolation {
    /// `t` or `q` outside `0..=n`.
    BoundsExceeded,
    /// Two quorums may fail to intersect in an honest node: needs `t < 2q - n`.
    QuorumOverlapTooSmall,
    /// A weak-support certificate may be forged by faulty nodes alone:
    /// needs `2t < q`.
    QuorumWithinFaults,
}

impl fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamViolation::BoundsExceeded => "t and q must lie in 0..=n",
            ParamViolation::QuorumOverlapTooSmall => "requires t < 2q - n",
            ParamViolation::QuorumWithinFaults => "requires 2t < q",
        };
        f.write_str(s)
    }
}

/// Check a subset shape `(n, t, q)` against the structural constraints that
/// make support counting meaningful. Returns every violated constraint.
pub fn validate_subset(n: usize, t: usize, q: usize) -> Vec<ParamViolation> {
    let mut out = Vec::new();
    if t > n || q > n {
        out.push(ParamViolation::BoundsExceeded);
    }
    // t < 2q - n, kept in unsigned arithmetic.
    if t + n >= 2 * q {
        out.push(ParamViolation::QuorumOverlapTooSmall);
    }
    if 2 * t >= q {
        out.push(ParamViolation::QuorumWithinFaults);
    }
    out
}

/// Behavioral status of a node in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultStatus {
    Correct,
    /// Stops participating at some point but never lies.
    Crashed,
    /// Actively deviates from the protocol.
    Byzantine,
}

impl FaultStatus {
    /// Honest nodes never send messages the protocol forbids; crashed nodes
    /// are honest, just silent.
    pub fn honest(self) -> bool {
        self != FaultStatus::Byzantine
    }

    pub fn correct(self) -> bool {
        self == FaultStatus::Correct
    }
}

/// Per-node fault statuses for a run. Nodes absent from the map are correct.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultAssignment {
    statuses: BTreeMap<NodeId, FaultStatus>,
}

impl FaultAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, node: impl Into<NodeId>, status: FaultStatus) {
        self.statuses.insert(node.into(), status);
    }

    pub fn status(&self, node: &NodeId) -> FaultStatus {
        self.statuses
            .get(node)
            .copied()
            .unwrap_or(FaultStatus::Correct)
    }

    pub fn byzantine(&self) -> impl Iterator<Item = &NodeId> {
        self.statuses
            .iter()
            .filter(|(_, s)| **s == FaultStatus::Byzantine)
            .map(|(n, _)| n)
    }
}

/// A full trust configuration: the node universe and each node's essential
/// subsets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustConfig {
    nodes: BTreeSet<NodeId>,
    subsets: BTreeMap<NodeId, Vec<EssentialSubset>>,
}

impl TrustConfig {
    pub fn new<I, N>(nodes: I) -> Self
    where
        I: IntoIterator<Item = N>,
        N: Into<NodeId>,
    {
        TrustConfig {
            nodes: nodes.into_iter().map(Into::into).collect(),
            subsets: BTreeMap::new(),
        }
    }

    /// The complete network: every node declares the single subset of all
    /// nodes with the given parameters.
    pub fn complete<I, N>(nodes: I, t: usize, q: usize) -> Self
    where
        I: IntoIterator<Item = N>,
        N: Into<NodeId>,
    {
        let mut cfg = Self::new(nodes);
        let all = EssentialSubset {
            members: cfg.nodes.clone(),
            t,
            q,
        };
        for node in cfg.nodes.clone() {
            cfg.subsets.insert(node, vec![all.clone()]);
        }
        cfg
    }

    pub fn add_subset(&mut self, owner: impl Into<NodeId>, subset: EssentialSubset) {
        let owner = owner.into();
        self.nodes.insert(owner.clone());
        for m in &subset.members {
            self.nodes.insert(m.clone());
        }
        let list = self.subsets.entry(owner).or_default();
        if !list.contains(&subset) {
            list.push(subset);
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.nodes.contains(node)
    }

    pub fn subsets_of(&self, node: &NodeId) -> &[EssentialSubset] {
        self.subsets.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Nodes the given node listens to: itself plus every member of its
    /// essential subsets.
    pub fn unl(&self, node: &NodeId) -> BTreeSet<NodeId> {
        let mut out: BTreeSet<NodeId> = BTreeSet::new();
        out.insert(node.clone());
        for s in self.subsets_of(node) {
            out.extend(s.members.iter().cloned());
        }
        out
    }

    /// Everyone who listens to `sender`.
    pub fn listeners(&self, sender: &NodeId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| self.unl(n).contains(sender))
            .cloned()
            .collect()
    }

    /// Weak structural sanity: nodes exist and each declares at least one
    /// subset. Parameter laws are not consulted, so configurations with
    /// deliberately broken subsets still construct.
    pub fn validate_coverage(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Config("no nodes".into()));
        }
        for node in &self.nodes {
            if self.subsets_of(node).is_empty() {
                return Err(Error::Config(format!("node {node} declares no subsets")));
            }
        }
        Ok(())
    }

    /// Structural sanity: every subset passes [`validate_subset`], every
    /// node declares at least one subset.
    pub fn validate(&self) -> Result<()> {
        self.validate_coverage()?;
        for node in &self.nodes {
            let subsets = self.subsets_of(node);
            for s in subsets {
                let bad = validate_subset(s.n(), s.t, s.q);
                if !bad.is_empty() {
                    return Err(Error::Config(format!(
                        "subset {s:?} of {node}: {}",
                        bad.iter()
                            .map(|v| v.to_string())
                            .collect::<Vec<_>>()
                            .join("; ")
                    )));
                }
            }
        }
        Ok(())
    }

    /// Transitive closure of listening through honest nodes: the node's own
    /// UNL plus the UNL of every honest node already inside.
    pub fn extended_unl(&self, node: &NodeId, faults: &FaultAssignment) -> Result<BTreeSet<NodeId>> {
        if !self.contains(node) {
            return Err(Error::UnknownNode(node.to_string()));
        }
        let mut closure = self.unl(node);
        loop {
            let mut grew = false;
            for j in closure.clone() {
                if faults.status(&j).honest() {
                    for k in self.unl(&j) {
                        grew |= closure.insert(k);
                    }
                }
            }
            if !grew {
                return Ok(closure);
            }
        }
    }
}

/// What classification concluded about one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeClassification {
    pub status: FaultStatus,
    /// Honest, and each subset keeps enough healthy members to be trusted.
    pub healthy: bool,
    /// Healthy, correct, and able to make progress: each subset keeps
    /// enough unblocked members to fill quorums.
    pub unblocked: bool,
}

/// Classify every node as healthy / unblocked under the given faults.
///
/// Both predicates are greatest fixpoints computed by growing the failed
/// set: a node fails as soon as more than `min(t, n - q)` members of one of
/// its subsets have failed. Subsets with lawless parameters still classify;
/// their slack just saturates at zero.
pub fn classify(
    config: &TrustConfig,
    faults: &FaultAssignment,
) -> Result<BTreeMap<NodeId, NodeClassification>> {
    config.validate_coverage()?;
    let not_healthy = spread_failure(config, |n| !faults.status(n).honest());
    let not_unblocked = spread_failure(config, |n| {
        not_healthy.contains(n) || !faults.status(n).correct()
    });
    Ok(config
        .nodes()
        .map(|n| {
            (
                n.clone(),
                NodeClassification {
                    status: faults.status(n),
                    healthy: !not_healthy.contains(n),
                    unblocked: !not_unblocked.contains(n),
                },
            )
        })
        .collect())
}

fn spread_failure(config: &TrustConfig, seed: impl Fn(&NodeId) -> bool) -> BTreeSet<NodeId> {
    let mut failed: BTreeSet<NodeId> = config.nodes().filter(|n| seed(n)).cloned().collect();
    loop {
        let mut grew = false;
        for node in config.nodes() {
            if failed.contains(node) {
                continue;
            }
            let overwhelmed = config.subsets_of(node).iter().any(|s| {
                let bad = s.members.iter().filter(|m| failed.contains(*m)).count();
                bad > s.slack()
            });
            if overwhelmed {
                failed.insert(node.clone());
                grew = true;
            }
        }
        if !grew {
            return failed;
        }
    }
}

/// Result of a pairwise linkage query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Linkage {
    /// Some shared subset has at most `t` actively faulty members, so the
    /// two nodes can never be convinced of contradictory strongly-supported
    /// claims.
    pub linked: bool,
    /// Some shared subset additionally keeps `q` correct members and has
    /// `t <= n - q`: claims transfer from one node to the other.
    pub fully_linked: bool,
    /// A subset witnessing `fully_linked` (or `linked` if only that holds).
    pub witness: Option<EssentialSubset>,
}

/// Evaluate linkage between two nodes under the given faults.
pub fn linkage(
    config: &TrustConfig,
    faults: &FaultAssignment,
    i: &NodeId,
    j: &NodeId,
) -> Result<Linkage> {
    for n in [i, j] {
        if !config.contains(n) {
            return Err(Error::UnknownNode(n.to_string()));
        }
    }
    let shared: Vec<&EssentialSubset> = config
        .subsets_of(i)
        .iter()
        .filter(|s| config.subsets_of(j).contains(s))
        .collect();
    let mut linked_witness = None;
    let mut full_witness = None;
    for s in shared {
        let byz = s
            .members
            .iter()
            .filter(|m| !faults.status(m).honest())
            .count();
        let correct = s
            .members
            .iter()
            .filter(|m| faults.status(m).correct())
            .count();
        if byz <= s.t {
            linked_witness.get_or_insert_with(|| s.clone());
            if correct >= s.q && s.t + s.q <= s.n() {
                full_witness.get_or_insert_with(|| s.clone());
            }
        }
    }
    Ok(Linkage {
        linked: linked_witness.is_some(),
        fully_linked: full_witness.is_some(),
        witness: full_witness.or(linked_witness),
    })
}

/// Result of a connectivity query for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Connectivity {
    /// Every pair of healthy nodes in the extended UNL is fully linked.
    pub strongly: bool,
    /// The node itself is fully linked with every healthy node in its
    /// extended UNL.
    pub weakly: bool,
}

/// Evaluate strong/weak connectivity of `node` under the given faults.
pub fn connectivity(
    config: &TrustConfig,
    faults: &FaultAssignment,
    node: &NodeId,
) -> Result<Connectivity> {
    let classes = classify(config, faults)?;
    let closure = config.extended_unl(node, faults)?;
    let healthy: Vec<&NodeId> = closure
        .iter()
        .filter(|n| classes.get(*n).map(|c| c.healthy).unwrap_or(false))
        .collect();
    let mut strongly = true;
    'outer: for (a, x) in healthy.iter().enumerate() {
        for y in healthy.iter().skip(a + 1) {
            if !linkage(config, faults, x, y)?.fully_linked {
                strongly = false;
                break 'outer;
            }
        }
    }
    let mut weakly = true;
    for h in &healthy {
        if *h == node {
            continue;
        }
        if !linkage(config, faults, node, h)?.fully_linked {
            weakly = false;
            break;
        }
    }
    Ok(Connectivity { strongly, weakly })
}

/// How much backing a message has across a node's essential subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum SupportGrade {
    None,
    /// `t+1` matching senders inside some subset: at least one was honest.
    Weak,
    /// `q` matching senders inside every subset.
    Strong,
}

/// Count support by an arbitrary per-sender predicate. The predicate is
/// consulted once per subset member.
pub fn support_by(
    es: &[EssentialSubset],
    counts_for: impl Fn(&NodeId) -> bool,
) -> Result<SupportGrade> {
    if es.is_empty() {
        return Err(Error::Config("support query against empty subset list".into()));
    }
    let mut weak = false;
    let mut strong = true;
    for s in es {
        let matching = s.members.iter().filter(|m| counts_for(m)).count();
        if matching >= s.t + 1 {
            weak = true;
        }
        if matching < s.q {
            strong = false;
        }
    }
    Ok(if strong {
        SupportGrade::Strong
    } else if weak {
        SupportGrade::Weak
    } else {
        SupportGrade::None
    })
}

/// Grade support for `target` given each sender's (single) claimed content.
pub fn support<C: Eq>(
    es: &[EssentialSubset],
    received: &BTreeMap<NodeId, C>,
    target: &C,
) -> Result<SupportGrade> {
    support_by(es, |m| received.get(m) == Some(target))
}

/// Linkage in the implicit-subset model where each node publishes only a
/// UNL size and quorum. Two nodes are linked when their UNL overlap can
/// host a subset large enough to outvote both sides' tolerated faults:
/// `overlap >= max(3(n_i - q_i) + 1, 3(n_j - q_j) + 1)`.
pub fn quorum_model_linked(
    n_i: usize,
    q_i: usize,
    n_j: usize,
    q_j: usize,
    overlap: usize,
) -> Result<bool> {
    if q_i > n_i || q_j > n_j {
        return Err(Error::Config("quorum exceeds list size".into()));
    }
    if overlap > n_i.min(n_j) {
        return Err(Error::Config(format!(
            "overlap {overlap} exceeds smaller list size {}",
            n_i.min(n_j)
        )));
    }
    let need = (3 * (n_i - q_i) + 1).max(3 * (n_j - q_j) + 1);
    Ok(overlap >= need)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abcd() -> Vec<&'static str> {
        vec!["a", "b", "c", "d"]
    }

    #[test]
    fn validate_classic_family() {
        // n >= 3t+1 with q = n - t always passes.
        for t in 0usize..=4 {
            for n in (3 * t + 1)..=13 {
                let q = n - t;
                assert!(validate_subset(n, t, q).is_empty(), "n={n} t={t} q={q}");
            }
        }
    }

    #[test]
    fn validate_rejects_flat_majority() {
        // n=4 t=1 q=3 fine; q=2 fails both quorum constraints.
        assert!(validate_subset(4, 1, 3).is_empty());
        let bad = validate_subset(4, 1, 2);
        assert!(bad.contains(&ParamViolation::QuorumOverlapTooSmall));
        assert!(bad.contains(&ParamViolation::QuorumWithinFaults));
    }

    #[test]
    fn validate_rejects_out_of_bounds() {
        assert!(validate_subset(3, 4, 3).contains(&ParamViolation::BoundsExceeded));
        assert!(validate_subset(3, 0, 4).contains(&ParamViolation::BoundsExceeded));
    }

    #[test]
    fn classify_one_byzantine_leaves_rest_unblocked() {
        let cfg = TrustConfig::complete(abcd(), 1, 3);
        let mut faults = FaultAssignment::new();
        faults.set("d", FaultStatus::Byzantine);
        let classes = classify(&cfg, &faults).unwrap();
        for n in ["a", "b", "c"] {
            let c = &classes[&NodeId::from(n)];
            assert!(c.healthy && c.unblocked, "{n}: {c:?}");
        }
        assert!(!classes[&NodeId::from("d")].healthy);
        assert!(!classes[&NodeId::from("d")].unblocked);
    }

    #[test]
    fn classify_two_crashes_block_but_stay_healthy() {
        let cfg = TrustConfig::complete(abcd(), 1, 3);
        let mut faults = FaultAssignment::new();
        faults.set("c", FaultStatus::Crashed);
        faults.set("d", FaultStatus::Crashed);
        let classes = classify(&cfg, &faults).unwrap();
        for n in ["a", "b"] {
            let c = &classes[&NodeId::from(n)];
            assert!(c.healthy, "{n} should stay healthy");
            assert!(!c.unblocked, "{n} should be blocked");
        }
    }

    #[test]
    fn classify_cascades() {
        // Six nodes in two chained subsets: killing enough of the first
        // subset drags down nodes that depend on survivors of the first.
        let mut cfg = TrustConfig::new(vec!["a", "b", "c", "d", "e", "f"]);
        let s1 = EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 3);
        let s2 = EssentialSubset::new(vec!["c", "d", "e", "f"], 1, 3);
        for n in ["a", "b", "c", "d"] {
            cfg.add_subset(n, s1.clone());
        }
        for n in ["c", "d", "e", "f"] {
            cfg.add_subset(n, s2.clone());
        }
        let mut faults = FaultAssignment::new();
        faults.set("a", FaultStatus::Byzantine);
        faults.set("b", FaultStatus::Byzantine);
        let classes = classify(&cfg, &faults).unwrap();
        // c and d lose subset s1 (2 > slack 1), then e and f lose s2.
        for n in ["c", "d", "e", "f"] {
            assert!(!classes[&NodeId::from(n)].healthy, "{n} should cascade");
        }
    }

    #[test]
    fn linkage_requires_identical_declaration() {
        let mut cfg = TrustConfig::new(abcd());
        let s_a = EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 3);
        let s_b = EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 4);
        cfg.add_subset("a", s_a);
        cfg.add_subset("b", s_b);
        cfg.add_subset("c", EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 3));
        cfg.add_subset("d", EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 3));
        let faults = FaultAssignment::new();
        let ab = linkage(&cfg, &faults, &"a".into(), &"b".into()).unwrap();
        assert!(!ab.linked, "parameters differ, so no shared subset");
        let ac = linkage(&cfg, &faults, &"a".into(), &"c".into()).unwrap();
        assert!(ac.linked && ac.fully_linked);
    }

    #[test]
    fn linkage_tolerates_exactly_t_byzantine() {
        let cfg = TrustConfig::complete(abcd(), 1, 3);
        let mut faults = FaultAssignment::new();
        faults.set("d", FaultStatus::Byzantine);
        let l = linkage(&cfg, &faults, &"a".into(), &"b".into()).unwrap();
        assert!(l.linked && l.fully_linked);
        faults.set("c", FaultStatus::Byzantine);
        let l = linkage(&cfg, &faults, &"a".into(), &"b".into()).unwrap();
        assert!(!l.linked, "two byzantine exceed t=1");
    }

    #[test]
    fn full_linkage_needs_quorum_of_correct() {
        let cfg = TrustConfig::complete(abcd(), 1, 3);
        let mut faults = FaultAssignment::new();
        faults.set("c", FaultStatus::Crashed);
        faults.set("d", FaultStatus::Crashed);
        let l = linkage(&cfg, &faults, &"a".into(), &"b".into()).unwrap();
        assert!(l.linked, "crashes are not active faults");
        assert!(!l.fully_linked, "only 2 correct < q=3");
    }

    #[test]
    fn connectivity_complete_network() {
        let cfg = TrustConfig::complete(abcd(), 1, 3);
        let mut faults = FaultAssignment::new();
        faults.set("d", FaultStatus::Byzantine);
        let c = connectivity(&cfg, &faults, &"a".into()).unwrap();
        assert!(c.strongly && c.weakly);
    }

    #[test]
    fn connectivity_weak_without_strong() {
        // a shares a subset with everyone, but e shares nothing with b, c, d.
        let mut cfg = TrustConfig::new(vec!["a", "b", "c", "d", "e"]);
        let s_all = EssentialSubset::new(vec!["a", "b", "c", "d", "e"], 1, 4);
        let s_e = EssentialSubset::new(vec!["a", "b", "c", "d", "e"], 0, 4);
        for n in ["a", "b", "c", "d"] {
            cfg.add_subset(n, s_all.clone());
        }
        cfg.add_subset("a", s_e.clone());
        cfg.add_subset("e", s_e);
        let faults = FaultAssignment::new();
        let c = connectivity(&cfg, &faults, &"a".into()).unwrap();
        assert!(!c.strongly, "pairs like (b, e) share no subset");
        assert!(c.weakly, "a itself is fully linked with all of b..e");
    }

    #[test]
    fn support_grades() {
        let es = vec![EssentialSubset::new(abcd(), 1, 3)];
        let mut recv: BTreeMap<NodeId, &str> = BTreeMap::new();
        assert_eq!(support(&es, &recv, &"m").unwrap(), SupportGrade::None);
        recv.insert("a".into(), "m");
        assert_eq!(support(&es, &recv, &"m").unwrap(), SupportGrade::None);
        recv.insert("b".into(), "m");
        assert_eq!(support(&es, &recv, &"m").unwrap(), SupportGrade::Weak);
        recv.insert("c".into(), "m");
        assert_eq!(support(&es, &recv, &"m").unwrap(), SupportGrade::Strong);
        recv.insert("d".into(), "x");
        assert_eq!(support(&es, &recv, &"m").unwrap(), SupportGrade::Strong);
    }

    #[test]
    fn support_needs_every_subset_for_strong() {
        let es = vec![
            EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 3),
            EssentialSubset::new(vec!["d", "e", "f", "g"], 1, 3),
        ];
        let mut recv: BTreeMap<NodeId, &str> = BTreeMap::new();
        for n in ["a", "b", "c"] {
            recv.insert(n.into(), "m");
        }
        assert_eq!(support(&es, &recv, &"m").unwrap(), SupportGrade::Weak);
        for n in ["d", "e", "f"] {
            recv.insert(n.into(), "m");
        }
        assert_eq!(support(&es, &recv, &"m").unwrap(), SupportGrade::Strong);
    }

    #[test]
    fn support_empty_es_is_error() {
        let recv: BTreeMap<NodeId, &str> = BTreeMap::new();
        assert!(support(&[], &recv, &"m").is_err());
    }

    #[test]
    fn quorum_model_examples() {
        assert!(quorum_model_linked(10, 8, 10, 8, 7).unwrap());
        assert!(!quorum_model_linked(10, 8, 10, 8, 6).unwrap());
        assert!(quorum_model_linked(10, 10, 10, 10, 1).unwrap());
        assert!(quorum_model_linked(10, 10, 4, 4, 1).unwrap());
        assert!(quorum_model_linked(100, 80, 100, 80, 61).unwrap());
        assert!(!quorum_model_linked(100, 80, 100, 80, 60).unwrap());
    }

    #[test]
    fn quorum_model_rejects_impossible_overlap() {
        assert!(quorum_model_linked(10, 8, 4, 3, 5).is_err());
        assert!(quorum_model_linked(10, 11, 10, 8, 5).is_err());
    }

    #[test]
    fn extended_unl_closes_through_honest_nodes() {
        let mut cfg = TrustConfig::new(vec!["a", "b", "c", "d", "e", "f"]);
        for n in ["a", "b", "c", "d"] {
            cfg.add_subset(n, EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 3));
        }
        for n in ["c", "d", "e", "f"] {
            cfg.add_subset(n, EssentialSubset::new(vec!["c", "d", "e", "f"], 1, 3));
        }
        let faults = FaultAssignment::new();
        let ext = cfg.extended_unl(&"a".into(), &faults).unwrap();
        assert!(ext.contains(&NodeId::from("f")), "closure reaches f via c");

        let mut byz = FaultAssignment::new();
        byz.set("c", FaultStatus::Byzantine);
        byz.set("d", FaultStatus::Byzantine);
        let ext = cfg.extended_unl(&"a".into(), &byz).unwrap();
        assert!(
            !ext.contains(&NodeId::from("f")),
            "byzantine bridges do not extend the closure"
        );
    }
}
