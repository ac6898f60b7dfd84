//! Multi-valued agreement with external validity.
//!
//! Candidate values arrive from outside (`add_valid_input`); the protocol
//! guarantees the decided value was somebody's valid input. Each round:
//! everyone backs a candidate (`ELECT`); quorums of backings either
//! surface a unanimous candidate (`FINISH`) or reveal disagreement
//! (`CONT`). An embedded binary agreement then settles whether this round
//! can terminate. If yes, strong `FINISH` support decides. If no, nodes
//! exchange candidate sets until quorums agree on what everyone holds,
//! open the round's seed, and carry the candidate with the smallest
//! seed-keyed index into the next round (`INIT`). Since indices are
//! unpredictable until the seed opens and the seed opens only after
//! candidate sets are pinned, the adversary cannot pack the next round
//! with high-index values: surviving candidates shrink geometrically.
//!
//! Round traffic never stops: conditions for old rounds stay live, future
//! round traffic buffers until the node closes the rounds before it.

use std::collections::{BTreeMap, BTreeSet};

use crate::abba::{AbbaEvent, AbbaInstance, AbbaStep};
use crate::crs::{expand_seed, CrsInstance, CrsOracle, KeySpec};
use crate::msg::{digest128, MvbaMsg, Val};
use crate::support::SupportTracker;
use crate::topology::{support_by, EssentialSubset, NodeId, SupportGrade};
use crate::Error;

/// Trace of observable state changes.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum MvbaEvent {
    /// `v` became viable in round `r`.
    ValueAdded { r: u64, v: Val },
    /// The node backed `v` in round `r`.
    Elected { r: u64, v: Val },
    /// Backing quorum processed; `finish` tells which branch fired.
    ElectResolved { r: u64, finish: bool },
    /// The node's vote in the round's stop agreement.
    Voted { r: u64, vote: bool },
    /// The stop agreement settled round `r`.
    StopDecided { r: u64, terminate: bool },
    /// Candidate sets pinned; seed sampling began.
    SeedRequested { r: u64, vals: BTreeSet<Val> },
    /// The round seed opened.
    SeedOpened { r: u64 },
    /// The node computed its estimate and moved toward round `r`.
    RoundAdvanced { r: u64, est: Val },
    /// Embedded agreement trace.
    Stop { r: u64, event: AbbaEvent },
}

/// What one call did to the instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MvbaStep {
    pub out: Vec<MvbaMsg>,
    /// Set when this call decided: the value and the 1-based round count.
    pub decided: Option<(Val, u64)>,
    pub events: Vec<MvbaEvent>,
    pub rejected: u32,
    /// Two candidates hashed to the same index: the run must abort.
    pub collision: Option<String>,
}

impl MvbaStep {
    fn merge(&mut self, other: MvbaStep) {
        self.out.extend(other.out);
        if self.decided.is_none() {
            self.decided = other.decided;
        }
        self.events.extend(other.events);
        self.rejected += other.rejected;
        if self.collision.is_none() {
            self.collision = other.collision;
        }
    }
}

/// One node's state for a single multi-valued agreement instance.
#[derive(Debug, Clone)]
pub struct MvbaInstance {
    me: NodeId,
    es: Vec<EssentialSubset>,
    registry: Vec<KeySpec>,
    tag_prefix: String,
    /// Start next-round traffic before the stop agreement settles.
    pipeline: bool,

    round: u64,
    /// Viable candidates per round, in arrival order.
    values: BTreeMap<u64, Vec<Val>>,
    est: BTreeMap<u64, Val>,
    decided: Option<(Val, u64)>,

    elect_sent: BTreeSet<u64>,
    elect_resolved: BTreeSet<u64>,
    finish_sent: BTreeSet<u64>,
    cont_sent: BTreeMap<u64, BTreeSet<Val>>,
    cont_active: BTreeSet<u64>,
    voted: BTreeMap<u64, bool>,
    init_sent: BTreeMap<u64, BTreeSet<Val>>,
    seed_requested: BTreeSet<u64>,
    round_closed: BTreeSet<u64>,

    elect_track: BTreeMap<u64, SupportTracker<Val>>,
    finish_track: BTreeMap<u64, SupportTracker<Val>>,
    cont_track: BTreeMap<u64, BTreeMap<NodeId, BTreeSet<Val>>>,
    init_track: BTreeMap<(u64, Val), BTreeSet<NodeId>>,

    stop: BTreeMap<u64, AbbaInstance>,
    stop_outcome: BTreeMap<u64, bool>,
    seeds: BTreeMap<u64, CrsInstance>,
    seed_value: BTreeMap<u64, [u8; 16]>,
}

impl MvbaInstance {
    pub fn new(
        me: NodeId,
        es: Vec<EssentialSubset>,
        registry: Vec<KeySpec>,
        tag_prefix: impl Into<String>,
        pipeline: bool,
    ) -> Self {
        MvbaInstance {
            me,
            es,
            registry,
            tag_prefix: tag_prefix.into(),
            pipeline,
            round: 0,
            values: BTreeMap::new(),
            est: BTreeMap::new(),
            decided: None,
            elect_sent: BTreeSet::new(),
            elect_resolved: BTreeSet::new(),
            finish_sent: BTreeSet::new(),
            cont_sent: BTreeMap::new(),
            cont_active: BTreeSet::new(),
            voted: BTreeMap::new(),
            init_sent: BTreeMap::new(),
            seed_requested: BTreeSet::new(),
            round_closed: BTreeSet::new(),
            elect_track: BTreeMap::new(),
            finish_track: BTreeMap::new(),
            cont_track: BTreeMap::new(),
            init_track: BTreeMap::new(),
            stop: BTreeMap::new(),
            stop_outcome: BTreeMap::new(),
            seeds: BTreeMap::new(),
            seed_value: BTreeMap::new(),
        }
    }

    pub fn decided(&self) -> Option<&(Val, u64)> {
        self.decided.as_ref()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn values(&self, r: u64) -> &[Val] {
        self.values.get(&r).map(Vec::as_slice).unwrap_or(&[])
    }

    fn values_contain(&self, r: u64, v: &Val) -> bool {
        self.values.get(&r).map(|vs| vs.contains(v)).unwrap_or(false)
    }

    /// Feed an externally validated candidate. Candidates may keep
    /// arriving for the life of the instance.
    pub fn add_valid_input(&mut self, v: Val, oracle: &CrsOracle) -> MvbaStep {
        let mut step = MvbaStep::default();
        if self.decided.is_some() {
            return step;
        }
        let vals = self.values.entry(0).or_default();
        if !vals.contains(&v) {
            vals.push(v.clone());
            step.events.push(MvbaEvent::ValueAdded { r: 0, v });
        }
        step.merge(self.advance(oracle));
        step
    }

    pub fn handle(&mut self, sender: &NodeId, msg: MvbaMsg, oracle: &CrsOracle) -> MvbaStep {
        let mut step = MvbaStep::default();
        if self.decided.is_some() {
            return step;
        }
        match msg {
            MvbaMsg::Elect { r, v } => {
                self.elect_track.entry(r).or_default().record(sender, v);
            }
            MvbaMsg::Finish { r, v } => {
                self.finish_track.entry(r).or_default().record(sender, v);
            }
            MvbaMsg::Cont { r, vals } => {
                let latest = self.cont_track.entry(r).or_default();
                match latest.get(sender) {
                    Some(prev) if !prev.is_subset(&vals) => {
                        // Candidate sets only ever grow; a shrink is noise.
                        step.rejected += 1;
                    }
                    _ => {
                        latest.insert(sender.clone(), vals);
                    }
                }
            }
            MvbaMsg::Init { r, v } => {
                self.init_track.entry((r, v)).or_default().insert(sender.clone());
            }
            MvbaMsg::Stop { r, msg } => {
                let es = self.es.clone();
                let registry = self.registry.clone();
                let prefix = format!("{}/stop{r}", self.tag_prefix);
                let me = self.me.clone();
                let inst = self
                    .stop
                    .entry(r)
                    .or_insert_with(|| AbbaInstance::new(me, es, registry, prefix));
                let sub = inst.handle(sender, msg, oracle);
                self.absorb_stop(r, sub, &mut step);
            }
            MvbaMsg::Coin { r, msg } => {
                let seed = self.seed_instance(r);
                let sub = seed.handle(oracle, sender, msg);
                for m in sub.out {
                    step.out.push(MvbaMsg::Coin { r, msg: m });
                }
                step.rejected += sub.rejected;
                if let Some(mixed) = sub.output {
                    self.seed_value.insert(r, expand_seed(mixed));
                    step.events.push(MvbaEvent::SeedOpened { r });
                }
            }
        }
        step.merge(self.advance(oracle));
        step
    }

    fn seed_instance(&mut self, r: u64) -> &mut CrsInstance {
        let me = self.me.clone();
        let registry = self.registry.clone();
        let tag = format!("{}/seed{r}", self.tag_prefix);
        self.seeds
            .entry(r)
            .or_insert_with(|| CrsInstance::new(me, tag, registry))
    }

    fn absorb_stop(&mut self, r: u64, sub: AbbaStep, step: &mut MvbaStep) {
        for m in sub.out {
            step.out.push(MvbaMsg::Stop { r, msg: m });
        }
        step.rejected += sub.rejected;
        for e in sub.events {
            step.events.push(MvbaEvent::Stop { r, event: e });
        }
        if let Some((b, _)) = sub.decided {
            if self.stop_outcome.insert(r, b).is_none() {
                step.events.push(MvbaEvent::StopDecided { r, terminate: b });
            }
        }
    }

    /// Index of a candidate under the round seed; low index wins.
    fn index(&self, s: &[u8; 16], v: &Val) -> u128 {
        u128::from_be_bytes(digest128(&[&v.canon_bytes(), s]))
    }

    fn broadcast_init(&mut self, r: u64, v: Val, step: &mut MvbaStep) {
        let sent = self.init_sent.entry(r).or_default();
        if sent.insert(v.clone()) {
            self.init_track
                .entry((r, v.clone()))
                .or_default()
                .insert(self.me.clone());
            step.out.push(MvbaMsg::Init { r, v });
        }
    }

    fn send_cont(&mut self, r: u64, step: &mut MvbaStep) {
        let vals: BTreeSet<Val> = self.values(r).iter().cloned().collect();
        let sent = self.cont_sent.entry(r).or_default();
        if *sent != vals {
            *sent = vals.clone();
            self.cont_track
                .entry(r)
                .or_default()
                .insert(self.me.clone(), vals.clone());
            step.out.push(MvbaMsg::Cont { r, vals });
        }
    }

    fn vote(&mut self, r: u64, b: bool, oracle: &CrsOracle, step: &mut MvbaStep) {
        if self.voted.contains_key(&r) {
            return;
        }
        self.voted.insert(r, b);
        step.events.push(MvbaEvent::Voted { r, vote: b });
        let es = self.es.clone();
        let registry = self.registry.clone();
        let prefix = format!("{}/stop{r}", self.tag_prefix);
        let me = self.me.clone();
        let inst = self
            .stop
            .entry(r)
            .or_insert_with(|| AbbaInstance::new(me, es, registry, prefix));
        match inst.input(b, oracle) {
            Ok(sub) => self.absorb_stop(r, sub, step),
            Err(_) => step.rejected += 1,
        }
    }

    fn advance(&mut self, oracle: &CrsOracle) -> MvbaStep {
        let mut step = MvbaStep::default();
        loop {
            let fuel = (step.out.len(), step.events.len(), self.decided.clone());
            for r in 0..=self.round {
                self.run_round(r, oracle, &mut step);
                if self.decided.is_some() || step.collision.is_some() {
                    return step;
                }
            }
            // Frontier advance: the round behind us closed and the next
            // round has something to back.
            let next = self.round + 1;
            if self.round_closed.contains(&self.round)
                && !self.values(next).is_empty()
            {
                self.round = next;
                continue;
            }
            if fuel == (step.out.len(), step.events.len(), self.decided.clone()) {
                return step;
            }
        }
    }

    fn run_round(&mut self, r: u64, oracle: &CrsOracle, step: &mut MvbaStep) {
        // Back the first candidate that became viable.
        if !self.elect_sent.contains(&r) {
            if let Some(v) = self.values(r).first().cloned() {
                self.elect_sent.insert(r);
                self.elect_track
                    .entry(r)
                    .or_default()
                    .record(&self.me.clone(), v.clone());
                step.events.push(MvbaEvent::Elected { r, v: v.clone() });
                step.out.push(MvbaMsg::Elect { r, v });
            }
        }

        // Quorum of backings, each for a candidate we also hold.
        if self.elect_sent.contains(&r) && !self.elect_resolved.contains(&r) {
            let track = self.elect_track.entry(r).or_default();
            let values = self.values.get(&r).cloned().unwrap_or_default();
            let grade = track
                .grade_by(&self.es, |v| values.contains(v))
                .unwrap_or(SupportGrade::None);
            if grade == SupportGrade::Strong {
                self.elect_resolved.insert(r);
                let finish = values.len() == 1;
                step.events.push(MvbaEvent::ElectResolved { r, finish });
                if finish {
                    let v = values[0].clone();
                    if self.finish_sent.insert(r) {
                        self.finish_track
                            .entry(r)
                            .or_default()
                            .record(&self.me.clone(), v.clone());
                        step.out.push(MvbaMsg::Finish { r, v });
                    }
                } else {
                    self.send_cont(r, step);
                }
            }
        }

        // Vote: unanimity reached somewhere, or disagreement witnessed.
        if self.elect_resolved.contains(&r) && !self.voted.contains_key(&r) {
            let finish_strong = self.strong_finish(r).is_some();
            if finish_strong {
                self.vote(r, true, oracle, step);
            } else if self.witnessed_disagreement(r) {
                self.send_cont(r, step);
                self.vote(r, false, oracle, step);
            }
        }

        let outcome = self.stop_outcome.get(&r).copied();

        // Terminal branch: the round may end, decide on strong FINISH
        // support for a candidate that was genuinely somebody's input.
        if outcome == Some(true) {
            if !self.finish_sent.contains(&r) {
                let track = self.finish_track.entry(r).or_default();
                let mut relay = None;
                for (v, _) in track.by_content() {
                    if track.grade(&self.es, v).unwrap_or(SupportGrade::None) >= SupportGrade::Weak
                    {
                        relay = Some(v.clone());
                        break;
                    }
                }
                if let Some(v) = relay {
                    self.finish_sent.insert(r);
                    self.finish_track
                        .entry(r)
                        .or_default()
                        .record(&self.me.clone(), v.clone());
                    step.out.push(MvbaMsg::Finish { r, v });
                }
            }
            if let Some(v) = self.strong_finish(r) {
                if self.values_contain(0, &v) {
                    self.decided = Some((v.clone(), r + 1));
                    step.decided = Some((v, r + 1));
                    return;
                }
            }
        }

        // Continuation branch: exchange candidate sets, pin them, open the
        // seed, and carry the lowest-index candidate forward.
        let cont_enabled = outcome == Some(false)
            || (self.pipeline && self.voted.get(&r) == Some(&false));
        if cont_enabled {
            self.cont_active.insert(r);
        }
        if self.cont_active.contains(&r) && self.witnessed_disagreement(r) {
            // Re-broadcast whenever our set outgrew the last one we sent.
            self.send_cont(r, step);
        }
        if self.cont_active.contains(&r) && !self.seed_requested.contains(&r) {
            let values: BTreeSet<Val> = self.values(r).iter().cloned().collect();
            let track = self.cont_track.entry(r).or_default();
            let grade = support_by(&self.es, |m| {
                track.get(m).map(|c| c.is_subset(&values)).unwrap_or(false)
            })
            .unwrap_or(SupportGrade::None);
            if grade == SupportGrade::Strong {
                self.seed_requested.insert(r);
                step.events.push(MvbaEvent::SeedRequested { r, vals: values });
                let seed = self.seed_instance(r);
                match seed.sample(oracle) {
                    Ok(sub) => {
                        for m in sub.out {
                            step.out.push(MvbaMsg::Coin { r, msg: m });
                        }
                        step.rejected += sub.rejected;
                        if let Some(mixed) = sub.output {
                            self.seed_value.insert(r, expand_seed(mixed));
                            step.events.push(MvbaEvent::SeedOpened { r });
                        }
                    }
                    Err(_) => step.rejected += 1,
                }
            }
        }
        if self.seed_requested.contains(&r) && !self.round_closed.contains(&r) {
            if let Some(s) = self.seed_value.get(&r).copied() {
                let mut best: Option<(u128, Val)> = None;
                for v in self.values(r).to_vec() {
                    let idx = self.index(&s, &v);
                    match &best {
                        Some((b, bv)) if *b == idx && *bv != v => {
                            step.collision =
                                Some(format!("round {r}: {bv} and {v} share index"));
                            return;
                        }
                        Some((b, _)) if *b <= idx => {}
                        _ => best = Some((idx, v)),
                    }
                }
                if let Some((_, est)) = best {
                    self.round_closed.insert(r);
                    self.est.insert(r + 1, est.clone());
                    step.events.push(MvbaEvent::RoundAdvanced { r: r + 1, est: est.clone() });
                    self.broadcast_init(r + 1, est, step);
                }
            }
        }

        // Next-round estimate relays and admissions, once this round closed.
        if self.round_closed.contains(&r) {
            let next = r + 1;
            let est_next = self.est.get(&next).cloned();
            let seed = self.seed_value.get(&r).copied();
            let inits: Vec<Val> = self
                .init_track
                .keys()
                .filter(|(rr, _)| *rr == next)
                .map(|(_, v)| v.clone())
                .collect();
            for v in inits {
                let senders = &self.init_track[&(next, v.clone())];
                let grade = support_by(&self.es, |m| senders.contains(m))
                    .unwrap_or(SupportGrade::None);
                if grade >= SupportGrade::Weak {
                    self.broadcast_init(next, v.clone(), step);
                }
                if grade == SupportGrade::Strong {
                    let vals = self.values.entry(next).or_default();
                    if !vals.contains(&v) {
                        vals.push(v.clone());
                        step.events.push(MvbaEvent::ValueAdded { r: next, v: v.clone() });
                    }
                }
            }
            // A late arrival with a smaller index than our estimate is
            // worth telling the next round about.
            if let (Some(est), Some(s)) = (est_next, seed) {
                let est_idx = self.index(&s, &est);
                for v in self.values(r).to_vec() {
                    if self.index(&s, &v) < est_idx {
                        self.broadcast_init(next, v, step);
                    }
                }
            }
        }
    }

    fn strong_finish(&mut self, r: u64) -> Option<Val> {
        let track = self.finish_track.entry(r).or_default();
        let contents: Vec<Val> = track.by_content().into_iter().map(|(v, _)| v.clone()).collect();
        for v in contents {
            if track.grade(&self.es, &v).unwrap_or(SupportGrade::None) == SupportGrade::Strong {
                return Some(v);
            }
        }
        None
    }

    fn witnessed_disagreement(&self, r: u64) -> bool {
        self.cont_track
            .get(&r)
            .map(|m| {
                m.values().any(|c| {
                    c.len() >= 2 && c.iter().all(|v| self.values_contain(r, v))
                })
            })
            .unwrap_or(false)
    }
}

/// Guard rail used by instance owners: an instance must exist before its
/// traffic can be routed.
pub fn unknown_instance(kind: &str, name: &str) -> Error {
    Error::Scheduling(format!("{kind} traffic for unknown instance {name}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn es4() -> Vec<EssentialSubset> {
        vec![EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 3)]
    }

    fn registry4() -> Vec<KeySpec> {
        vec![KeySpec {
            id: "k0".into(),
            holders: vec![EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 3)],
        }]
    }

    struct Net {
        oracle: CrsOracle,
        nodes: BTreeMap<NodeId, MvbaInstance>,
        wire: Vec<(NodeId, MvbaMsg)>,
        decisions: BTreeMap<NodeId, (Val, u64)>,
    }

    impl Net {
        fn new(seed: u64) -> Self {
            let nodes = ["a", "b", "c", "d"]
                .into_iter()
                .map(|n| {
                    (
                        NodeId::from(n),
                        MvbaInstance::new(n.into(), es4(), registry4(), "mvba/x", false),
                    )
                })
                .collect();
            Net {
                oracle: CrsOracle::new(seed),
                nodes,
                wire: Vec::new(),
                decisions: BTreeMap::new(),
            }
        }

        fn absorb(&mut self, from: &NodeId, step: MvbaStep) {
            assert!(step.collision.is_none(), "index collision in test");
            if let Some(d) = step.decided {
                self.decisions.insert(from.clone(), d);
            }
            self.wire
                .extend(step.out.into_iter().map(|m| (from.clone(), m)));
        }

        fn feed(&mut self, node: &str, v: Val) {
            let id = NodeId::from(node);
            let step = self.nodes.get_mut(&id).unwrap().add_valid_input(v, &self.oracle);
            self.absorb(&id, step);
        }

        fn run(&mut self) {
            while let Some((from, msg)) = self.wire.pop() {
                let ids: Vec<NodeId> = self.nodes.keys().cloned().collect();
                for id in ids {
                    if id == from {
                        continue;
                    }
                    let step = self
                        .nodes
                        .get_mut(&id)
                        .unwrap()
                        .handle(&from, msg.clone(), &self.oracle);
                    self.absorb(&id, step);
                }
            }
        }
    }

    fn label(s: &str) -> Val {
        Val::Label(s.into())
    }

    #[test]
    fn single_candidate_decides_fast() {
        let mut net = Net::new(5);
        for n in ["a", "b", "c", "d"] {
            net.feed(n, label("only"));
        }
        net.run();
        assert_eq!(net.decisions.len(), 4);
        for (_, (v, rounds)) in &net.decisions {
            assert_eq!(v, &label("only"));
            assert_eq!(*rounds, 1, "unanimous candidate ends in the first round");
        }
    }

    #[test]
    fn many_candidates_still_agree() {
        for seed in 0..10 {
            let mut net = Net::new(seed);
            let candidates: Vec<Val> = (0..9).map(|i| label(&format!("c{i}"))).collect();
            for n in ["a", "b", "c", "d"] {
                for c in &candidates {
                    net.feed(n, c.clone());
                }
            }
            net.run();
            assert_eq!(net.decisions.len(), 4, "seed {seed}");
            let vals: BTreeSet<&Val> = net.decisions.values().map(|(v, _)| v).collect();
            assert_eq!(vals.len(), 1, "seed {seed}: {:?}", net.decisions);
            let decided = net.decisions.values().next().unwrap().0.clone();
            assert!(candidates.contains(&decided), "decided a fed value");
        }
    }

    #[test]
    fn staggered_inputs_agree() {
        for seed in 0..10 {
            let mut net = Net::new(seed);
            // a and b start with x; c and d with y; the rest arrive while
            // the first round is already in flight.
            net.feed("a", label("x"));
            net.feed("b", label("x"));
            net.feed("c", label("y"));
            net.feed("d", label("y"));
            for n in ["a", "b", "c", "d"] {
                net.feed(n, label("x"));
                net.feed(n, label("y"));
            }
            net.run();
            assert_eq!(net.decisions.len(), 4, "seed {seed}");
            let vals: BTreeSet<&Val> = net.decisions.values().map(|(v, _)| v).collect();
            assert_eq!(vals.len(), 1, "seed {seed}: {:?}", net.decisions);
        }
    }

    #[test]
    fn decided_value_was_an_input() {
        let mut net = Net::new(2);
        for n in ["a", "b", "c", "d"] {
            net.feed(n, label("p"));
            net.feed(n, label("q"));
        }
        net.run();
        for (_, (v, _)) in &net.decisions {
            assert!(*v == label("p") || *v == label("q"));
        }
    }
}
