//! Asynchronous binary agreement driven by a shared coin.
//!
//! Each round narrows the viable bit set: estimates are announced
//! (`INIT`), weakly supported estimates are relayed so one honest backer
//! suffices to spread a value, strongly supported estimates enter the
//! round's value set and are voted on (`AUX`), and a round of `CONF`
//! claims pins down which sets honest nodes could still be holding before
//! anyone learns the round's coin. Only then is the coin opened: matching
//! it on a singleton set triggers the terminal `FINISH` claim, and strong
//! `FINISH` support decides. Because the viable set is fixed before the
//! coin is revealed, an adversary scheduling messages after seeing the
//! coin is already too late to steer the round against it.
//!
//! A node that decides stops processing; everyone else keeps every round's
//! conditions live forever, so late messages still land. Messages for
//! rounds ahead of a node's progress are buffered, not dropped.

use std::collections::{BTreeMap, BTreeSet};

use crate::crs::{expand_bit, CrsInstance, CrsOracle, CrsStep, KeySpec};
use crate::msg::{AbbaMsg, BitSet};
use crate::support::SupportTracker;
use crate::topology::{support_by, EssentialSubset, NodeId, SupportGrade};
use crate::{Error, Result};

/// Trace of observable state changes, consumed by run logs and verifiers.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum AbbaEvent {
    /// `v` gained strong estimate support in round `r`.
    ValueAdded { r: u64, v: bool },
    /// The round's viable set was pinned and the coin sampling began.
    CoinRequested { r: u64, vals: BitSet },
    /// The round's coin opened as `s`.
    CoinOpened { r: u64, s: bool },
    /// The node moved into round `r` carrying estimate `est`.
    RoundAdvanced { r: u64, est: bool },
}

/// What one call did to the instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AbbaStep {
    pub out: Vec<AbbaMsg>,
    /// Set when this call decided: the bit and the round it happened in.
    pub decided: Option<(bool, u64)>,
    pub events: Vec<AbbaEvent>,
    /// Invalid coin material dropped.
    pub rejected: u32,
}

impl AbbaStep {
    fn merge(&mut self, other: AbbaStep) {
        self.out.extend(other.out);
        if self.decided.is_none() {
            self.decided = other.decided;
        }
        self.events.extend(other.events);
        self.rejected += other.rejected;
    }

    fn absorb_crs(&mut self, r: u64, step: CrsStep) -> Option<crate::msg::Opaque32> {
        for m in step.out {
            self.out.push(AbbaMsg::Coin { r, msg: m });
        }
        self.rejected += step.rejected;
        step.output
    }
}

/// One node's state for a single binary-agreement instance.
#[derive(Debug, Clone)]
pub struct AbbaInstance {
    me: NodeId,
    es: Vec<EssentialSubset>,
    registry: Vec<KeySpec>,
    tag_prefix: String,

    started: bool,
    round: u64,
    est: BTreeMap<u64, bool>,
    values: BTreeMap<u64, BitSet>,
    decided: Option<(bool, u64)>,

    finish_sent: Option<bool>,
    init_sent: BTreeSet<(u64, bool)>,
    aux_sent: BTreeSet<u64>,
    conf_sent: BTreeSet<u64>,
    coin_requested: BTreeSet<u64>,
    round_closed: BTreeSet<u64>,

    finish_track: SupportTracker<bool>,
    init_track: BTreeMap<(u64, bool), BTreeSet<NodeId>>,
    aux_track: BTreeMap<u64, SupportTracker<bool>>,
    conf_track: BTreeMap<u64, SupportTracker<BitSet>>,

    coins: BTreeMap<u64, CrsInstance>,
    coin_value: BTreeMap<u64, bool>,
}

impl AbbaInstance {
    pub fn new(
        me: NodeId,
        es: Vec<EssentialSubset>,
        registry: Vec<KeySpec>,
        tag_prefix: impl Into<String>,
    ) -> Self {
        AbbaInstance {
            me,
            es,
            registry,
            tag_prefix: tag_prefix.into(),
            started: false,
            round: 0,
            est: BTreeMap::new(),
            values: BTreeMap::new(),
            decided: None,
            finish_sent: None,
            init_sent: BTreeSet::new(),
            aux_sent: BTreeSet::new(),
            conf_sent: BTreeSet::new(),
            coin_requested: BTreeSet::new(),
            round_closed: BTreeSet::new(),
            finish_track: SupportTracker::new(),
            init_track: BTreeMap::new(),
            aux_track: BTreeMap::new(),
            conf_track: BTreeMap::new(),
            coins: BTreeMap::new(),
            coin_value: BTreeMap::new(),
        }
    }

    pub fn decided(&self) -> Option<(bool, u64)> {
        self.decided
    }

    pub fn started(&self) -> bool {
        self.started
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn values(&self, r: u64) -> BitSet {
        self.values.get(&r).copied().unwrap_or_default()
    }

    /// Provide this node's input bit. Valid once, before deciding.
    pub fn input(&mut self, v: bool, oracle: &CrsOracle) -> Result<AbbaStep> {
        if self.started {
            return Err(Error::ProtocolViolation("input already provided".into()));
        }
        if self.decided.is_some() {
            return Err(Error::ProtocolViolation("instance already decided".into()));
        }
        self.started = true;
        self.est.insert(0, v);
        Ok(self.advance(oracle))
    }

    pub fn handle(&mut self, sender: &NodeId, msg: AbbaMsg, oracle: &CrsOracle) -> AbbaStep {
        let mut step = AbbaStep::default();
        if self.decided.is_some() {
            return step;
        }
        match msg {
            AbbaMsg::Finish { v } => {
                self.finish_track.record(sender, v);
            }
            AbbaMsg::Init { r, v } => {
                self.init_track.entry((r, v)).or_default().insert(sender.clone());
            }
            AbbaMsg::Aux { r, v } => {
                self.aux_track.entry(r).or_default().record(sender, v);
            }
            AbbaMsg::Conf { r, vals } => {
                self.conf_track.entry(r).or_default().record(sender, vals);
            }
            AbbaMsg::Coin { r, msg } => {
                let crs = self.coin_instance(r);
                let out = crs.handle(oracle, sender, msg);
                if let Some(mixed) = step.absorb_crs(r, out) {
                    let s = expand_bit(mixed);
                    self.coin_value.insert(r, s);
                    step.events.push(AbbaEvent::CoinOpened { r, s });
                }
            }
        }
        step.merge(self.advance(oracle));
        step
    }

    fn coin_instance(&mut self, r: u64) -> &mut CrsInstance {
        let me = self.me.clone();
        let registry = self.registry.clone();
        let tag = format!("{}/r{r}", self.tag_prefix);
        self.coins
            .entry(r)
            .or_insert_with(|| CrsInstance::new(me, tag, registry))
    }

    fn init_count(&self, r: u64, v: bool) -> SupportGrade {
        let senders = self.init_track.get(&(r, v));
        support_by(&self.es, |m| senders.map(|s| s.contains(m)).unwrap_or(false))
            .unwrap_or(SupportGrade::None)
    }

    fn broadcast_init(&mut self, r: u64, v: bool, step: &mut AbbaStep) {
        if self.init_sent.insert((r, v)) {
            self.init_track.entry((r, v)).or_default().insert(self.me.clone());
            step.out.push(AbbaMsg::Init { r, v });
        }
    }

    fn advance(&mut self, oracle: &CrsOracle) -> AbbaStep {
        let mut step = AbbaStep::default();
        loop {
            let fuel = (step.out.len(), step.events.len(), self.decided);

            // Terminal claims are live from the start, input or not.
            if self.finish_sent.is_none() {
                for v in [false, true] {
                    if self.finish_track.grade(&self.es, &v).unwrap_or(SupportGrade::None)
                        >= SupportGrade::Weak
                    {
                        self.finish_sent = Some(v);
                        self.finish_track.record(&self.me.clone(), v);
                        step.out.push(AbbaMsg::Finish { v });
                        break;
                    }
                }
            }
            if self.decided.is_none() {
                for v in [false, true] {
                    if self.finish_track.grade(&self.es, &v).unwrap_or(SupportGrade::None)
                        == SupportGrade::Strong
                    {
                        self.decided = Some((v, self.round));
                        step.decided = Some((v, self.round));
                        break;
                    }
                }
            }
            if self.decided.is_some() {
                return step;
            }

            if self.started {
                for r in 0..=self.round {
                    self.run_round(r, oracle, &mut step);
                }
            }

            if fuel == (step.out.len(), step.events.len(), self.decided) {
                return step;
            }
        }
    }

    fn run_round(&mut self, r: u64, oracle: &CrsOracle, step: &mut AbbaStep) {
        // Own estimate announcement.
        if let Some(est) = self.est.get(&r).copied() {
            self.broadcast_init(r, est, step);
        }

        // Weak estimate support is relayed once per (round, value).
        for v in [false, true] {
            if self.init_count(r, v) >= SupportGrade::Weak {
                self.broadcast_init(r, v, step);
            }
        }

        // Strong estimate support admits the value; the first admitted
        // value is voted in AUX.
        for v in [false, true] {
            if self.init_count(r, v) == SupportGrade::Strong {
                let vals = self.values.entry(r).or_default();
                if vals.insert(v) {
                    step.events.push(AbbaEvent::ValueAdded { r, v });
                }
                if self.aux_sent.insert(r) {
                    self.aux_track.entry(r).or_default().record(&self.me.clone(), v);
                    step.out.push(AbbaMsg::Aux { r, v });
                }
            }
        }

        let vals = self.values.get(&r).copied().unwrap_or_default();

        // Quorums of AUX votes landing inside the viable set yield CONF.
        if !self.conf_sent.contains(&r) && !vals.is_empty() {
            let aux = self.aux_track.entry(r).or_default();
            let grade = aux
                .grade_by(&self.es, |v| vals.contains(*v))
                .unwrap_or(SupportGrade::None);
            if grade == SupportGrade::Strong {
                self.conf_sent.insert(r);
                self.conf_track.entry(r).or_default().record(&self.me.clone(), vals);
                step.out.push(AbbaMsg::Conf { r, vals });
            }
        }

        // Quorums of CONF claims within the viable set pin the round; only
        // now is the coin sampled.
        if !self.coin_requested.contains(&r) && !vals.is_empty() {
            let conf = self.conf_track.entry(r).or_default();
            let grade = conf
                .grade_by(&self.es, |c| c.subset_of(vals))
                .unwrap_or(SupportGrade::None);
            if grade == SupportGrade::Strong {
                self.coin_requested.insert(r);
                step.events.push(AbbaEvent::CoinRequested { r, vals });
                let crs = self.coin_instance(r);
                match crs.sample(oracle) {
                    Ok(out) => {
                        if let Some(mixed) = step.absorb_crs(r, out) {
                            let s = expand_bit(mixed);
                            self.coin_value.insert(r, s);
                            step.events.push(AbbaEvent::CoinOpened { r, s });
                        }
                    }
                    Err(_) => step.rejected += 1,
                }
            }
        }

        // Round close: coin known and the viable set read at this moment.
        if self.coin_requested.contains(&r) && !self.round_closed.contains(&r) {
            if let Some(s) = self.coin_value.get(&r).copied() {
                let vals = self.values.get(&r).copied().unwrap_or_default();
                let next = match vals.singleton() {
                    Some(v) => {
                        if v == s && self.finish_sent.is_none() {
                            self.finish_sent = Some(s);
                            self.finish_track.record(&self.me.clone(), s);
                            step.out.push(AbbaMsg::Finish { v: s });
                        }
                        v
                    }
                    None => s,
                };
                self.round_closed.insert(r);
                self.est.insert(r + 1, next);
                if self.round == r {
                    self.round = r + 1;
                    step.events.push(AbbaEvent::RoundAdvanced { r: r + 1, est: next });
                }
            }
        }
    }
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
        nodes: BTreeMap<NodeId, AbbaInstance>,
        wire: Vec<(NodeId, AbbaMsg)>,
        decisions: BTreeMap<NodeId, (bool, u64)>,
    }

    impl Net {
        fn new(seed: u64) -> Self {
            let nodes = ["a", "b", "c", "d"]
                .into_iter()
                .map(|n| {
                    (
                        NodeId::from(n),
                        AbbaInstance::new(n.into(), es4(), registry4(), "abba/x"),
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

        fn absorb(&mut self, from: &NodeId, step: AbbaStep) {
            if let Some(d) = step.decided {
                self.decisions.insert(from.clone(), d);
            }
            self.wire
                .extend(step.out.into_iter().map(|m| (from.clone(), m)));
        }

        fn input(&mut self, node: &str, v: bool) {
            let id = NodeId::from(node);
            let step = self
                .nodes
                .get_mut(&id)
                .unwrap()
                .input(v, &self.oracle)
                .unwrap();
            self.absorb(&id, step);
        }

        fn run(&mut self) {
            while let Some((from, msg)) = self.wire.pop() {
                let ids: Vec<NodeId> = self.nodes.keys().cloned().collect();
                for id in ids {
                    if id == from {
                        continue;
                    }
                    let step =
                        self.nodes
                            .get_mut(&id)
                            .unwrap()
                            .handle(&from, msg.clone(), &self.oracle);
                    self.absorb(&id, step);
                }
            }
        }
    }

    #[test]
    fn unanimous_one_decides_one() {
        let mut net = Net::new(3);
        for n in ["a", "b", "c", "d"] {
            net.input(n, true);
        }
        net.run();
        assert_eq!(net.decisions.len(), 4);
        for (n, (v, _)) in &net.decisions {
            assert!(*v, "{n} decided 0 against unanimous 1");
        }
    }

    #[test]
    fn unanimous_zero_decides_zero() {
        let mut net = Net::new(3);
        for n in ["a", "b", "c", "d"] {
            net.input(n, false);
        }
        net.run();
        assert_eq!(net.decisions.len(), 4);
        assert!(net.decisions.values().all(|(v, _)| !*v));
    }

    #[test]
    fn split_inputs_agree_across_seeds() {
        for seed in 0..20 {
            let mut net = Net::new(seed);
            net.input("a", false);
            net.input("b", false);
            net.input("c", true);
            net.input("d", true);
            net.run();
            assert_eq!(net.decisions.len(), 4, "seed {seed}: not all decided");
            let bits: BTreeSet<bool> = net.decisions.values().map(|(v, _)| *v).collect();
            assert_eq!(bits.len(), 1, "seed {seed}: disagreement {:?}", net.decisions);
        }
    }

    #[test]
    fn double_input_rejected() {
        let mut inst = AbbaInstance::new("a".into(), es4(), registry4(), "abba/x");
        let oracle = CrsOracle::new(1);
        inst.input(true, &oracle).unwrap();
        assert!(inst.input(true, &oracle).is_err());
    }

    #[test]
    fn future_round_messages_buffer() {
        let mut inst = AbbaInstance::new("a".into(), es4(), registry4(), "abba/x");
        let oracle = CrsOracle::new(1);
        // Round-5 traffic before input: nothing may come out.
        let step = inst.handle(&"b".into(), AbbaMsg::Init { r: 5, v: true }, &oracle);
        assert!(step.out.is_empty());
        let step = inst.handle(&"c".into(), AbbaMsg::Init { r: 5, v: true }, &oracle);
        assert!(step.out.is_empty(), "weak relay must wait for the round");
        assert_eq!(inst.values(5), BitSet::empty());
    }

    #[test]
    fn finish_weak_support_relays_before_input() {
        let mut inst = AbbaInstance::new("a".into(), es4(), registry4(), "abba/x");
        let oracle = CrsOracle::new(1);
        inst.handle(&"b".into(), AbbaMsg::Finish { v: true }, &oracle);
        let step = inst.handle(&"c".into(), AbbaMsg::Finish { v: true }, &oracle);
        assert_eq!(step.out, vec![AbbaMsg::Finish { v: true }]);
    }

    #[test]
    fn strong_finish_support_decides_without_input() {
        let mut inst = AbbaInstance::new("a".into(), es4(), registry4(), "abba/x");
        let oracle = CrsOracle::new(1);
        inst.handle(&"b".into(), AbbaMsg::Finish { v: false }, &oracle);
        let step = inst.handle(&"c".into(), AbbaMsg::Finish { v: false }, &oracle);
        // Relay fired at weak support; own FINISH completes the quorum.
        assert!(step.decided.is_some());
        assert_eq!(inst.decided(), Some((false, 0)));
    }
}
