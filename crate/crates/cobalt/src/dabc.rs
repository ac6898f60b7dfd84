//! Governance node: amendment dissemination, periodic stamping, per-slot
//! agreement, and contiguous ratification.
//!
//! Each amendment travels through a gated broadcast instance whose echo
//! verdict is "the local policy backs it and every earlier slot is already
//! ratified here". Accepted amendments sit in a pending set that gets
//! stamped into CHECK messages at every tick boundary. When one pair draws
//! a full quorum of stamps in every declared subset, nodes broadcast
//! ACCEPT claims; a strong ACCEPT quorum turns the pair into a candidate
//! for that slot's one-shot agreement and closes the slot locally.
//! Decisions ratify strictly in slot order, and ratifying an amendment
//! that allows a new randomizing key makes that key part of the registry
//! for every later slot.

use std::collections::{BTreeMap, BTreeSet};

use crate::crs::{CrsOracle, KeySpec};
use crate::msg::{
    Amendment, AmendmentId, AmendmentPayload, DabcMsg, KeyId, MvbaMsg, RbcMsg, SlotPair, Val,
};
use crate::mvba::{MvbaEvent, MvbaInstance, MvbaStep};
use crate::rbc::{RbcInstance, RbcMode, RbcStep};
use crate::support::SupportTracker;
use crate::topology::{support_by, EssentialSubset, NodeId, SupportGrade};
use crate::{Error, Result};

/// Stamping cadence and optional activation advance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeParams {
    /// Distance between stamp boundaries, in ticks.
    pub tick_interval: u64,
    /// Added to the winning boundary to produce the activation time.
    pub advance: u64,
}

impl Default for TimeParams {
    fn default() -> Self {
        TimeParams { tick_interval: 10, advance: 0 }
    }
}

/// Trace of observable governance state changes.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum DabcEvent {
    /// This node put `id` up for slot `slot`.
    Proposed { id: AmendmentId, slot: u64 },
    /// The gated broadcast for `id` completed here.
    DisseminationAccepted { id: AmendmentId, slot: u64 },
    /// A stamped pair reached candidate status for its slot.
    CandidateAdded { slot: u64, id: AmendmentId, activation: u64 },
    /// The node stopped stamping `slot` after boundary `tau`.
    SlotClosed { slot: u64, tau: u64 },
    /// The slot agreement settled.
    SlotDecided { slot: u64, id: AmendmentId, activation: u64, rounds: u64 },
    /// `id` became law at `slot`.
    Ratified { slot: u64, id: AmendmentId, activation: u64 },
    /// A ratified amendment added `key` to the registry for later slots.
    KeyRegistered { key: KeyId, slot: u64 },
    /// A knowledge query for target time `target` completed.
    WaitCompleted { target: u64, ratified: Vec<AmendmentId> },
    /// Per-slot agreement trace.
    Slot { slot: u64, event: MvbaEvent },
}

/// What one call did to the node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DabcStep {
    pub out: Vec<DabcMsg>,
    pub events: Vec<DabcEvent>,
    pub rejected: u32,
    /// Fatal index collision inside a slot agreement.
    pub collision: Option<String>,
    /// A sender was caught claiming two different stamp sets for one boundary.
    pub equivocation: bool,
}

impl DabcStep {
    fn merge(&mut self, other: DabcStep) {
        self.out.extend(other.out);
        self.events.extend(other.events);
        self.rejected += other.rejected;
        if self.collision.is_none() {
            self.collision = other.collision;
        }
        self.equivocation |= other.equivocation;
    }

    fn absorb_rbc(&mut self, id: &AmendmentId, step: RbcStep<Amendment>) -> Option<Amendment> {
        for m in step.out {
            self.out.push(DabcMsg::Drbc { id: id.clone(), msg: m });
        }
        self.equivocation |= step.equivocation;
        step.accepted
    }

    fn absorb_mvba(&mut self, slot: u64, step: MvbaStep) -> Option<(Val, u64)> {
        for m in step.out {
            self.out.push(DabcMsg::Slot { slot, msg: m });
        }
        for e in step.events {
            self.events.push(DabcEvent::Slot { slot, event: e });
        }
        self.rejected += step.rejected;
        if self.collision.is_none() {
            self.collision = step.collision.map(|c| format!("slot {slot}: {c}"));
        }
        step.decided
    }
}

/// An outstanding knowledge query: "tell me every ratification that
/// activates before `target`, once stamps prove nothing else can".
#[derive(Debug, Clone)]
struct WaitQuery {
    target: u64,
    done: bool,
}

/// One node's view of the governance protocol.
#[derive(Debug)]
pub struct DabcNode {
    me: NodeId,
    es: Vec<EssentialSubset>,
    time: TimeParams,
    pipeline: bool,
    /// Policy verdicts: per-amendment overrides plus a default.
    support_rules: BTreeMap<AmendmentId, bool>,
    default_support: bool,
    /// Every key layout this deployment could ever activate.
    known_keys: BTreeMap<KeyId, KeySpec>,
    /// Keys active from genesis.
    bootstrap: BTreeSet<KeyId>,
    /// Keys activated by ratification, with the slot that did it.
    registered: BTreeMap<KeyId, u64>,

    drbc: BTreeMap<AmendmentId, RbcInstance<Amendment>>,
    contents: BTreeMap<AmendmentId, Amendment>,
    proposed: BTreeSet<AmendmentId>,

    /// Pairs accepted by dissemination and not yet closed out.
    pending: BTreeSet<SlotPair>,
    /// Stamp sets by (origin, boundary); first claim wins.
    checks: BTreeMap<(NodeId, u64), BTreeSet<SlotPair>>,
    check_sent: BTreeSet<u64>,
    last_tick: Option<u64>,

    accept_track: BTreeMap<(SlotPair, u64), SupportTracker<()>>,
    accept_sent: BTreeSet<(SlotPair, u64)>,
    stamped: BTreeSet<(SlotPair, u64)>,

    mvba: BTreeMap<u64, MvbaInstance>,
    closed: BTreeSet<u64>,
    decided: BTreeMap<u64, (AmendmentId, u64, u64)>,
    ratified: Vec<(u64, AmendmentId, u64)>,
    /// Number of contiguously ratified slots; also the next slot to ratify.
    next_slot: u64,
    /// Ratified slots whose payload we have not seen yet.
    pending_apply: BTreeSet<u64>,

    /// Slot traffic held back until the slot's prefix is ratified here,
    /// so every participant derives the same key registry.
    held_msgs: BTreeMap<u64, Vec<(NodeId, MvbaMsg)>>,
    held_inputs: BTreeMap<u64, Vec<Val>>,

    waits: Vec<WaitQuery>,
}

impl DabcNode {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        me: NodeId,
        es: Vec<EssentialSubset>,
        time: TimeParams,
        known_keys: Vec<KeySpec>,
        bootstrap: Vec<KeyId>,
        support_rules: BTreeMap<AmendmentId, bool>,
        default_support: bool,
        pipeline: bool,
    ) -> Self {
        DabcNode {
            me,
            es,
            time,
            pipeline,
            support_rules,
            default_support,
            known_keys: known_keys.into_iter().map(|k| (k.id.clone(), k)).collect(),
            bootstrap: bootstrap.into_iter().collect(),
            registered: BTreeMap::new(),
            drbc: BTreeMap::new(),
            contents: BTreeMap::new(),
            proposed: BTreeSet::new(),
            pending: BTreeSet::new(),
            checks: BTreeMap::new(),
            check_sent: BTreeSet::new(),
            last_tick: None,
            accept_track: BTreeMap::new(),
            accept_sent: BTreeSet::new(),
            stamped: BTreeSet::new(),
            mvba: BTreeMap::new(),
            closed: BTreeSet::new(),
            decided: BTreeMap::new(),
            ratified: Vec::new(),
            next_slot: 0,
            pending_apply: BTreeSet::new(),
            held_msgs: BTreeMap::new(),
            held_inputs: BTreeMap::new(),
            waits: Vec::new(),
        }
    }

    /// Ratifications so far, in slot order: (slot, id, activation).
    pub fn ratified(&self) -> &[(u64, AmendmentId, u64)] {
        &self.ratified
    }

    pub fn ratified_slot(&self, slot: u64) -> bool {
        slot < self.next_slot
    }

    pub fn pending_pairs(&self) -> &BTreeSet<SlotPair> {
        &self.pending
    }

    pub fn closed_slots(&self) -> &BTreeSet<u64> {
        &self.closed
    }

    pub fn content(&self, id: &AmendmentId) -> Option<&Amendment> {
        self.contents.get(id)
    }

    /// Keys active for agreements at `slot`: genesis keys plus everything
    /// activated by a ratification strictly below it.
    pub fn registry_for_slot(&self, slot: u64) -> Vec<KeySpec> {
        self.known_keys
            .values()
            .filter(|k| {
                self.bootstrap.contains(&k.id)
                    || self.registered.get(&k.id).is_some_and(|s| *s < slot)
            })
            .cloned()
            .collect()
    }

    fn supports(&self, id: &AmendmentId) -> bool {
        *self.support_rules.get(id).unwrap_or(&self.default_support)
    }

    /// Put an amendment up for adoption. The proposer also processes its
    /// own opening message immediately.
    pub fn propose(&mut self, a: Amendment) -> Result<DabcStep> {
        let id = a.id();
        if !self.proposed.insert(id.clone()) {
            return Err(Error::ProtocolViolation(format!("{id} already proposed here")));
        }
        let mut step = DabcStep::default();
        step.events.push(DabcEvent::Proposed { id: id.clone(), slot: a.slot });
        step.out.push(DabcMsg::Drbc { id: id.clone(), msg: RbcMsg::Init(a.clone()) });
        step.merge(self.learn_proposal(a));
        Ok(step)
    }

    /// Feed a proposal every node knows out of band (no opening message).
    pub fn learn_proposal(&mut self, a: Amendment) -> DabcStep {
        let id = a.id();
        let mut step = DabcStep::default();
        self.contents.insert(id.clone(), a.clone());
        step.merge(self.try_pending_apply());
        self.ensure_drbc(&id);
        if let Some(c) = {
            let pre = self.sync_verdict(&id);
            step.absorb_rbc(&id, pre)
        } {
            step.merge(self.on_dissemination_accept(c));
        }
        let inner = self.drbc.get_mut(&id).expect("instance just ensured").learn(a);
        if let Some(c) = step.absorb_rbc(&id, inner) {
            step.merge(self.on_dissemination_accept(c));
        }
        step
    }

    /// Advance to tick `tau`. At each stamp boundary the node broadcasts
    /// its pending set exactly once.
    pub fn tick(&mut self, tau: u64, oracle: &CrsOracle) -> Result<DabcStep> {
        if tau == 0 || tau % self.time.tick_interval != 0 {
            return Err(Error::Scheduling(format!(
                "tick {tau} is not a stamp boundary (interval {})",
                self.time.tick_interval
            )));
        }
        if self.last_tick.is_some_and(|t| tau <= t) {
            return Err(Error::Scheduling(format!("tick {tau} is not after {:?}", self.last_tick)));
        }
        self.last_tick = Some(tau);
        let mut step = DabcStep::default();
        if self.check_sent.insert(tau) {
            let snapshot = self.pending.clone();
            step.out.push(DabcMsg::Check { tau, pending: snapshot.clone() });
            step.merge(self.record_check(self.me.clone(), tau, snapshot, oracle));
        }
        Ok(step)
    }

    /// Ask to be told once every ratification activating before `target`
    /// is provably known. Resolved from stamp evidence as it arrives.
    pub fn request_wait(&mut self, target: u64) -> DabcStep {
        self.waits.push(WaitQuery { target, done: false });
        self.eval_waits()
    }

    pub fn handle(&mut self, sender: &NodeId, msg: DabcMsg, oracle: &CrsOracle) -> DabcStep {
        match msg {
            DabcMsg::Drbc { id, msg } => self.handle_drbc(sender, id, msg),
            DabcMsg::Check { tau, pending } => {
                self.record_check(sender.clone(), tau, pending, oracle)
            }
            DabcMsg::Accept { pair, tau } => self.record_accept(sender.clone(), pair, tau, oracle),
            DabcMsg::Slot { slot, msg } => self.handle_slot(sender, slot, msg, oracle),
        }
    }

    fn ensure_drbc(&mut self, id: &AmendmentId) {
        if !self.drbc.contains_key(id) {
            self.drbc.insert(
                id.clone(),
                RbcInstance::new(self.me.clone(), self.es.clone(), RbcMode::Democratic, None),
            );
        }
    }

    /// Decide the echo verdict for `id` if it is decidable: opposition is
    /// immediate, backing waits until every earlier slot is ratified.
    fn sync_verdict(&mut self, id: &AmendmentId) -> RbcStep<Amendment> {
        let Some(content) = self.contents.get(id).cloned() else {
            return RbcStep::default();
        };
        let verdict = if !self.supports(id) {
            false
        } else if self.next_slot >= content.slot {
            true
        } else {
            return RbcStep::default();
        };
        let inst = self.drbc.get_mut(id).expect("verdicts only sync on live instances");
        inst.set_support(content, verdict).expect("policy verdicts never flip")
    }

    /// Re-run deferred verdicts after the ratified prefix grew.
    fn resync_all_verdicts(&mut self) -> DabcStep {
        let ids: Vec<AmendmentId> = self.drbc.keys().cloned().collect();
        let mut step = DabcStep::default();
        for id in ids {
            let pre = self.sync_verdict(&id);
            if let Some(c) = step.absorb_rbc(&id, pre) {
                step.merge(self.on_dissemination_accept(c));
            }
        }
        step
    }

    fn handle_drbc(&mut self, sender: &NodeId, id: AmendmentId, msg: RbcMsg<Amendment>) -> DabcStep {
        let mut step = DabcStep::default();
        let content = match &msg {
            RbcMsg::Init(c) | RbcMsg::Echo(c) | RbcMsg::Ready(c) => c.clone(),
        };
        if content.id() != id {
            step.rejected += 1;
            return step;
        }
        if !self.contents.contains_key(&id) {
            self.contents.insert(id.clone(), content.clone());
            step.merge(self.try_pending_apply());
        }
        self.ensure_drbc(&id);
        if let Some(c) = {
            let pre = self.sync_verdict(&id);
            step.absorb_rbc(&id, pre)
        } {
            step.merge(self.on_dissemination_accept(c));
        }
        let inst = self.drbc.get_mut(&id).expect("instance just ensured");
        let inner = match msg {
            // The opener's identity is irrelevant: the id pins the content.
            RbcMsg::Init(c) => inst.learn(c),
            other => inst.handle(sender, other),
        };
        if let Some(c) = step.absorb_rbc(&id, inner) {
            step.merge(self.on_dissemination_accept(c));
        }
        step
    }

    fn on_dissemination_accept(&mut self, a: Amendment) -> DabcStep {
        let id = a.id();
        let mut step = DabcStep::default();
        step.events.push(DabcEvent::DisseminationAccepted { id: id.clone(), slot: a.slot });
        if !self.ratified_slot(a.slot) && !self.closed.contains(&a.slot) {
            self.pending.insert(SlotPair { slot: a.slot, id });
        }
        step
    }

    fn record_check(
        &mut self,
        origin: NodeId,
        tau: u64,
        pending: BTreeSet<SlotPair>,
        oracle: &CrsOracle,
    ) -> DabcStep {
        let mut step = DabcStep::default();
        match self.checks.get(&(origin.clone(), tau)) {
            Some(prev) if *prev != pending => {
                step.equivocation = true;
                return step;
            }
            Some(_) => return step,
            None => {
                self.checks.insert((origin, tau), pending);
            }
        }
        step.merge(self.eval_accepts(tau, oracle));
        step.merge(self.eval_waits());
        step
    }

    /// Scan every pair stamped at `tau` for a full quorum of stamps.
    fn eval_accepts(&mut self, tau: u64, oracle: &CrsOracle) -> DabcStep {
        let mut step = DabcStep::default();
        let pairs: BTreeSet<SlotPair> = self
            .checks
            .iter()
            .filter(|((_, t), _)| *t == tau)
            .flat_map(|(_, set)| set.iter().cloned())
            .collect();
        for pair in pairs {
            if self.ratified_slot(pair.slot) || self.accept_sent.contains(&(pair.clone(), tau)) {
                continue;
            }
            let grade = support_by(&self.es, |m| {
                self.checks.get(&(m.clone(), tau)).is_some_and(|s| s.contains(&pair))
            })
            .unwrap_or(SupportGrade::None);
            if grade == SupportGrade::Strong {
                self.accept_sent.insert((pair.clone(), tau));
                step.out.push(DabcMsg::Accept { pair: pair.clone(), tau });
                step.merge(self.record_accept(self.me.clone(), pair, tau, oracle));
            }
        }
        step
    }

    fn record_accept(
        &mut self,
        sender: NodeId,
        pair: SlotPair,
        tau: u64,
        oracle: &CrsOracle,
    ) -> DabcStep {
        let mut step = DabcStep::default();
        if self.ratified_slot(pair.slot) {
            step.rejected += 1;
            return step;
        }
        let key = (pair.clone(), tau);
        self.accept_track.entry(key.clone()).or_default().record(&sender, ());
        if self.accept_track[&key].grade(&self.es, &()).unwrap_or(SupportGrade::None) >= SupportGrade::Weak
            && !self.accept_sent.contains(&key)
        {
            self.accept_sent.insert(key.clone());
            step.out.push(DabcMsg::Accept { pair: pair.clone(), tau });
            step.merge(self.record_accept(self.me.clone(), pair.clone(), tau, oracle));
        }
        if self.accept_track[&key].grade(&self.es, &()).unwrap_or(SupportGrade::None) == SupportGrade::Strong
            && self.stamped.insert(key)
        {
            let activation = tau + self.time.advance;
            let val = Val::Amendment { id: pair.id.clone(), activation };
            step.events.push(DabcEvent::CandidateAdded {
                slot: pair.slot,
                id: pair.id.clone(),
                activation,
            });
            if self.closed.insert(pair.slot) {
                self.pending.retain(|p| p.slot != pair.slot);
                step.events.push(DabcEvent::SlotClosed { slot: pair.slot, tau });
            }
            step.merge(self.add_candidate(pair.slot, val, oracle));
        }
        step
    }

    /// Queue a candidate into the slot agreement, holding it back until
    /// the slot's prefix is ratified locally.
    fn add_candidate(&mut self, slot: u64, val: Val, oracle: &CrsOracle) -> DabcStep {
        let mut step = DabcStep::default();
        if self.next_slot < slot {
            self.held_inputs.entry(slot).or_default().push(val);
            return step;
        }
        self.ensure_mvba(slot);
        let inner =
            self.mvba.get_mut(&slot).expect("instance just ensured").add_valid_input(val, oracle);
        if let Some(d) = step.absorb_mvba(slot, inner) {
            step.merge(self.on_slot_decided(slot, d, oracle));
        }
        step
    }

    fn ensure_mvba(&mut self, slot: u64) {
        if !self.mvba.contains_key(&slot) {
            let registry = self.registry_for_slot(slot);
            self.mvba.insert(
                slot,
                MvbaInstance::new(
                    self.me.clone(),
                    self.es.clone(),
                    registry,
                    format!("dabc/slot{slot}"),
                    self.pipeline,
                ),
            );
        }
    }

    fn handle_slot(
        &mut self,
        sender: &NodeId,
        slot: u64,
        msg: MvbaMsg,
        oracle: &CrsOracle,
    ) -> DabcStep {
        let mut step = DabcStep::default();
        if self.next_slot < slot {
            self.held_msgs.entry(slot).or_default().push((sender.clone(), msg));
            return step;
        }
        self.ensure_mvba(slot);
        let inner =
            self.mvba.get_mut(&slot).expect("instance just ensured").handle(sender, msg, oracle);
        if let Some(d) = step.absorb_mvba(slot, inner) {
            step.merge(self.on_slot_decided(slot, d, oracle));
        }
        step
    }

    fn on_slot_decided(&mut self, slot: u64, (val, rounds): (Val, u64), oracle: &CrsOracle) -> DabcStep {
        let mut step = DabcStep::default();
        let Val::Amendment { id, activation } = val else {
            step.collision = Some(format!("slot {slot} decided a non-amendment value"));
            return step;
        };
        if self.decided.contains_key(&slot) {
            return step;
        }
        step.events.push(DabcEvent::SlotDecided { slot, id: id.clone(), activation, rounds });
        self.decided.insert(slot, (id, activation, rounds));
        step.merge(self.drain_ratifications(oracle));
        step
    }

    /// Ratify every decided slot at the front of the queue, in order, and
    /// replay work that was held back waiting for the prefix.
    fn drain_ratifications(&mut self, oracle: &CrsOracle) -> DabcStep {
        let mut step = DabcStep::default();
        while let Some((id, activation, _)) = self.decided.get(&self.next_slot).cloned() {
            let slot = self.next_slot;
            self.ratified.push((slot, id.clone(), activation));
            self.next_slot += 1;
            step.events.push(DabcEvent::Ratified { slot, id: id.clone(), activation });
            step.merge(self.apply_payload(slot, &id));
            step.merge(self.resync_all_verdicts());
            step.merge(self.eval_waits());
            let newly = self.next_slot;
            let inputs = self.held_inputs.remove(&newly).unwrap_or_default();
            let msgs = self.held_msgs.remove(&newly).unwrap_or_default();
            for v in inputs {
                step.merge(self.add_candidate(newly, v, oracle));
            }
            for (sender, m) in msgs {
                step.merge(self.handle_slot(&sender, newly, m, oracle));
            }
        }
        step
    }

    fn apply_payload(&mut self, slot: u64, id: &AmendmentId) -> DabcStep {
        let mut step = DabcStep::default();
        match self.contents.get(id) {
            None => {
                // Payload unseen; dissemination will deliver it eventually.
                self.pending_apply.insert(slot);
            }
            Some(a) => {
                if let AmendmentPayload::AllowKey(key) = &a.payload {
                    if self.known_keys.contains_key(key) {
                        self.registered.entry(key.clone()).or_insert(slot);
                        step.events.push(DabcEvent::KeyRegistered { key: key.clone(), slot });
                    } else {
                        step.rejected += 1;
                    }
                }
            }
        }
        step
    }

    fn try_pending_apply(&mut self) -> DabcStep {
        let mut step = DabcStep::default();
        let slots: Vec<u64> = self.pending_apply.iter().copied().collect();
        for slot in slots {
            let id = self
                .ratified
                .iter()
                .find(|(s, _, _)| *s == slot)
                .map(|(_, id, _)| id.clone())
                .expect("pending applications only exist for ratified slots");
            if self.contents.contains_key(&id) {
                self.pending_apply.remove(&slot);
                step.merge(self.apply_payload(slot, &id));
            }
        }
        step
    }

    /// Resolve knowledge queries: a query for `target` completes once, for
    /// every boundary up to the effective horizon, a full quorum of each
    /// subset stamped sets whose every pair is ratified here.
    fn eval_waits(&mut self) -> DabcStep {
        let mut step = DabcStep::default();
        let interval = self.time.tick_interval;
        let next_slot = self.next_slot;
        let checks = &self.checks;
        let es = &self.es;
        let mut fired: Vec<u64> = Vec::new();
        for q in self.waits.iter_mut().filter(|q| !q.done) {
            let bound = q.target.saturating_sub(self.time.advance);
            let mut tau = interval;
            let mut ok = true;
            while tau <= bound && ok {
                ok = es.iter().all(|s| {
                    let known = s
                        .members
                        .iter()
                        .filter(|m| {
                            checks
                                .get(&((*m).clone(), tau))
                                .is_some_and(|set| set.iter().all(|p| p.slot < next_slot))
                        })
                        .count();
                    known >= s.q
                });
                tau += interval;
            }
            if ok {
                q.done = true;
                fired.push(q.target);
            }
        }
        for target in fired {
            let ratified = self
                .ratified
                .iter()
                .filter(|(_, _, act)| *act < target)
                .map(|(_, id, _)| id.clone())
                .collect();
            step.events.push(DabcEvent::WaitCompleted { target, ratified });
        }
        step
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crs::CrsOracle;
    use crate::msg::AmendmentPayload;

    fn ids(names: &[&str]) -> Vec<NodeId> {
        names.iter().map(|n| NodeId::new(*n)).collect()
    }

    fn flat(nodes: &[NodeId], t: usize, q: usize) -> Vec<EssentialSubset> {
        vec![EssentialSubset { members: nodes.iter().cloned().collect(), t, q }]
    }

    struct Net {
        nodes: Vec<NodeId>,
        state: BTreeMap<NodeId, DabcNode>,
        wire: Vec<(NodeId, DabcMsg)>,
        oracle: CrsOracle,
    }

    impl Net {
        /// A flat four-node net with one genesis key everyone holds, plus
        /// any extra key layouts the scenario might activate later.
        fn new(names: &[&str], t: usize, extra: Vec<KeySpec>) -> Self {
            let nodes = ids(names);
            let es = flat(&nodes, t, nodes.len() - t);
            let genesis = KeySpec { id: KeyId::new("genesis"), holders: es.clone() };
            let mut keys = vec![genesis];
            keys.extend(extra);
            let oracle = CrsOracle::new(7);
            let state = nodes
                .iter()
                .map(|n| {
                    (
                        n.clone(),
                        DabcNode::new(
                            n.clone(),
                            es.clone(),
                            TimeParams { tick_interval: 10, advance: 0 },
                            keys.clone(),
                            vec![KeyId::new("genesis")],
                            BTreeMap::new(),
                            true,
                            false,
                        ),
                    )
                })
                .collect();
            Net { nodes, state, wire: Vec::new(), oracle }
        }

        fn push(&mut self, from: &NodeId, step: DabcStep) -> Vec<DabcEvent> {
            assert!(step.collision.is_none(), "index collision: {:?}", step.collision);
            for m in step.out {
                self.wire.push((from.clone(), m));
            }
            step.events
        }

        fn settle(&mut self) -> Vec<(NodeId, DabcEvent)> {
            let mut log = Vec::new();
            while let Some((from, msg)) = self.wire.pop() {
                for to in self.nodes.clone() {
                    if to == from {
                        continue;
                    }
                    let step =
                        self.state.get_mut(&to).unwrap().handle(&from, msg.clone(), &self.oracle);
                    for e in self.push(&to, step) {
                        log.push((to.clone(), e));
                    }
                }
            }
            log
        }

        fn tick_all(&mut self, tau: u64) -> Vec<(NodeId, DabcEvent)> {
            let mut log = Vec::new();
            for n in self.nodes.clone() {
                let step = self.state.get_mut(&n).unwrap().tick(tau, &self.oracle).unwrap();
                for e in self.push(&n, step) {
                    log.push((n.clone(), e));
                }
            }
            log.extend(self.settle());
            log
        }
    }

    fn text(slot: u64, s: &str) -> Amendment {
        Amendment { payload: AmendmentPayload::Text(s.into()), slot }
    }

    #[test]
    fn single_amendment_ratifies_everywhere() {
        let mut net = Net::new(&["a", "b", "c", "d"], 1, Vec::new());
        let a = text(0, "raise-reserve");
        let id = a.id();
        let proposer = net.nodes[0].clone();
        let step = net.state.get_mut(&proposer).unwrap().propose(a).unwrap();
        net.push(&proposer, step);
        net.settle();
        net.tick_all(10);
        for n in &net.nodes {
            let r = net.state[n].ratified();
            assert_eq!(r.len(), 1, "{n} ratified {r:?}");
            assert_eq!(r[0], (0, id.clone(), 10));
        }
    }

    #[test]
    fn opposed_amendment_never_ratifies() {
        let mut net = Net::new(&["a", "b", "c", "d"], 1, Vec::new());
        let a = text(0, "bad-idea");
        for n in net.nodes.clone() {
            net.state.get_mut(&n).unwrap().support_rules.insert(a.id(), false);
        }
        let proposer = net.nodes[0].clone();
        let step = net.state.get_mut(&proposer).unwrap().propose(a).unwrap();
        net.push(&proposer, step);
        net.settle();
        for tau in [10, 20, 30] {
            net.tick_all(tau);
        }
        for n in &net.nodes {
            assert!(net.state[n].ratified().is_empty());
            assert!(net.state[n].pending_pairs().is_empty(), "nothing should pass dissemination");
        }
    }

    #[test]
    fn slots_ratify_in_order() {
        let mut net = Net::new(&["a", "b", "c", "d"], 1, Vec::new());
        let first = text(0, "one");
        let second = text(1, "two");
        // Everyone learns both proposals; slot 1 defers until slot 0 lands.
        for n in net.nodes.clone() {
            let s1 = net.state.get_mut(&n).unwrap().learn_proposal(first.clone());
            net.push(&n, s1);
            let s2 = net.state.get_mut(&n).unwrap().learn_proposal(second.clone());
            net.push(&n, s2);
        }
        net.settle();
        net.tick_all(10);
        net.tick_all(20);
        for n in &net.nodes {
            let r = net.state[n].ratified();
            assert_eq!(
                r.iter().map(|(s, id, _)| (*s, id.clone())).collect::<Vec<_>>(),
                vec![(0, first.id()), (1, second.id())],
                "{n} out of order: {r:?}"
            );
        }
    }

    #[test]
    fn allow_key_activates_registry_for_later_slots() {
        let nodes = ids(&["a", "b", "c", "d"]);
        let es = flat(&nodes, 1, 3);
        let key = KeySpec { id: KeyId::new("gov"), holders: es.clone() };
        let mut net = Net::new(&["a", "b", "c", "d"], 1, vec![key]);
        let allow = Amendment { payload: AmendmentPayload::AllowKey(KeyId::new("gov")), slot: 0 };
        let proposer = net.nodes[0].clone();
        let step = net.state.get_mut(&proposer).unwrap().propose(allow).unwrap();
        net.push(&proposer, step);
        net.settle();
        let log = net.tick_all(10);
        assert!(
            log.iter().any(|(_, e)| matches!(e, DabcEvent::KeyRegistered { slot: 0, .. })),
            "no key registration in {log:?}"
        );
        for n in &net.nodes {
            // Genesis is always active; the allowed key only from slot 1 on.
            assert_eq!(net.state[n].registry_for_slot(0).len(), 1);
            assert_eq!(net.state[n].registry_for_slot(1).len(), 2);
        }
    }

    #[test]
    fn wait_query_completes_with_ratified_payload() {
        let mut net = Net::new(&["a", "b", "c", "d"], 1, Vec::new());
        let a = text(0, "fee-change");
        let id = a.id();
        let proposer = net.nodes[0].clone();
        let step = net.state.get_mut(&proposer).unwrap().propose(a).unwrap();
        net.push(&proposer, step);
        net.settle();
        net.tick_all(10);
        // Activation is 10; a query targeting 15 must include it and must
        // already be resolvable from the stamps at boundary 10.
        let asker = net.nodes[2].clone();
        let step = net.state.get_mut(&asker).unwrap().request_wait(15);
        let events = net.push(&asker, step);
        let done: Vec<_> = events
            .iter()
            .filter_map(|e| match e {
                DabcEvent::WaitCompleted { target, ratified } => Some((*target, ratified.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(done, vec![(15, vec![id])]);
    }

    #[test]
    fn wait_query_defers_until_boundary_stamps_arrive() {
        let mut net = Net::new(&["a", "b", "c", "d"], 1, Vec::new());
        let asker = net.nodes[0].clone();
        let step = net.state.get_mut(&asker).unwrap().request_wait(25);
        let events = net.push(&asker, step);
        assert!(events.is_empty(), "no stamps yet, query must stay open");
        net.tick_all(10);
        let log = net.tick_all(20);
        assert!(
            log.iter().any(|(n, e)| n == &asker
                && matches!(e, DabcEvent::WaitCompleted { target: 25, .. })),
            "query for 25 still open after boundary 20: {log:?}"
        );
    }

    #[test]
    fn contested_slot_decides_one_of_the_candidates() {
        let mut net = Net::new(&["a", "b", "c", "d"], 1, Vec::new());
        let x = text(0, "x");
        let y = text(0, "y");
        for n in net.nodes.clone() {
            let s1 = net.state.get_mut(&n).unwrap().learn_proposal(x.clone());
            net.push(&n, s1);
            let s2 = net.state.get_mut(&n).unwrap().learn_proposal(y.clone());
            net.push(&n, s2);
        }
        net.settle();
        net.tick_all(10);
        let winners: BTreeSet<_> = net
            .nodes
            .iter()
            .map(|n| {
                let r = net.state[n].ratified();
                assert_eq!(r.len(), 1, "{n}: {r:?}");
                r[0].1.clone()
            })
            .collect();
        assert_eq!(winners.len(), 1, "nodes disagree: {winners:?}");
        assert!(winners.iter().all(|w| *w == x.id() || *w == y.id()));
    }
}
