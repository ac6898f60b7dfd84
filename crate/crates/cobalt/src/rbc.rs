//! Reliable broadcast with an optional democratic gate.
//!
//! The classic echo/ready pattern: the broadcaster sends `INIT`, everyone
//! echoes the first content they can stand behind, strong echo support
//! yields `READY`, weak ready support is relayed (even against one's own
//! echo), and strong ready support accepts. Weak support always contains
//! an honest sender, which is what lets echoes and readies transfer
//! between linked nodes and keeps two linked nodes from accepting
//! different contents.
//!
//! The democratic variant gates the paths that *create* echo mass (direct
//! `INIT`, weak echo support) on a local verdict per content: `support`
//! lets the echo out, `oppose` is a permanent refusal, and an unset
//! verdict defers the decision. Paths that merely *finish* an already
//! supported broadcast (strong echo, weak/ready relays) are never gated,
//! so a node can help complete a broadcast it voted against.

use std::collections::BTreeMap;

use crate::support::{Recorded, SupportTracker};
use crate::topology::{EssentialSubset, NodeId, SupportGrade};
use crate::{Error, Result};

use crate::msg::RbcMsg;

/// How echo decisions are made.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbcMode {
    /// Echo the first plausible content unconditionally.
    Plain,
    /// Echo only contents with a local `support` verdict.
    Democratic,
}

/// What one delivery did to the instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RbcStep<C> {
    pub out: Vec<RbcMsg<C>>,
    /// Set when this call accepted the broadcast.
    pub accepted: Option<C>,
    /// Senders newly caught claiming two different contents for one label.
    pub equivocation: bool,
}

impl<C> Default for RbcStep<C> {
    fn default() -> Self {
        RbcStep { out: Vec::new(), accepted: None, equivocation: false }
    }
}

impl<C> RbcStep<C> {
    fn merge(&mut self, other: RbcStep<C>) {
        self.out.extend(other.out);
        if self.accepted.is_none() {
            self.accepted = other.accepted;
        }
        self.equivocation |= other.equivocation;
    }
}

/// One node's state for a single broadcast instance.
#[derive(Debug, Clone)]
pub struct RbcInstance<C> {
    me: NodeId,
    es: Vec<EssentialSubset>,
    mode: RbcMode,
    /// The only identity whose `INIT` counts; `None` for proposer-less
    /// instances fed via [`RbcInstance::learn`].
    broadcaster: Option<NodeId>,
    started: bool,
    init_content: Option<C>,
    verdicts: BTreeMap<C, bool>,
    echo_sent: Option<C>,
    ready_sent: Option<C>,
    accepted: Option<C>,
    echoes: SupportTracker<C>,
    readies: SupportTracker<C>,
}

impl<C: Clone + Eq + Ord> RbcInstance<C> {
    pub fn new(
        me: NodeId,
        es: Vec<EssentialSubset>,
        mode: RbcMode,
        broadcaster: Option<NodeId>,
    ) -> Self {
        RbcInstance {
            me,
            es,
            mode,
            broadcaster,
            started: false,
            init_content: None,
            verdicts: BTreeMap::new(),
            echo_sent: None,
            ready_sent: None,
            accepted: None,
            echoes: SupportTracker::new(),
            readies: SupportTracker::new(),
        }
    }

    pub fn accepted(&self) -> Option<&C> {
        self.accepted.as_ref()
    }

    pub fn echo_sent(&self) -> Option<&C> {
        self.echo_sent.as_ref()
    }

    /// Begin the broadcast. Only the designated broadcaster may call this,
    /// and only once.
    pub fn start(&mut self, content: C) -> Result<RbcStep<C>> {
        if self.broadcaster.as_ref() != Some(&self.me) {
            return Err(Error::ProtocolViolation(format!(
                "{} is not the broadcaster of this instance",
                self.me
            )));
        }
        if self.started {
            return Err(Error::ProtocolViolation(
                "broadcast already started".into(),
            ));
        }
        self.started = true;
        let mut step = RbcStep::default();
        step.out.push(RbcMsg::Init(content.clone()));
        // The broadcaster processes its own INIT immediately.
        if self.init_content.is_none() {
            self.init_content = Some(content);
        }
        step.merge(self.advance());
        Ok(step)
    }

    /// Feed a content that arrived outside any broadcaster's `INIT` (a
    /// proposal every node learns out of band). Takes the same gated path
    /// as a direct `INIT`.
    pub fn learn(&mut self, content: C) -> RbcStep<C> {
        if self.init_content.is_none() {
            self.init_content = Some(content);
        }
        self.advance()
    }

    /// Record a local verdict on `content`. Verdicts are immutable:
    /// flipping one is a protocol violation.
    pub fn set_support(&mut self, content: C, support: bool) -> Result<RbcStep<C>> {
        match self.verdicts.get(&content) {
            Some(prev) if *prev != support => {
                return Err(Error::ProtocolViolation(
                    "support verdict changed after being set".into(),
                ))
            }
            _ => {
                self.verdicts.insert(content, support);
            }
        }
        Ok(self.advance())
    }

    /// Re-evaluate transitions after external state changed (a deferred
    /// verdict may have become decidable).
    pub fn poke(&mut self) -> RbcStep<C> {
        self.advance()
    }

    pub fn handle(&mut self, sender: &NodeId, msg: RbcMsg<C>) -> RbcStep<C> {
        let mut step = RbcStep::default();
        match msg {
            RbcMsg::Init(content) => {
                // Only the broadcaster's INIT counts; anyone else claiming
                // to start the broadcast is misbehaving.
                if self.broadcaster.as_ref() == Some(sender) {
                    if self.init_content.is_none() {
                        self.init_content = Some(content);
                    } else if self.init_content.as_ref() != Some(&content) {
                        step.equivocation = true;
                    }
                } else {
                    step.equivocation = true;
                }
            }
            RbcMsg::Echo(content) => {
                if self.echoes.record(sender, content) == Recorded::Equivocation {
                    step.equivocation = true;
                }
            }
            RbcMsg::Ready(content) => {
                if self.readies.record(sender, content) == Recorded::Equivocation {
                    step.equivocation = true;
                }
            }
        }
        step.merge(self.advance());
        step
    }

    /// `true` if the node may echo `content` right now; `false` may mean
    /// "opposed" or merely "verdict still pending".
    fn may_echo(&self, content: &C) -> bool {
        match self.mode {
            RbcMode::Plain => true,
            RbcMode::Democratic => self.verdicts.get(content) == Some(&true),
        }
    }

    fn advance(&mut self) -> RbcStep<C> {
        let mut step = RbcStep::default();
        loop {
            let before = step.out.len();

            if self.echo_sent.is_none() {
                // Direct INIT (or learned content) first, then contents
                // with weak echo support, in content order.
                let mut candidates: Vec<C> = Vec::new();
                if let Some(c) = &self.init_content {
                    candidates.push(c.clone());
                }
                for (content, _) in self.echoes.by_content() {
                    if !candidates.contains(content) {
                        candidates.push(content.clone());
                    }
                }
                for c in candidates {
                    let weak_backed = self.init_content.as_ref() == Some(&c)
                        || self.echoes.grade(&self.es, &c).unwrap_or(SupportGrade::None)
                            >= SupportGrade::Weak;
                    if weak_backed && self.may_echo(&c) {
                        self.echo_sent = Some(c.clone());
                        self.echoes.record(&self.me.clone(), c.clone());
                        step.out.push(RbcMsg::Echo(c));
                        break;
                    }
                }
            }

            if self.ready_sent.is_none() {
                let mut ready_for: Option<C> = None;
                for (content, _) in self.echoes.by_content() {
                    if self.echoes.grade(&self.es, content).unwrap_or(SupportGrade::None)
                        == SupportGrade::Strong
                    {
                        ready_for = Some(content.clone());
                        break;
                    }
                }
                if ready_for.is_none() {
                    for (content, _) in self.readies.by_content() {
                        if self.readies.grade(&self.es, content).unwrap_or(SupportGrade::None)
                            >= SupportGrade::Weak
                        {
                            ready_for = Some(content.clone());
                            break;
                        }
                    }
                }
                if let Some(c) = ready_for {
                    self.ready_sent = Some(c.clone());
                    self.readies.record(&self.me.clone(), c.clone());
                    step.out.push(RbcMsg::Ready(c));
                }
            }

            if self.accepted.is_none() {
                for (content, _) in self.readies.by_content() {
                    if self.readies.grade(&self.es, content).unwrap_or(SupportGrade::None)
                        == SupportGrade::Strong
                    {
                        self.accepted = Some(content.clone());
                        step.accepted = Some(content.clone());
                        break;
                    }
                }
            }

            if step.out.len() == before {
                return step;
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

    fn cluster(mode: RbcMode, broadcaster: &str) -> BTreeMap<NodeId, RbcInstance<&'static str>> {
        ["a", "b", "c", "d"]
            .into_iter()
            .map(|n| {
                (
                    NodeId::from(n),
                    RbcInstance::new(n.into(), es4(), mode, Some(broadcaster.into())),
                )
            })
            .collect()
    }

    /// Deliver every queued message to every node until quiet.
    fn run_to_quiet(
        nodes: &mut BTreeMap<NodeId, RbcInstance<&'static str>>,
        mut wire: Vec<(NodeId, RbcMsg<&'static str>)>,
    ) {
        while let Some((from, msg)) = wire.pop() {
            for (id, inst) in nodes.iter_mut() {
                if *id == from {
                    continue;
                }
                let step = inst.handle(&from, msg.clone());
                wire.extend(step.out.into_iter().map(|m| (id.clone(), m)));
            }
        }
    }

    #[test]
    fn plain_broadcast_accepts_everywhere() {
        let mut nodes = cluster(RbcMode::Plain, "a");
        let start = nodes.get_mut(&"a".into()).unwrap().start("M").unwrap();
        let wire: Vec<_> = start.out.into_iter().map(|m| ("a".into(), m)).collect();
        run_to_quiet(&mut nodes, wire);
        for (id, inst) in &nodes {
            assert_eq!(inst.accepted(), Some(&"M"), "{id}");
        }
    }

    #[test]
    fn double_start_rejected() {
        let mut nodes = cluster(RbcMode::Plain, "a");
        let a = nodes.get_mut(&"a".into()).unwrap();
        a.start("M").unwrap();
        assert!(a.start("M").is_err());
        assert!(nodes.get_mut(&"b".into()).unwrap().start("M").is_err());
    }

    #[test]
    fn equivocating_broadcaster_cannot_split_acceptance() {
        // a sends M1 to b, M2 to c and d; echoes flow freely afterwards.
        let mut nodes = cluster(RbcMode::Plain, "a");
        let mut wire: Vec<(NodeId, RbcMsg<&'static str>)> = Vec::new();
        for (target, content) in [("b", "M1"), ("c", "M2"), ("d", "M2")] {
            let step = nodes
                .get_mut(&target.into())
                .unwrap()
                .handle(&"a".into(), RbcMsg::Init(content));
            wire.extend(step.out.into_iter().map(|m| (NodeId::from(target), m)));
        }
        run_to_quiet(&mut nodes, wire);
        let accepted: Vec<_> = nodes
            .values()
            .filter_map(|i| i.accepted().copied())
            .collect();
        let distinct: std::collections::BTreeSet<_> = accepted.iter().copied().collect();
        assert!(distinct.len() <= 1, "split acceptance: {accepted:?}");
    }

    #[test]
    fn democratic_gate_blocks_unsupported_content() {
        let mut nodes = cluster(RbcMode::Democratic, "a");
        for (id, inst) in nodes.iter_mut() {
            // Only a and b support; c and d oppose.
            let support = matches!(id.as_str(), "a" | "b");
            inst.set_support("M", support).unwrap();
        }
        let start = nodes.get_mut(&"a".into()).unwrap().start("M").unwrap();
        let wire: Vec<_> = start.out.into_iter().map(|m| ("a".into(), m)).collect();
        run_to_quiet(&mut nodes, wire);
        for (id, inst) in &nodes {
            assert_eq!(inst.accepted(), None, "{id} accepted without majority support");
        }
    }

    #[test]
    fn democratic_three_of_four_accepts() {
        let mut nodes = cluster(RbcMode::Democratic, "a");
        for (id, inst) in nodes.iter_mut() {
            let support = id.as_str() != "d";
            inst.set_support("M", support).unwrap();
        }
        let start = nodes.get_mut(&"a".into()).unwrap().start("M").unwrap();
        let wire: Vec<_> = start.out.into_iter().map(|m| ("a".into(), m)).collect();
        run_to_quiet(&mut nodes, wire);
        for (id, inst) in &nodes {
            assert_eq!(inst.accepted(), Some(&"M"), "{id}");
        }
    }

    #[test]
    fn deferred_verdict_echoes_after_support_lands() {
        let mut nodes = cluster(RbcMode::Democratic, "a");
        for (_, inst) in nodes.iter_mut() {
            if inst.me.as_str() != "b" {
                inst.set_support("M", true).unwrap();
            }
        }
        let start = nodes.get_mut(&"a".into()).unwrap().start("M").unwrap();
        let wire: Vec<_> = start.out.into_iter().map(|m| ("a".into(), m)).collect();
        run_to_quiet(&mut nodes, wire);
        // b deferred, so it echoed nothing; but readies from others let it
        // accept anyway once its verdict lands or readies pile up.
        let b = nodes.get_mut(&"b".into()).unwrap();
        assert_eq!(b.echo_sent(), None);
        assert_eq!(b.accepted(), Some(&"M"), "strong ready support needs no verdict");
    }

    #[test]
    fn verdict_flip_is_violation() {
        let mut inst: RbcInstance<&str> =
            RbcInstance::new("a".into(), es4(), RbcMode::Democratic, Some("a".into()));
        inst.set_support("M", false).unwrap();
        assert!(inst.set_support("M", true).is_err());
        inst.set_support("N", true).unwrap();
        inst.set_support("N", true).unwrap();
    }

    #[test]
    fn weak_echo_support_transfers_echo() {
        // b and c echo M; d never saw INIT but t+1=2 echoes pull its echo out.
        let mut d: RbcInstance<&str> =
            RbcInstance::new("d".into(), es4(), RbcMode::Plain, Some("a".into()));
        let step = d.handle(&"b".into(), RbcMsg::Echo("M"));
        assert!(step.out.is_empty());
        let step = d.handle(&"c".into(), RbcMsg::Echo("M"));
        assert_eq!(step.out, vec![RbcMsg::Echo("M"), RbcMsg::Ready("M")]);
    }

    #[test]
    fn weak_ready_relays_against_own_echo() {
        let mut d: RbcInstance<&str> =
            RbcInstance::new("d".into(), es4(), RbcMode::Plain, Some("a".into()));
        d.handle(&"a".into(), RbcMsg::Init("X"));
        assert_eq!(d.echo_sent(), Some(&"X"));
        d.handle(&"b".into(), RbcMsg::Ready("Y"));
        let step = d.handle(&"c".into(), RbcMsg::Ready("Y"));
        assert_eq!(step.out, vec![RbcMsg::Ready("Y")], "ready relay ignores own echo");
    }

    #[test]
    fn init_from_non_broadcaster_flagged() {
        let mut b: RbcInstance<&str> =
            RbcInstance::new("b".into(), es4(), RbcMode::Plain, Some("a".into()));
        let step = b.handle(&"c".into(), RbcMsg::Init("M"));
        assert!(step.equivocation);
        assert_eq!(b.echo_sent(), None);
    }

    #[test]
    fn learned_content_takes_gated_path() {
        let mut nodes: BTreeMap<NodeId, RbcInstance<&'static str>> = ["a", "b", "c", "d"]
            .into_iter()
            .map(|n| {
                (
                    NodeId::from(n),
                    RbcInstance::new(n.into(), es4(), RbcMode::Democratic, None),
                )
            })
            .collect();
        let mut wire = Vec::new();
        for (id, inst) in nodes.iter_mut() {
            inst.set_support("P", true).unwrap();
            let step = inst.learn("P");
            wire.extend(step.out.into_iter().map(|m| (id.clone(), m)));
        }
        run_to_quiet(&mut nodes, wire);
        for (id, inst) in &nodes {
            assert_eq!(inst.accepted(), Some(&"P"), "{id}");
        }
    }
}
