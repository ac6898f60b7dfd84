//! Transaction ordering: view-scoped block acceptance, the view-change
//! protocol, and the censorship-resilient fallback chain.
//!
//! A view is a designated ordering committee. Its members emit blocks with
//! increasing sequence numbers; the surrounding network accepts each block
//! through an echo/ready/check cascade gated so that sequences fill in
//! order. When a view looks dead, nodes campaign to replace it: a locked
//! quorum of the old view's progress bounds the continuation point, the
//! incoming view's members agree on the exact continuation with an
//! embedded one-shot agreement, and everyone back-fills to that point
//! before adopting the new view. If the view list runs out, ordering
//! drops to a slot-free chain where every disseminated block is pinned as
//! a persistent candidate until it lands somewhere.

use std::collections::{BTreeMap, BTreeSet};

use crate::crs::{CrsOracle, KeySpec};
use crate::msg::{BlockMsg, KeyId, MvbaMsg, RbcMsg, TxMsg, Val};
use crate::mvba::{MvbaEvent, MvbaInstance, MvbaStep};
use crate::rbc::{RbcInstance, RbcMode, RbcStep};
use crate::support::SupportTracker;
use crate::topology::{EssentialSubset, NodeId, SupportGrade};

/// One ordering committee from the ratified view sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSpec {
    pub id: u64,
    pub members: BTreeSet<NodeId>,
    /// Tolerated faulty members.
    pub t: usize,
}

impl ViewSpec {
    /// The committee as a single complete-network subset.
    fn as_subset(&self) -> EssentialSubset {
        EssentialSubset {
            members: self.members.clone(),
            t: self.t,
            q: self.members.len() - self.t,
        }
    }
}

/// Trace of observable ordering state changes.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum TxEvent {
    BlockAccepted { view: u64, seq: u64, batch: String },
    ViewChangeRequested { view: u64 },
    /// The node locked its current view while campaigning for `target`.
    Locked { current: u64, target: u64, highest: Option<u64> },
    /// The lock quorum resolved; continuation must exceed this floor.
    LockResolved { target: u64, floor: Option<u64> },
    /// This node fed a continuation candidate into the member agreement.
    ContinuationProposed { target: u64, start: u64 },
    NewViewSent { target: u64, start: u64 },
    ViewAdopted { view: u64, start: u64 },
    FallbackEngaged,
    BlockPinned { id: String },
    FallbackRatified { pos: u64, id: String },
    /// Embedded member-agreement trace for a view change.
    Vc { target: u64, event: MvbaEvent },
    /// Fallback chain agreement trace.
    Fb { pos: u64, event: MvbaEvent },
}

/// What one call did to the node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TxStep {
    pub out: Vec<TxMsg>,
    pub events: Vec<TxEvent>,
    pub rejected: u32,
    pub collision: Option<String>,
    pub equivocation: bool,
}

impl TxStep {
    fn merge(&mut self, other: TxStep) {
        self.out.extend(other.out);
        self.events.extend(other.events);
        self.rejected += other.rejected;
        if self.collision.is_none() {
            self.collision = other.collision;
        }
        self.equivocation |= other.equivocation;
    }

    fn absorb_vc(&mut self, target: u64, step: MvbaStep) -> Option<(Val, u64)> {
        for m in step.out {
            self.out.push(TxMsg::Vc { view: target, msg: m });
        }
        for e in step.events {
            self.events.push(TxEvent::Vc { target, event: e });
        }
        self.rejected += step.rejected;
        if self.collision.is_none() {
            self.collision = step.collision.map(|c| format!("view change {target}: {c}"));
        }
        step.decided
    }

    fn absorb_fb(&mut self, pos: u64, step: MvbaStep) -> Option<(Val, u64)> {
        for m in step.out {
            self.out.push(TxMsg::FallbackSlot { pos, msg: m });
        }
        for e in step.events {
            self.events.push(TxEvent::Fb { pos, event: e });
        }
        self.rejected += step.rejected;
        if self.collision.is_none() {
            self.collision = step.collision.map(|c| format!("fallback {pos}: {c}"));
        }
        step.decided
    }

    fn absorb_rbc(&mut self, id: &str, step: RbcStep<String>) -> Option<String> {
        for m in step.out {
            self.out.push(TxMsg::FallbackRbc { id: id.to_string(), msg: m });
        }
        self.equivocation |= step.equivocation;
        step.accepted
    }
}

/// Per-sequence acceptance machine inside one view.
#[derive(Debug, Default)]
struct SeqMachine {
    init_track: SupportTracker<String>,
    echo_track: SupportTracker<String>,
    ready_track: SupportTracker<String>,
    check_track: SupportTracker<String>,
    echo_sent: Option<String>,
    ready_sent: Option<String>,
    check_sent: Option<String>,
    accepted: Option<String>,
}

impl SeqMachine {
    /// The batch with strong ready backing, if any.
    fn strongly_ready(&self, es: &[EssentialSubset]) -> Option<String> {
        self.ready_track
            .by_content()
            .into_iter()
            .map(|(c, _)| c.clone())
            .find(|c| {
                self.ready_track.grade(es, c).unwrap_or(SupportGrade::None)
                    == SupportGrade::Strong
            })
    }
}

/// Per-target view-change machine.
#[derive(Debug, Default)]
struct ChangeMachine {
    change_track: SupportTracker<()>,
    confirm_track: SupportTracker<()>,
    change_sent: bool,
    confirm_sent: bool,
    lock_sent: bool,
    /// Lock citations by origin.
    locks: BTreeMap<NodeId, Option<u64>>,
    /// Resolved continuation floor: `Some(floor)` once the lock quorum
    /// closes; the inner option is the floor itself (None = no citation).
    floor: Option<Option<u64>>,
    inputs: BTreeSet<u64>,
    newview_track: SupportTracker<u64>,
    newview_sent: bool,
    vecho_sent: Option<u64>,
    vready_sent: Option<u64>,
    vecho_track: SupportTracker<u64>,
    vready_track: SupportTracker<u64>,
    /// Continuation awaiting back-fill before adoption.
    adopt_pending: Option<u64>,
}

/// One node's view of the ordering layer.
#[derive(Debug)]
pub struct TxNode {
    me: NodeId,
    es: Vec<EssentialSubset>,
    views: Vec<ViewSpec>,
    cur: usize,
    min_v: u64,
    lock: bool,
    pipeline: bool,
    /// Key layouts for the fallback chain's randomness.
    registry: Vec<KeySpec>,

    seqs: BTreeMap<(u64, u64), SeqMachine>,
    /// Global accepted log: sequence -> (batch, view it came from).
    accepted_log: BTreeMap<u64, (String, u64)>,

    changes: BTreeMap<u64, ChangeMachine>,
    vc_mvba: BTreeMap<u64, MvbaInstance>,
    /// Block traffic for views we have not adopted yet.
    future_blocks: BTreeMap<u64, Vec<(NodeId, BlockMsg)>>,

    fallback: bool,
    fb_rbc: BTreeMap<String, RbcInstance<String>>,
    /// Disseminated, unratified blocks in arrival order.
    pinned: Vec<String>,
    fb_mvba: BTreeMap<u64, MvbaInstance>,
    fb_pos: u64,
    fb_held: BTreeMap<u64, Vec<(NodeId, MvbaMsg)>>,
    fb_ratified: Vec<String>,
}

impl TxNode {
    pub fn new(
        me: NodeId,
        es: Vec<EssentialSubset>,
        views: Vec<ViewSpec>,
        registry: Vec<KeySpec>,
        pipeline: bool,
    ) -> Self {
        TxNode {
            me,
            es,
            views,
            cur: 0,
            min_v: 0,
            lock: false,
            pipeline,
            registry,
            seqs: BTreeMap::new(),
            accepted_log: BTreeMap::new(),
            changes: BTreeMap::new(),
            vc_mvba: BTreeMap::new(),
            future_blocks: BTreeMap::new(),
            fallback: false,
            fb_rbc: BTreeMap::new(),
            pinned: Vec::new(),
            fb_mvba: BTreeMap::new(),
            fb_pos: 0,
            fb_held: BTreeMap::new(),
            fb_ratified: Vec::new(),
        }
    }

    pub fn current_view(&self) -> &ViewSpec {
        &self.views[self.cur]
    }

    pub fn min_seq(&self) -> u64 {
        self.min_v
    }

    pub fn locked(&self) -> bool {
        self.lock
    }

    pub fn fallback_active(&self) -> bool {
        self.fallback
    }

    pub fn accepted(&self, seq: u64) -> Option<&(String, u64)> {
        self.accepted_log.get(&seq)
    }

    pub fn accepted_log(&self) -> &BTreeMap<u64, (String, u64)> {
        &self.accepted_log
    }

    pub fn pinned(&self) -> &[String] {
        &self.pinned
    }

    pub fn fallback_ratified(&self) -> &[String] {
        &self.fb_ratified
    }

    /// A view member hands a block to the network (the scripted stand-in
    /// for the transaction engine agreeing on a batch).
    pub fn emit_block(&mut self, seq: u64, batch: impl Into<String>) -> TxStep {
        let view = self.current_view().id;
        let batch = batch.into();
        let mut step = TxStep::default();
        step.out.push(TxMsg::Block { view, msg: BlockMsg::Init { seq, batch: batch.clone() } });
        let me = self.me.clone();
        step.merge(self.on_block(&me, view, BlockMsg::Init { seq, batch }, &CrsOracle::new(0)));
        step
    }

    /// Campaign to replace the current view, or engage the fallback chain
    /// when the view list is exhausted. Repeat calls are idempotent.
    pub fn request_view_change(&mut self, oracle: &CrsOracle) -> TxStep {
        let mut step = TxStep::default();
        let Some(next) = self.views.get(self.cur + 1).map(|v| v.id) else {
            if !self.fallback {
                self.fallback = true;
                step.events.push(TxEvent::FallbackEngaged);
            }
            return step;
        };
        let m = self.changes.entry(next).or_default();
        if !m.change_sent {
            m.change_sent = true;
            step.events.push(TxEvent::ViewChangeRequested { view: next });
            step.out.push(TxMsg::Change { view: next });
            let me = self.me.clone();
            step.merge(self.on_change(&me, next, oracle));
        }
        step
    }

    /// Disseminate a block on the fallback chain. The block's payload is
    /// its own identifier.
    pub fn fallback_propose(&mut self, id: impl Into<String>, oracle: &CrsOracle) -> TxStep {
        let id = id.into();
        let mut step = TxStep::default();
        self.ensure_fb_rbc(&id);
        step.out.push(TxMsg::FallbackRbc { id: id.clone(), msg: RbcMsg::Init(id.clone()) });
        let inner = self.fb_rbc.get_mut(&id).expect("instance just ensured").learn(id.clone());
        if let Some(b) = step.absorb_rbc(&id, inner) {
            step.merge(self.pin(b, oracle));
        }
        step
    }

    pub fn handle(&mut self, sender: &NodeId, msg: TxMsg, oracle: &CrsOracle) -> TxStep {
        match msg {
            TxMsg::Block { view, msg } => self.route_block(sender, view, msg, oracle),
            TxMsg::Change { view } => {
                let mut step = TxStep::default();
                if view <= self.current_view().id {
                    step.rejected += 1;
                    return step;
                }
                self.changes.entry(view).or_default().change_track.record(sender, ());
                step.merge(self.on_change(sender, view, oracle));
                step
            }
            TxMsg::Confirm { view } => {
                let mut step = TxStep::default();
                if view <= self.current_view().id {
                    step.rejected += 1;
                    return step;
                }
                self.changes.entry(view).or_default().confirm_track.record(sender, ());
                step.merge(self.advance_change(view, oracle));
                step
            }
            TxMsg::Lock { view, highest } => {
                let mut step = TxStep::default();
                if view <= self.current_view().id {
                    step.rejected += 1;
                    return step;
                }
                let m = self.changes.entry(view).or_default();
                // First citation per origin wins; a different second
                // citation is equivocation.
                match m.locks.get(sender) {
                    None => {
                        m.locks.insert(sender.clone(), highest);
                    }
                    Some(prev) if *prev != highest => step.equivocation = true,
                    Some(_) => {}
                }
                step.merge(self.advance_change(view, oracle));
                step
            }
            TxMsg::Vc { view, msg } => {
                let mut step = TxStep::default();
                if view <= self.current_view().id {
                    step.rejected += 1;
                    return step;
                }
                if !self.view_by_id(view).is_some_and(|v| v.members.contains(&self.me)) {
                    // Only incoming-view members run the member agreement.
                    return step;
                }
                self.ensure_vc(view);
                let inner =
                    self.vc_mvba.get_mut(&view).expect("instance just ensured").handle(
                        sender, msg, oracle,
                    );
                if let Some(d) = step.absorb_vc(view, inner) {
                    step.merge(self.on_vc_decided(view, d));
                }
                step.merge(self.advance_change(view, oracle));
                step
            }
            TxMsg::NewView { view, start } => {
                let mut step = TxStep::default();
                if view <= self.current_view().id {
                    step.rejected += 1;
                    return step;
                }
                // Count only incoming-view members.
                if self.view_by_id(view).is_some_and(|v| v.members.contains(sender)) {
                    self.changes.entry(view).or_default().newview_track.record(sender, start);
                } else {
                    step.rejected += 1;
                }
                step.merge(self.advance_change(view, oracle));
                step
            }
            TxMsg::ViewEcho { view, start } => {
                let mut step = TxStep::default();
                if view <= self.current_view().id {
                    step.rejected += 1;
                    return step;
                }
                self.changes.entry(view).or_default().vecho_track.record(sender, start);
                step.merge(self.advance_change(view, oracle));
                step
            }
            TxMsg::ViewReady { view, start } => {
                let mut step = TxStep::default();
                if view <= self.current_view().id {
                    step.rejected += 1;
                    return step;
                }
                self.changes.entry(view).or_default().vready_track.record(sender, start);
                step.merge(self.advance_change(view, oracle));
                step
            }
            TxMsg::FallbackRbc { id, msg } => {
                let mut step = TxStep::default();
                let content = match &msg {
                    RbcMsg::Init(c) | RbcMsg::Echo(c) | RbcMsg::Ready(c) => c.clone(),
                };
                if content != id {
                    step.rejected += 1;
                    return step;
                }
                self.ensure_fb_rbc(&id);
                let inst = self.fb_rbc.get_mut(&id).expect("instance just ensured");
                let inner = match msg {
                    RbcMsg::Init(c) => inst.learn(c),
                    other => inst.handle(sender, other),
                };
                if let Some(b) = step.absorb_rbc(&id, inner) {
                    step.merge(self.pin(b, oracle));
                }
                step
            }
            TxMsg::FallbackSlot { pos, msg } => {
                let mut step = TxStep::default();
                if pos > self.fb_pos {
                    self.fb_held.entry(pos).or_default().push((sender.clone(), msg));
                    return step;
                }
                self.ensure_fb(pos, oracle, &mut step);
                let inner =
                    self.fb_mvba.get_mut(&pos).expect("instance just ensured").handle(
                        sender, msg, oracle,
                    );
                if let Some(d) = step.absorb_fb(pos, inner) {
                    step.merge(self.on_fb_decided(pos, d, oracle));
                }
                step
            }
        }
    }

    fn view_by_id(&self, id: u64) -> Option<&ViewSpec> {
        self.views.iter().find(|v| v.id == id)
    }

    fn view_index(&self, id: u64) -> Option<usize> {
        self.views.iter().position(|v| v.id == id)
    }

    // ---- block acceptance ----

    fn route_block(
        &mut self,
        sender: &NodeId,
        view: u64,
        msg: BlockMsg,
        oracle: &CrsOracle,
    ) -> TxStep {
        let cur = self.current_view().id;
        if view == cur {
            return self.on_block(sender, view, msg, oracle);
        }
        let mut step = TxStep::default();
        if self.view_index(view).is_some_and(|i| i > self.cur) {
            self.future_blocks.entry(view).or_default().push((sender.clone(), msg));
        } else {
            // Stale or unknown view.
            step.rejected += 1;
        }
        step
    }

    fn on_block(&mut self, sender: &NodeId, view: u64, msg: BlockMsg, oracle: &CrsOracle) -> TxStep {
        let mut step = TxStep::default();
        let seq = *match &msg {
            BlockMsg::Init { seq, .. }
            | BlockMsg::Echo { seq, .. }
            | BlockMsg::Ready { seq, .. }
            | BlockMsg::Check { seq, .. } => seq,
        };
        let machine = self.seqs.entry((view, seq)).or_default();
        let eq = match msg {
            BlockMsg::Init { batch, .. } => {
                // Only committee members originate blocks.
                if self.views[self.cur].members.contains(sender) {
                    machine.init_track.record(sender, batch)
                } else {
                    step.rejected += 1;
                    return step;
                }
            }
            BlockMsg::Echo { batch, .. } => machine.echo_track.record(sender, batch),
            BlockMsg::Ready { batch, .. } => machine.ready_track.record(sender, batch),
            BlockMsg::Check { batch, .. } => machine.check_track.record(sender, batch),
        };
        step.equivocation |= matches!(eq, crate::support::Recorded::Equivocation);
        step.merge(self.advance_blocks(view, oracle));
        step
    }

    /// Re-run every sequence machine of `view` until quiescent. Machines
    /// unlock in sequence order, so one acceptance can cascade.
    fn advance_blocks(&mut self, view: u64, oracle: &CrsOracle) -> TxStep {
        let mut step = TxStep::default();
        loop {
            let mut progressed = false;
            let keys: Vec<u64> =
                self.seqs.range((view, 0)..=(view, u64::MAX)).map(|((_, s), _)| *s).collect();
            for seq in keys {
                let s = self.advance_seq(view, seq);
                progressed |= !s.out.is_empty() || !s.events.is_empty();
                step.merge(s);
            }
            if !progressed {
                break;
            }
        }
        // Acceptance evidence feeds the view-change machines too.
        let targets: Vec<u64> = self.changes.keys().copied().collect();
        for t in targets {
            step.merge(self.advance_change(t, oracle));
        }
        step
    }

    fn gate_open(&self, seq: u64) -> bool {
        seq >= self.min_v && (self.min_v..seq).all(|n| self.accepted_log.contains_key(&n))
    }

    fn advance_seq(&mut self, view: u64, seq: u64) -> TxStep {
        let mut step = TxStep::default();
        if view != self.current_view().id {
            return step;
        }
        let gate = self.gate_open(seq);
        let tv = self.views[self.cur].t;
        let members = self.views[self.cur].members.clone();
        let es = self.es.clone();
        let lock = self.lock;
        let me = self.me.clone();
        let machine = self.seqs.get_mut(&(view, seq)).expect("machine exists");

        if gate && machine.echo_sent.is_none() {
            // A batch qualifies with enough committee openings or weak
            // echo backing.
            let mut candidate: Option<String> = None;
            for (batch, senders) in machine.init_track.by_content() {
                if senders.iter().filter(|s| members.contains(**s)).count() >= tv + 1 {
                    candidate = Some(batch.clone());
                    break;
                }
            }
            if candidate.is_none() {
                for (batch, _) in machine.echo_track.by_content() {
                    let g =
                        machine.echo_track.grade(&es, batch).unwrap_or(SupportGrade::None);
                    if g >= SupportGrade::Weak {
                        candidate = Some(batch.clone());
                        break;
                    }
                }
            }
            if let Some(batch) = candidate {
                machine.echo_sent = Some(batch.clone());
                machine.echo_track.record(&me, batch.clone());
                step.out.push(TxMsg::Block { view, msg: BlockMsg::Echo { seq, batch } });
            }
        }
        if gate && machine.ready_sent.is_none() {
            let mut candidate: Option<String> = None;
            for (batch, _) in machine.echo_track.by_content() {
                if machine.echo_track.grade(&es, batch).unwrap_or(SupportGrade::None)
                    == SupportGrade::Strong
                {
                    candidate = Some(batch.clone());
                    break;
                }
            }
            if candidate.is_none() {
                for (batch, _) in machine.ready_track.by_content() {
                    if machine.ready_track.grade(&es, batch).unwrap_or(SupportGrade::None)
                        >= SupportGrade::Weak
                    {
                        candidate = Some(batch.clone());
                        break;
                    }
                }
            }
            if let Some(batch) = candidate {
                machine.ready_sent = Some(batch.clone());
                machine.ready_track.record(&me, batch.clone());
                step.out.push(TxMsg::Block { view, msg: BlockMsg::Ready { seq, batch } });
            }
        }
        if gate && machine.check_sent.is_none() && !lock {
            if let Some(batch) = machine.strongly_ready(&es) {
                machine.check_sent = Some(batch.clone());
                machine.check_track.record(&me, batch.clone());
                step.out.push(TxMsg::Block { view, msg: BlockMsg::Check { seq, batch } });
            }
        }
        if machine.accepted.is_none() {
            let mut winner: Option<String> = None;
            for (batch, _) in machine.check_track.by_content() {
                if machine.check_track.grade(&es, batch).unwrap_or(SupportGrade::None)
                    == SupportGrade::Strong
                {
                    winner = Some(batch.clone());
                    break;
                }
            }
            if let Some(batch) = winner {
                machine.accepted = Some(batch.clone());
                self.accepted_log.insert(seq, (batch.clone(), view));
                step.events.push(TxEvent::BlockAccepted { view, seq, batch });
            }
        }
        step
    }

    // ---- view change ----

    fn on_change(&mut self, sender: &NodeId, target: u64, oracle: &CrsOracle) -> TxStep {
        self.changes.entry(target).or_default().change_track.record(sender, ());
        self.advance_change(target, oracle)
    }

    fn advance_change(&mut self, target: u64, oracle: &CrsOracle) -> TxStep {
        let mut step = TxStep::default();
        let es = self.es.clone();
        let me = self.me.clone();
        let cur_id = self.current_view().id;
        if target <= cur_id {
            return step;
        }

        // Strong CHANGE backing -> CONFIRM once.
        {
            let m = self.changes.entry(target).or_default();
            if !m.confirm_sent
                && m.change_track.grade(&es, &()).unwrap_or(SupportGrade::None)
                    == SupportGrade::Strong
            {
                m.confirm_sent = true;
                m.confirm_track.record(&me, ());
                step.out.push(TxMsg::Confirm { view: target });
            }
            // Weak CONFIRM backing -> relay once.
            if !m.confirm_sent
                && m.confirm_track.grade(&es, &()).unwrap_or(SupportGrade::None)
                    >= SupportGrade::Weak
            {
                m.confirm_sent = true;
                m.confirm_track.record(&me, ());
                step.out.push(TxMsg::Confirm { view: target });
            }
        }

        // Strong CONFIRM backing -> lock the current view, cite progress.
        let need_lock = {
            let m = self.changes.entry(target).or_default();
            !m.lock_sent
                && m.confirm_track.grade(&es, &()).unwrap_or(SupportGrade::None)
                    == SupportGrade::Strong
        };
        if need_lock {
            self.lock = true;
            let highest = self
                .accepted_log
                .iter()
                .filter(|(_, (_, v))| *v == cur_id)
                .map(|(s, _)| *s)
                .max();
            let m = self.changes.entry(target).or_default();
            m.lock_sent = true;
            m.locks.entry(me.clone()).or_insert(highest);
            step.events.push(TxEvent::Locked { current: cur_id, target, highest });
            step.out.push(TxMsg::Lock { view: target, highest });
        }

        // Lock quorum: in every subset, a full quorum of citations, each
        // backed by locally observed strong ready evidence.
        let resolved_now = {
            let m = self.changes.entry(target).or_default();
            m.floor.is_none()
        } && {
            let m = &self.changes[&target];
            es.iter().all(|s| {
                s.members.iter().filter(|n| self.lock_citation_valid(m, n, cur_id)).count() >= s.q
            })
        };
        if resolved_now {
            let floor = {
                let m = &self.changes[&target];
                es.iter()
                    .flat_map(|s| s.members.iter())
                    .filter(|n| self.lock_citation_valid(&self.changes[&target], n, cur_id))
                    .filter_map(|n| m.locks.get(n).copied().flatten())
                    .max()
            };
            self.changes.get_mut(&target).unwrap().floor = Some(floor);
            step.events.push(TxEvent::LockResolved { target, floor });
        }

        // Members of the incoming view agree on the continuation.
        let is_member = self.view_by_id(target).is_some_and(|v| v.members.contains(&me));
        if is_member {
            if let Some(floor) = self.changes[&target].floor {
                let candidates = self.continuation_candidates(cur_id, floor);
                for c in candidates {
                    let fresh = self.changes.get_mut(&target).unwrap().inputs.insert(c);
                    if fresh {
                        self.ensure_vc(target);
                        step.events.push(TxEvent::ContinuationProposed { target, start: c });
                        let inner = self
                            .vc_mvba
                            .get_mut(&target)
                            .expect("instance just ensured")
                            .add_valid_input(Val::Seq(c), oracle);
                        if let Some(d) = step.absorb_vc(target, inner) {
                            step.merge(self.on_vc_decided(target, d));
                        }
                    }
                }
            }
        }

        // Enough matching NEWVIEWs plus local validity -> continuation echo.
        let tv_next = self.view_by_id(target).map(|v| v.t).unwrap_or(0);
        let echo_start = {
            let m = &self.changes[&target];
            if m.vecho_sent.is_some() {
                None
            } else {
                m.newview_track
                    .by_content()
                    .into_iter()
                    .filter(|(_, senders)| senders.len() >= tv_next + 1)
                    .map(|(start, _)| *start)
                    .find(|start| self.continuation_locally_valid(&self.changes[&target], *start, cur_id))
            }
        };
        if let Some(start) = echo_start {
            let m = self.changes.get_mut(&target).unwrap();
            m.vecho_sent = Some(start);
            m.vecho_track.record(&me, start);
            step.out.push(TxMsg::ViewEcho { view: target, start });
        }
        // Weak continuation-echo backing -> relay once.
        let relay_echo = {
            let m = &self.changes[&target];
            if m.vecho_sent.is_some() {
                None
            } else {
                m.vecho_track
                    .by_content()
                    .into_iter()
                    .map(|(s, _)| *s)
                    .find(|s| {
                        m.vecho_track.grade(&es, s).unwrap_or(SupportGrade::None)
                            >= SupportGrade::Weak
                    })
            }
        };
        if let Some(start) = relay_echo {
            let m = self.changes.get_mut(&target).unwrap();
            m.vecho_sent = Some(start);
            m.vecho_track.record(&me, start);
            step.out.push(TxMsg::ViewEcho { view: target, start });
        }
        // Strong echo -> ready; weak ready -> relay.
        let send_ready = {
            let m = &self.changes[&target];
            if m.vready_sent.is_some() {
                None
            } else {
                m.vecho_track
                    .by_content()
                    .into_iter()
                    .map(|(s, _)| *s)
                    .find(|s| {
                        m.vecho_track.grade(&es, s).unwrap_or(SupportGrade::None)
                            == SupportGrade::Strong
                    })
                    .or_else(|| {
                        m.vready_track
                            .by_content()
                            .into_iter()
                            .map(|(s, _)| *s)
                            .find(|s| {
                                m.vready_track.grade(&es, s).unwrap_or(SupportGrade::None)
                                    >= SupportGrade::Weak
                            })
                    })
            }
        };
        if let Some(start) = send_ready {
            let m = self.changes.get_mut(&target).unwrap();
            m.vready_sent = Some(start);
            m.vready_track.record(&me, start);
            step.out.push(TxMsg::ViewReady { view: target, start });
        }
        // Strong ready -> back-fill and adopt.
        let adopt = {
            let m = &self.changes[&target];
            m.adopt_pending.or_else(|| {
                m.vready_track
                    .by_content()
                    .into_iter()
                    .map(|(s, _)| *s)
                    .find(|s| {
                        m.vready_track.grade(&es, s).unwrap_or(SupportGrade::None)
                            == SupportGrade::Strong
                    })
            })
        };
        if let Some(start) = adopt {
            self.changes.get_mut(&target).unwrap().adopt_pending = Some(start);
            step.merge(self.try_adopt(target, start, oracle));
        }
        step
    }

    /// A lock citation is valid if we hold it and its cited sequence is
    /// backed by strong ready evidence in the current view (no citation
    /// needs no evidence).
    fn lock_citation_valid(&self, m: &ChangeMachine, n: &NodeId, cur_id: u64) -> bool {
        match m.locks.get(n) {
            None => false,
            Some(None) => true,
            Some(Some(seq)) => self
                .seqs
                .get(&(cur_id, *seq))
                .is_some_and(|s| s.strongly_ready(&self.es).is_some()),
        }
    }

    /// Continuations this node can vouch for: one past every strongly
    /// ready sequence above the floor, or the view floor itself when no
    /// progress was ever cited.
    fn continuation_candidates(&self, cur_id: u64, floor: Option<u64>) -> Vec<u64> {
        let mut out = Vec::new();
        if floor.is_none() && self.min_v == 0 {
            out.push(0);
        }
        if floor.is_none() && self.min_v > 0 {
            out.push(self.min_v);
        }
        for ((v, seq), m) in &self.seqs {
            if *v == cur_id && m.strongly_ready(&self.es).is_some() {
                let c = seq + 1;
                if floor.is_none_or(|f| c > f) {
                    out.push(c);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// The local validity half of the continuation check.
    fn continuation_locally_valid(&self, m: &ChangeMachine, start: u64, cur_id: u64) -> bool {
        let Some(floor) = m.floor else { return false };
        if let Some(f) = floor {
            if start <= f {
                return false;
            }
        }
        if start <= self.min_v {
            // Nothing before the view floor needs evidence.
            return start == self.min_v;
        }
        self.seqs
            .get(&(cur_id, start - 1))
            .is_some_and(|s| s.strongly_ready(&self.es).is_some())
    }

    fn ensure_vc(&mut self, target: u64) {
        if !self.vc_mvba.contains_key(&target) {
            let v = self.view_by_id(target).expect("membership checked by caller");
            let subset = v.as_subset();
            let registry = vec![KeySpec {
                id: KeyId::new(format!("view{target}")),
                holders: vec![subset.clone()],
            }];
            self.vc_mvba.insert(
                target,
                MvbaInstance::new(
                    self.me.clone(),
                    vec![subset],
                    registry,
                    format!("vc/{target}"),
                    self.pipeline,
                ),
            );
        }
    }

    fn on_vc_decided(&mut self, target: u64, (val, _rounds): (Val, u64)) -> TxStep {
        let mut step = TxStep::default();
        let Val::Seq(start) = val else {
            step.collision = Some(format!("view change {target} decided a non-sequence value"));
            return step;
        };
        let m = self.changes.entry(target).or_default();
        if !m.newview_sent {
            m.newview_sent = true;
            m.newview_track.record(&self.me.clone(), start);
            step.events.push(TxEvent::NewViewSent { target, start });
            step.out.push(TxMsg::NewView { view: target, start });
        }
        step
    }

    /// Accept everything below the continuation from ready evidence, then
    /// switch views. Stays pending until the evidence is complete.
    fn try_adopt(&mut self, target: u64, start: u64, oracle: &CrsOracle) -> TxStep {
        let mut step = TxStep::default();
        let cur_id = self.current_view().id;
        if target <= cur_id {
            return step;
        }
        for n in self.min_v..start {
            if self.accepted_log.contains_key(&n) {
                continue;
            }
            let Some(batch) =
                self.seqs.get(&(cur_id, n)).and_then(|m| m.strongly_ready(&self.es))
            else {
                return step; // evidence still missing; stay pending
            };
            self.accepted_log.insert(n, (batch.clone(), cur_id));
            if let Some(m) = self.seqs.get_mut(&(cur_id, n)) {
                m.accepted = Some(batch.clone());
            }
            step.events.push(TxEvent::BlockAccepted { view: cur_id, seq: n, batch });
        }
        let idx = self.view_index(target).expect("adoption only targets known views");
        self.cur = idx;
        self.min_v = start;
        self.lock = false;
        step.events.push(TxEvent::ViewAdopted { view: target, start });
        // Replay block traffic that arrived early for the adopted view.
        if let Some(buf) = self.future_blocks.remove(&target) {
            for (sender, msg) in buf {
                step.merge(self.on_block(&sender, target, msg, oracle));
            }
        }
        step.merge(self.advance_blocks(target, oracle));
        step
    }

    // ---- fallback chain ----

    fn ensure_fb_rbc(&mut self, id: &str) {
        if !self.fb_rbc.contains_key(id) {
            self.fb_rbc.insert(
                id.to_string(),
                RbcInstance::new(self.me.clone(), self.es.clone(), RbcMode::Plain, None),
            );
        }
    }

    fn pin(&mut self, id: String, oracle: &CrsOracle) -> TxStep {
        let mut step = TxStep::default();
        if self.pinned.contains(&id) || self.fb_ratified.contains(&id) {
            return step;
        }
        self.pinned.push(id.clone());
        step.events.push(TxEvent::BlockPinned { id: id.clone() });
        if self.fallback {
            let pos = self.fb_pos;
            self.ensure_fb(pos, oracle, &mut step);
            let inner = self
                .fb_mvba
                .get_mut(&pos)
                .expect("instance just ensured")
                .add_valid_input(Val::Block(id), oracle);
            if let Some(d) = step.absorb_fb(pos, inner) {
                step.merge(self.on_fb_decided(pos, d, oracle));
            }
        }
        step
    }

    fn ensure_fb(&mut self, pos: u64, oracle: &CrsOracle, step: &mut TxStep) {
        if self.fb_mvba.contains_key(&pos) {
            return;
        }
        self.fb_mvba.insert(
            pos,
            MvbaInstance::new(
                self.me.clone(),
                self.es.clone(),
                self.registry.clone(),
                format!("fb/{pos}"),
                self.pipeline,
            ),
        );
        // Every pinned, unratified block is a standing candidate.
        let pins: Vec<String> = self.pinned.clone();
        for id in pins {
            let inner = self
                .fb_mvba
                .get_mut(&pos)
                .expect("inserted above")
                .add_valid_input(Val::Block(id), oracle);
            if let Some(d) = step.absorb_fb(pos, inner) {
                let s = self.on_fb_decided(pos, d, oracle);
                step.merge(s);
            }
        }
    }

    fn on_fb_decided(&mut self, pos: u64, (val, _rounds): (Val, u64), oracle: &CrsOracle) -> TxStep {
        let mut step = TxStep::default();
        let Val::Block(id) = val else {
            step.collision = Some(format!("fallback {pos} decided a non-block value"));
            return step;
        };
        if !self.fb_ratified.contains(&id) {
            self.fb_ratified.push(id.clone());
            step.events.push(TxEvent::FallbackRatified { pos, id: id.clone() });
        }
        self.pinned.retain(|p| *p != id);
        if pos == self.fb_pos {
            self.fb_pos += 1;
            let next = self.fb_pos;
            if !self.pinned.is_empty() || self.fb_held.contains_key(&next) {
                self.ensure_fb(next, oracle, &mut step);
                for (sender, m) in self.fb_held.remove(&next).unwrap_or_default() {
                    let inner = self
                        .fb_mvba
                        .get_mut(&next)
                        .expect("instance just ensured")
                        .handle(&sender, m, oracle);
                    if let Some(d) = step.absorb_fb(next, inner) {
                        let s = self.on_fb_decided(next, d, oracle);
                        step.merge(s);
                    }
                }
            }
        }
        step
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<NodeId> {
        names.iter().map(|n| NodeId::new(*n)).collect()
    }

    fn flat(nodes: &[NodeId], t: usize) -> Vec<EssentialSubset> {
        vec![EssentialSubset {
            members: nodes.iter().cloned().collect(),
            t,
            q: nodes.len() - t,
        }]
    }

    struct Net {
        nodes: Vec<NodeId>,
        state: BTreeMap<NodeId, TxNode>,
        wire: Vec<(NodeId, TxMsg)>,
        oracle: CrsOracle,
        /// Senders whose outbound traffic is discarded (dead view members).
        dead: BTreeSet<NodeId>,
    }

    impl Net {
        /// `core` names the trusted Cobalt nodes; other names are pure
        /// committee emitters outside the trust topology.
        fn new(names: &[&str], core: &[&str], t: usize, views: Vec<ViewSpec>) -> Self {
            let nodes = ids(names);
            let es = flat(&ids(core), t);
            let registry = vec![KeySpec { id: KeyId::new("fallback"), holders: es.clone() }];
            let oracle = CrsOracle::new(11);
            let state = nodes
                .iter()
                .map(|n| {
                    (
                        n.clone(),
                        TxNode::new(n.clone(), es.clone(), views.clone(), registry.clone(), false),
                    )
                })
                .collect();
            Net { nodes, state, wire: Vec::new(), oracle, dead: BTreeSet::new() }
        }

        fn push(&mut self, from: &NodeId, step: TxStep) -> Vec<TxEvent> {
            assert!(step.collision.is_none(), "collision: {:?}", step.collision);
            if !self.dead.contains(from) {
                for m in step.out {
                    self.wire.push((from.clone(), m));
                }
            }
            step.events
        }

        fn settle(&mut self) -> Vec<(NodeId, TxEvent)> {
            let mut log = Vec::new();
            while let Some((from, msg)) = self.wire.pop() {
                for to in self.nodes.clone() {
                    if to == from || self.dead.contains(&to) {
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
    }

    fn view(id: u64, names: &[&str], t: usize) -> ViewSpec {
        ViewSpec { id, members: ids(names).into_iter().collect(), t }
    }

    #[test]
    fn healthy_view_accepts_blocks_in_sequence() {
        let v1 = view(1, &["a", "b", "c", "d"], 1);
        let mut net = Net::new(&["a", "b", "c", "d"], &["a", "b", "c", "d"], 1, vec![v1]);
        // Committee members emit (0, "b0") then (1, "b1").
        for seq in 0..2u64 {
            for n in net.nodes.clone() {
                let step = net.state.get_mut(&n).unwrap().emit_block(seq, format!("b{seq}"));
                net.push(&n, step);
            }
            net.settle();
        }
        for n in &net.nodes {
            let log = net.state[n].accepted_log();
            assert_eq!(log.len(), 2, "{n}: {log:?}");
            assert_eq!(log[&0].0, "b0");
            assert_eq!(log[&1].0, "b1");
        }
    }

    #[test]
    fn sequence_gate_defers_out_of_order_blocks() {
        let v1 = view(1, &["a", "b", "c", "d"], 1);
        let mut net = Net::new(&["a", "b", "c", "d"], &["a", "b", "c", "d"], 1, vec![v1]);
        // Sequence 1 arrives first: no node may act on it yet.
        for n in net.nodes.clone() {
            let step = net.state.get_mut(&n).unwrap().emit_block(1, "late");
            net.push(&n, step);
        }
        net.settle();
        for n in &net.nodes {
            assert!(net.state[n].accepted_log().is_empty());
        }
        // Sequence 0 unblocks everything.
        for n in net.nodes.clone() {
            let step = net.state.get_mut(&n).unwrap().emit_block(0, "first");
            net.push(&n, step);
        }
        net.settle();
        for n in &net.nodes {
            let log = net.state[n].accepted_log();
            assert_eq!(log.len(), 2, "{n}: {log:?}");
            assert_eq!(log[&0].0, "first");
            assert_eq!(log[&1].0, "late");
        }
    }

    #[test]
    fn equivocating_committee_cannot_split_acceptance() {
        let v1 = view(1, &["a", "b", "c", "d"], 1);
        let mut net = Net::new(&["a", "b", "c", "d"], &["a", "b", "c", "d"], 1, vec![v1]);
        // Half the committee claims "x", half claims "y" at sequence 0.
        for (i, n) in net.nodes.clone().into_iter().enumerate() {
            let batch = if i % 2 == 0 { "x" } else { "y" };
            let step = net.state.get_mut(&n).unwrap().emit_block(0, batch);
            net.push(&n, step);
        }
        net.settle();
        let mut seen = BTreeSet::new();
        for n in &net.nodes {
            if let Some((batch, _)) = net.state[n].accepted(0) {
                seen.insert(batch.clone());
            }
        }
        assert!(seen.len() <= 1, "split acceptance: {seen:?}");
    }

    #[test]
    fn dead_view_is_replaced_and_continuation_agreed() {
        // Cobalt nodes a..d; view 1 is a separate committee e,f that dies
        // after block 0; view 2 is the Cobalt nodes themselves.
        let all = ["a", "b", "c", "d", "e", "f"];
        let v1 = view(1, &["e", "f"], 0);
        let v2 = view(2, &["a", "b", "c", "d"], 1);
        let mut net = Net::new(&all, &["a", "b", "c", "d"], 1, vec![v1, v2]);
        // The live committee pushes block 0 through.
        for n in ids(&["e", "f"]) {
            let step = net.state.get_mut(&n).unwrap().emit_block(0, "genesis");
            net.push(&n, step);
        }
        net.settle();
        for n in &net.nodes {
            assert_eq!(net.state[n].accepted(0).map(|(b, _)| b.clone()), Some("genesis".into()));
        }
        // The committee dies; everyone campaigns for view 2.
        net.dead.insert(NodeId::new("e"));
        net.dead.insert(NodeId::new("f"));
        for n in net.nodes.clone() {
            if net.dead.contains(&n) {
                continue;
            }
            let step = net.state.get_mut(&n).unwrap().request_view_change(&net.oracle);
            net.push(&n, step);
        }
        let log = net.settle();
        let adopted: Vec<_> = log
            .iter()
            .filter_map(|(n, e)| match e {
                TxEvent::ViewAdopted { view, start } => Some((n.clone(), *view, *start)),
                _ => None,
            })
            .collect();
        let live: BTreeSet<NodeId> =
            net.nodes.iter().filter(|n| !net.dead.contains(*n)).cloned().collect();
        assert_eq!(
            adopted.iter().map(|(n, _, _)| n.clone()).collect::<BTreeSet<_>>(),
            live,
            "not every live node adopted: {adopted:?}"
        );
        let starts: BTreeSet<u64> = adopted.iter().map(|(_, _, s)| *s).collect();
        assert_eq!(starts.len(), 1, "disagreement on continuation: {adopted:?}");
        let start = *starts.iter().next().unwrap();
        assert!(start >= 1, "continuation must preserve the accepted prefix");
        for n in &live {
            assert_eq!(net.state[n].current_view().id, 2);
            assert_eq!(net.state[n].min_seq(), start);
            assert!(!net.state[n].locked());
        }
    }

    #[test]
    fn exhausted_view_list_engages_fallback_and_ratifies_pins() {
        let v1 = view(1, &["a", "b", "c", "d"], 1);
        let mut net = Net::new(&["a", "b", "c", "d"], &["a", "b", "c", "d"], 1, vec![v1]);
        for n in net.nodes.clone() {
            let step = net.state.get_mut(&n).unwrap().request_view_change(&net.oracle);
            net.push(&n, step);
        }
        net.settle();
        for n in &net.nodes {
            assert!(net.state[n].fallback_active());
        }
        // Two different nodes pin different blocks; both must land.
        let a = net.nodes[0].clone();
        let step = net.state.get_mut(&a).unwrap().fallback_propose("blk-a", &net.oracle);
        net.push(&a, step);
        let b = net.nodes[1].clone();
        let step = net.state.get_mut(&b).unwrap().fallback_propose("blk-b", &net.oracle);
        net.push(&b, step);
        net.settle();
        for n in &net.nodes {
            let r: BTreeSet<String> =
                net.state[n].fallback_ratified().iter().cloned().collect();
            assert_eq!(
                r,
                ["blk-a", "blk-b"].iter().map(|s| s.to_string()).collect(),
                "{n} ratified {r:?}"
            );
            assert!(net.state[n].pinned().is_empty());
        }
        // All nodes agree on the chain order too.
        let chains: BTreeSet<Vec<String>> =
            net.nodes.iter().map(|n| net.state[n].fallback_ratified().to_vec()).collect();
        assert_eq!(chains.len(), 1, "fallback chains diverge: {chains:?}");
    }
}
