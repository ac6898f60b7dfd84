//! Wire vocabulary shared by the protocol layers: message enums, value
//! types, compact bit sets, and the canonical byte encodings everything is
//! hashed under.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::topology::NodeId;

/// SHA-256 over length-prefixed parts, so concatenations cannot collide.
pub fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// First 16 bytes of [`digest`]: the 128-bit hash used for value indices.
pub fn digest128(parts: &[&[u8]]) -> [u8; 16] {
    let full = digest(parts);
    let mut out = [0u8; 16];
    out.copy_from_slice(&full[..16]);
    out
}

/// A 32-byte opaque value rendered as hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Opaque32(pub [u8; 32]);

impl fmt::Debug for Opaque32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for Opaque32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Opaque32 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Opaque32 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))?;
        Ok(Opaque32(arr))
    }
}

/// A subset of `{0, 1}`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct BitSet {
    pub zero: bool,
    pub one: bool,
}

impl BitSet {
    pub fn empty() -> Self {
        BitSet::default()
    }

    pub fn of(bit: bool) -> Self {
        let mut s = BitSet::default();
        s.insert(bit);
        s
    }

    pub fn both() -> Self {
        BitSet { zero: true, one: true }
    }

    pub fn insert(&mut self, bit: bool) -> bool {
        let slot = if bit { &mut self.one } else { &mut self.zero };
        let fresh = !*slot;
        *slot = true;
        fresh
    }

    pub fn contains(self, bit: bool) -> bool {
        if bit {
            self.one
        } else {
            self.zero
        }
    }

    pub fn len(self) -> usize {
        usize::from(self.zero) + usize::from(self.one)
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn singleton(self) -> Option<bool> {
        match (self.zero, self.one) {
            (true, false) => Some(false),
            (false, true) => Some(true),
            _ => None,
        }
    }

    pub fn subset_of(self, other: BitSet) -> bool {
        (!self.zero || other.zero) && (!self.one || other.one)
    }

    pub fn iter(self) -> impl Iterator<Item = bool> {
        [false, true]
            .into_iter()
            .filter(move |b| self.contains(*b))
    }
}

impl fmt::Debug for BitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        let mut first = true;
        for b in self.iter() {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{}", u8::from(b))?;
            first = false;
        }
        write!(f, "}}")
    }
}

/// Identifier of a randomizing key in the common randomness source.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(pub String);

impl KeyId {
    pub fn new(s: impl Into<String>) -> Self {
        KeyId(s.into())
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k:{}", self.0)
    }
}

impl From<&str> for KeyId {
    fn from(s: &str) -> Self {
        KeyId(s.to_string())
    }
}

/// Randomness-source traffic for one sampling tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CrsMsg {
    /// The sender reveals its share of `key` for this tag.
    Share { key: KeyId, token: Opaque32 },
    /// The sender reconstructed the key's full signature and echoes it.
    Opened { key: KeyId, sig: Opaque32 },
}

/// Content of an amendment under governance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AmendmentPayload {
    /// An ordinary rule change, opaque to the protocol.
    Text(String),
    /// Registers a new randomizing key once ratified.
    AllowKey(KeyId),
}

impl AmendmentPayload {
    fn canon_bytes(&self) -> Vec<u8> {
        match self {
            AmendmentPayload::Text(s) => digest(&[b"text", s.as_bytes()]).to_vec(),
            AmendmentPayload::AllowKey(k) => digest(&[b"allow", k.0.as_bytes()]).to_vec(),
        }
    }
}

/// An amendment and the slot it proposes to occupy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Amendment {
    pub payload: AmendmentPayload,
    pub slot: u64,
}

impl Amendment {
    pub fn id(&self) -> AmendmentId {
        let h = digest(&[&self.payload.canon_bytes(), &self.slot.to_be_bytes()]);
        AmendmentId(hex::encode(&h[..8]))
    }
}

/// Content-derived identifier of an amendment.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AmendmentId(pub String);

impl fmt::Display for AmendmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for AmendmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a:{}", self.0)
    }
}

/// A value that multi-valued agreement can decide.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Val {
    /// An amendment together with its activation boundary.
    Amendment { id: AmendmentId, activation: u64 },
    /// A block identifier on the fallback ordering chain.
    Block(String),
    /// A sequence number (view-change continuation point).
    Seq(u64),
    /// Free-form value for standalone agreement scenarios.
    Label(String),
}

impl Val {
    pub fn canon_bytes(&self) -> Vec<u8> {
        match self {
            Val::Amendment { id, activation } => {
                digest(&[b"amendment", id.0.as_bytes(), &activation.to_be_bytes()]).to_vec()
            }
            Val::Block(b) => digest(&[b"block", b.as_bytes()]).to_vec(),
            Val::Seq(n) => digest(&[b"seq", &n.to_be_bytes()]).to_vec(),
            Val::Label(s) => digest(&[b"label", s.as_bytes()]).to_vec(),
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Amendment { id, activation } => write!(f, "{id}@{activation}"),
            Val::Block(b) => write!(f, "block:{b}"),
            Val::Seq(n) => write!(f, "seq:{n}"),
            Val::Label(s) => write!(f, "{s}"),
        }
    }
}

/// Reliable-broadcast traffic, generic over the broadcast content.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RbcMsg<C> {
    Init(C),
    Echo(C),
    Ready(C),
}

impl<C> RbcMsg<C> {
    pub fn content(&self) -> &C {
        match self {
            RbcMsg::Init(c) | RbcMsg::Echo(c) | RbcMsg::Ready(c) => c,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RbcMsg::Init(_) => "INIT",
            RbcMsg::Echo(_) => "ECHO",
            RbcMsg::Ready(_) => "READY",
        }
    }
}

/// Binary-agreement traffic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AbbaMsg {
    /// Terminal claim: the sender is ready to decide `v`.
    Finish { v: bool },
    /// Round-scoped estimate announcement.
    Init { r: u64, v: bool },
    /// Round-scoped vote for a value that gathered strong estimate support.
    Aux { r: u64, v: bool },
    /// Round-scoped claim of the full set of viable values.
    Conf { r: u64, vals: BitSet },
    /// Share traffic for the round-`r` coin.
    Coin { r: u64, msg: CrsMsg },
}

/// Multi-valued agreement traffic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MvbaMsg {
    /// The sender backs candidate `v` in round `r`.
    Elect { r: u64, v: Val },
    /// The sender is ready to decide `v`.
    Finish { r: u64, v: Val },
    /// The sender's current candidate set; resent as it grows.
    Cont { r: u64, vals: BTreeSet<Val> },
    /// Estimate carried into round `r`.
    Init { r: u64, v: Val },
    /// Embedded binary agreement deciding whether round `r` terminates.
    Stop { r: u64, msg: AbbaMsg },
    /// Share traffic for the round-`r` index seed.
    Coin { r: u64, msg: CrsMsg },
}

/// A pending (slot, amendment) pair carried inside stamping messages.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotPair {
    pub slot: u64,
    pub id: AmendmentId,
}

/// Governance-layer traffic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DabcMsg {
    /// Democratic dissemination of one amendment.
    Drbc { id: AmendmentId, msg: RbcMsg<Amendment> },
    /// Periodic stamp: everything pending at boundary `tau`.
    Check { tau: u64, pending: BTreeSet<SlotPair> },
    /// Claim that `pair` had quorum backing at boundary `tau`.
    Accept { pair: SlotPair, tau: u64 },
    /// Per-slot agreement traffic.
    Slot { slot: u64, msg: MvbaMsg },
}

/// Block-level traffic within one transaction-ordering view.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockMsg {
    Init { seq: u64, batch: String },
    Echo { seq: u64, batch: String },
    Ready { seq: u64, batch: String },
    Check { seq: u64, batch: String },
}

impl BlockMsg {
    pub fn seq(&self) -> u64 {
        match self {
            BlockMsg::Init { seq, .. }
            | BlockMsg::Echo { seq, .. }
            | BlockMsg::Ready { seq, .. }
            | BlockMsg::Check { seq, .. } => *seq,
        }
    }

    pub fn batch(&self) -> &str {
        match self {
            BlockMsg::Init { batch, .. }
            | BlockMsg::Echo { batch, .. }
            | BlockMsg::Ready { batch, .. }
            | BlockMsg::Check { batch, .. } => batch,
        }
    }
}

/// Transaction-ordering traffic: per-view blocks, view changes, and the
/// fallback chain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TxMsg {
    /// Block dissemination inside view `view`.
    Block { view: u64, msg: BlockMsg },
    /// The sender wants to move to `view`.
    Change { view: u64 },
    /// The sender saw strong backing for moving to `view`.
    Confirm { view: u64 },
    /// The sender locked its current view; `highest` is its highest
    /// accepted sequence backed by strong ready evidence.
    Lock { view: u64, highest: Option<u64> },
    /// Embedded agreement among the incoming view's members on the
    /// continuation sequence.
    Vc { view: u64, msg: MvbaMsg },
    /// A member of the incoming view announces the agreed continuation.
    NewView { view: u64, start: u64 },
    /// Backing for continuation `start` of the incoming view.
    ViewEcho { view: u64, start: u64 },
    /// Final confirmation leg for the continuation.
    ViewReady { view: u64, start: u64 },
    /// Dissemination of one block on the fallback chain.
    FallbackRbc { id: String, msg: RbcMsg<String> },
    /// Per-position agreement on the fallback chain.
    FallbackSlot { pos: u64, msg: MvbaMsg },
}

/// Everything that can travel on the simulated network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Payload {
    /// Standalone reliable broadcast, instances named by the scenario.
    Rbc { instance: String, msg: RbcMsg<String> },
    /// Standalone binary agreement.
    Abba { instance: String, msg: AbbaMsg },
    /// Standalone multi-valued agreement.
    Mvba { instance: String, msg: MvbaMsg },
    /// Standalone randomness sampling, one instance per tag.
    Crs { tag: String, msg: CrsMsg },
    /// Governance stack.
    Dabc(DabcMsg),
    /// Transaction ordering stack.
    Tx(TxMsg),
}

/// A message in flight: sender identity is bound by the channel, so a
/// faulty node can replay others' payloads but never forge their origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub from: NodeId,
    pub payload: Payload,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitset_basics() {
        let mut s = BitSet::empty();
        assert!(s.is_empty());
        assert!(s.insert(true));
        assert!(!s.insert(true));
        assert_eq!(s.singleton(), Some(true));
        s.insert(false);
        assert_eq!(s.singleton(), None);
        assert_eq!(s.len(), 2);
        assert!(BitSet::of(false).subset_of(s));
        assert!(!s.subset_of(BitSet::of(false)));
    }

    #[test]
    fn amendment_ids_differ_by_slot_and_payload() {
        let a = Amendment { payload: AmendmentPayload::Text("x".into()), slot: 0 };
        let b = Amendment { payload: AmendmentPayload::Text("x".into()), slot: 1 };
        let c = Amendment { payload: AmendmentPayload::Text("y".into()), slot: 0 };
        assert_ne!(a.id(), b.id());
        assert_ne!(a.id(), c.id());
        assert_eq!(a.id(), a.id());
    }

    #[test]
    fn digest_is_prefix_free() {
        assert_ne!(digest(&[b"ab", b"c"]), digest(&[b"a", b"bc"]));
        assert_ne!(digest(&[b"abc"]), digest(&[b"ab", b"c"]));
    }

    #[test]
    fn val_canon_bytes_distinct() {
        let vals = [
            Val::Label("seq:1".into()),
            Val::Seq(1),
            Val::Block("seq:1".into()),
            Val::Amendment { id: AmendmentId("00".into()), activation: 1 },
        ];
        for (i, a) in vals.iter().enumerate() {
            for b in vals.iter().skip(i + 1) {
                assert_ne!(a.canon_bytes(), b.canon_bytes(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn envelope_serializes_stably() {
        let e = Envelope {
            from: "a".into(),
            payload: Payload::Abba {
                instance: "x".into(),
                msg: AbbaMsg::Init { r: 0, v: true },
            },
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, serde_json::to_string(&e).unwrap());
        let back: Envelope = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }
}
