//! Common randomness source: per-tag coins and seeds built from threshold
//! share reveals.
//!
//! Each *randomizing key* is held, in `(t+1)`-of-`n` threshold form, by one
//! or more essential subsets. To sample the randomness for a tag, every
//! holder reveals its share token; once any holder subset yields `t+1`
//! valid tokens for a key, the key's signature over the tag is fixed, and
//! whoever reconstructs it echoes the opened signature so others finish
//! too. The output mixes the signatures of *all* registered keys, so the
//! adversary must break every key to predict it, and no coalition at or
//! below `t` shares of one honest key learns anything before honest nodes
//! reveal.
//!
//! Shares and signatures are simulation-grade: a [`CrsOracle`] seeded from
//! the run's master seed stands in for the threshold cryptography. Tokens
//! verify by recomputation, reconstruction hands out the signature once
//! enough distinct holders revealed, and the final output is a pure
//! function of (master seed, tag, registered key set).

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::msg::{digest, CrsMsg, KeyId, Opaque32};
use crate::topology::{EssentialSubset, NodeId};
use crate::{Error, Result};

/// A registered randomizing key: its identity and the subsets holding its
/// shares.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySpec {
    pub id: KeyId,
    pub holders: Vec<EssentialSubset>,
}

impl KeySpec {
    /// Nodes holding a share of this key.
    pub fn holder_nodes(&self) -> BTreeSet<NodeId> {
        self.holders
            .iter()
            .flat_map(|s| s.members.iter().cloned())
            .collect()
    }
}

/// Simulator-held secrets backing the threshold scheme. Protocol code only
/// ever touches tokens and signatures derived here; adversary code is
/// handed tokens for the holders it controls and nothing else.
#[derive(Debug, Clone)]
pub struct CrsOracle {
    master: [u8; 32],
}

impl CrsOracle {
    pub fn new(master_seed: u64) -> Self {
        CrsOracle {
            master: digest(&[b"crs-master", &master_seed.to_be_bytes()]),
        }
    }

    fn secret(&self, key: &KeyId) -> [u8; 32] {
        digest(&[b"key-secret", &self.master, key.0.as_bytes()])
    }

    /// The key's signature over `tag`: what `t+1` shares reconstruct.
    pub fn signature(&self, key: &KeyId, tag: &str) -> Opaque32 {
        Opaque32(digest(&[b"sig", &self.secret(key), tag.as_bytes()]))
    }

    /// The share token `holder` reveals for `tag`.
    pub fn share_token(&self, key: &KeyId, tag: &str, holder: &NodeId) -> Opaque32 {
        Opaque32(digest(&[
            b"share",
            &self.secret(key),
            tag.as_bytes(),
            holder.0.as_bytes(),
        ]))
    }

    fn token_valid(&self, key: &KeyId, tag: &str, holder: &NodeId, token: &Opaque32) -> bool {
        self.share_token(key, tag, holder) == *token
    }
}

/// Mix opened signatures (in canonical key order) into the final output.
pub fn mix(sigs: &BTreeMap<KeyId, Opaque32>) -> Opaque32 {
    let parts: Vec<&[u8]> = std::iter::once(&b"mix"[..])
        .chain(sigs.iter().flat_map(|(k, sig)| [k.0.as_bytes(), &sig.0[..]]))
        .collect();
    Opaque32(digest(&parts))
}

/// Expand a mixed output into a fair coin.
pub fn expand_bit(mixed: Opaque32) -> bool {
    ChaCha8Rng::from_seed(mixed.0).gen::<bool>()
}

/// Expand a mixed output into a 128-bit seed.
pub fn expand_seed(mixed: Opaque32) -> [u8; 16] {
    let mut rng = ChaCha8Rng::from_seed(mixed.0);
    let mut out = [0u8; 16];
    rng.fill(&mut out);
    out
}

/// What a handled share did to the instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CrsStep {
    /// Messages to broadcast (own share reveals, opened-signature echoes).
    pub out: Vec<CrsMsg>,
    /// Set when this call produced the instance's output.
    pub output: Option<Opaque32>,
    /// Invalid tokens or signatures seen in this call.
    pub rejected: u32,
}

impl CrsStep {
    fn merge(&mut self, other: CrsStep) {
        self.out.extend(other.out);
        self.output = self.output.or(other.output);
        self.rejected += other.rejected;
    }
}

/// One node's view of the randomness sampling for a single tag.
#[derive(Debug, Clone)]
pub struct CrsInstance {
    me: NodeId,
    tag: String,
    registry: Vec<KeySpec>,
    sampled: bool,
    tokens: BTreeMap<KeyId, BTreeMap<NodeId, Opaque32>>,
    opened: BTreeMap<KeyId, Opaque32>,
    echoed: BTreeSet<KeyId>,
    output: Option<Opaque32>,
}

impl CrsInstance {
    /// Snapshot `registry` for this tag. The registered key set is fixed at
    /// creation; keys ratified later feed later instances.
    pub fn new(me: NodeId, tag: impl Into<String>, registry: Vec<KeySpec>) -> Self {
        CrsInstance {
            me,
            tag: tag.into(),
            registry,
            sampled: false,
            tokens: BTreeMap::new(),
            opened: BTreeMap::new(),
            echoed: BTreeSet::new(),
            output: None,
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn output(&self) -> Option<Opaque32> {
        self.output
    }

    pub fn sampled(&self) -> bool {
        self.sampled
    }

    /// Reveal this node's shares for every registered key it holds.
    /// Idempotent after the first call. Sampling with no registered keys is
    /// a configuration error.
    pub fn sample(&mut self, oracle: &CrsOracle) -> Result<CrsStep> {
        if self.registry.is_empty() {
            return Err(Error::Config(format!(
                "sample on tag {} with no registered keys",
                self.tag
            )));
        }
        let mut step = CrsStep::default();
        if self.sampled {
            return Ok(step);
        }
        self.sampled = true;
        for key in self.registry.clone() {
            if key.holder_nodes().contains(&self.me) {
                let token = oracle.share_token(&key.id, &self.tag, &self.me);
                step.merge(self.accept_token(oracle, self.me.clone(), key.id.clone(), token));
                step.out.push(CrsMsg::Share { key: key.id, token });
            }
        }
        step.merge(self.finish_if_complete());
        Ok(step)
    }

    /// Handle a share or opened signature from `sender`. Invalid material
    /// is dropped and counted, never acted on.
    pub fn handle(&mut self, oracle: &CrsOracle, sender: &NodeId, msg: CrsMsg) -> CrsStep {
        let mut step = match msg {
            CrsMsg::Share { key, token } => {
                if !self.registry.iter().any(|k| k.id == key)
                    || !oracle.token_valid(&key, &self.tag, sender, &token)
                {
                    CrsStep { rejected: 1, ..CrsStep::default() }
                } else {
                    self.accept_token(oracle, sender.clone(), key, token)
                }
            }
            CrsMsg::Opened { key, sig } => {
                if !self.registry.iter().any(|k| k.id == key)
                    || oracle.signature(&key, &self.tag) != sig
                {
                    CrsStep { rejected: 1, ..CrsStep::default() }
                } else {
                    self.opened.insert(key, sig);
                    CrsStep::default()
                }
            }
        };
        step.merge(self.finish_if_complete());
        step
    }

    fn accept_token(
        &mut self,
        oracle: &CrsOracle,
        holder: NodeId,
        key: KeyId,
        token: Opaque32,
    ) -> CrsStep {
        let mut step = CrsStep::default();
        self.tokens.entry(key.clone()).or_default().insert(holder, token);
        // Reconstruction: t+1 distinct holders inside one holder subset.
        let spec = self.registry.iter().find(|k| k.id == key).unwrap();
        let have = &self.tokens[&key];
        let reconstructable = spec.holders.iter().any(|s| {
            s.members.iter().filter(|m| have.contains_key(*m)).count() >= s.t + 1
        });
        if reconstructable && !self.opened.contains_key(&key) {
            let sig = oracle.signature(&key, &self.tag);
            self.opened.insert(key.clone(), sig);
            if self.echoed.insert(key.clone()) {
                step.out.push(CrsMsg::Opened { key, sig });
            }
        }
        step
    }

    fn finish_if_complete(&mut self) -> CrsStep {
        let mut step = CrsStep::default();
        if self.output.is_none()
            && !self.registry.is_empty()
            && self.registry.iter().all(|k| self.opened.contains_key(&k.id))
        {
            let mixed = mix(&self.opened);
            self.output = Some(mixed);
            step.output = Some(mixed);
        }
        step
    }
}

/// What the adversary can see while trying to predict an output: tokens of
/// the holders it controls plus everything already revealed on the wire.
#[derive(Debug, Clone, Default)]
pub struct AdversaryView {
    pub tokens: BTreeMap<KeyId, BTreeSet<NodeId>>,
    pub opened: BTreeSet<KeyId>,
}

impl AdversaryView {
    pub fn saw_share(&mut self, key: &KeyId, holder: &NodeId) {
        self.tokens.entry(key.clone()).or_default().insert(holder.clone());
    }

    pub fn saw_opened(&mut self, key: &KeyId) {
        self.opened.insert(key.clone());
    }
}

/// Whether the view suffices to reconstruct every registered key's
/// signature, and with it the exact output.
pub fn view_reconstructs_all(registry: &[KeySpec], view: &AdversaryView) -> bool {
    !registry.is_empty()
        && registry.iter().all(|key| {
            view.opened.contains(&key.id)
                || key.holders.iter().any(|s| {
                    let have = view.tokens.get(&key.id);
                    s.members
                        .iter()
                        .filter(|m| have.map(|h| h.contains(*m)).unwrap_or(false))
                        .count()
                        >= s.t + 1
                })
        })
}

/// The exact output an all-seeing party computes for a tag.
pub fn reference_output(oracle: &CrsOracle, registry: &[KeySpec], tag: &str) -> Opaque32 {
    let sigs: BTreeMap<KeyId, Opaque32> = registry
        .iter()
        .map(|k| (k.id.clone(), oracle.signature(&k.id, tag)))
        .collect();
    mix(&sigs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_key() -> Vec<KeySpec> {
        vec![KeySpec {
            id: "k0".into(),
            holders: vec![EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 3)],
        }]
    }

    fn two_keys() -> Vec<KeySpec> {
        let mut r = one_key();
        r.push(KeySpec {
            id: "k1".into(),
            holders: vec![EssentialSubset::new(vec!["b", "c", "d", "e"], 1, 3)],
        });
        r
    }

    #[test]
    fn all_holders_sampling_agree() {
        let oracle = CrsOracle::new(7);
        let registry = two_keys();
        let nodes: Vec<NodeId> = ["a", "b", "c", "d", "e"].map(NodeId::from).to_vec();
        let mut instances: BTreeMap<NodeId, CrsInstance> = nodes
            .iter()
            .map(|n| (n.clone(), CrsInstance::new(n.clone(), "t/0", registry.clone())))
            .collect();
        let mut wire: Vec<(NodeId, CrsMsg)> = Vec::new();
        for n in &nodes {
            let step = instances.get_mut(n).unwrap().sample(&oracle).unwrap();
            wire.extend(step.out.into_iter().map(|m| (n.clone(), m)));
        }
        while let Some((from, msg)) = wire.pop() {
            for n in &nodes {
                if *n == from {
                    continue;
                }
                let step = instances.get_mut(n).unwrap().handle(&oracle, &from, msg.clone());
                assert_eq!(step.rejected, 0);
                wire.extend(step.out.into_iter().map(|m| (n.clone(), m)));
            }
        }
        let expect = reference_output(&oracle, &registry, "t/0");
        for n in &nodes {
            assert_eq!(instances[n].output(), Some(expect), "{n}");
        }
    }

    #[test]
    fn opened_echo_alone_completes_a_bystander() {
        let oracle = CrsOracle::new(9);
        let registry = two_keys();
        let mut bystander = CrsInstance::new("z".into(), "t/1", registry.clone());
        let step = bystander.handle(
            &oracle,
            &"a".into(),
            CrsMsg::Opened { key: "k0".into(), sig: oracle.signature(&"k0".into(), "t/1") },
        );
        assert!(step.output.is_none());
        let step = bystander.handle(
            &oracle,
            &"b".into(),
            CrsMsg::Opened { key: "k1".into(), sig: oracle.signature(&"k1".into(), "t/1") },
        );
        assert_eq!(step.output, Some(reference_output(&oracle, &registry, "t/1")));
    }

    #[test]
    fn forged_material_is_rejected() {
        let oracle = CrsOracle::new(11);
        let mut inst = CrsInstance::new("a".into(), "t/2", one_key());
        // Replaying b's real token under c's identity fails verification.
        let token = oracle.share_token(&"k0".into(), "t/2", &"b".into());
        let step = inst.handle(&oracle, &"c".into(), CrsMsg::Share { key: "k0".into(), token });
        assert_eq!(step.rejected, 1);
        // A made-up opened signature fails too.
        let step = inst.handle(
            &oracle,
            &"c".into(),
            CrsMsg::Opened { key: "k0".into(), sig: Opaque32([9; 32]) },
        );
        assert_eq!(step.rejected, 1);
        assert!(inst.output().is_none());
    }

    #[test]
    fn sample_without_keys_is_config_error() {
        let oracle = CrsOracle::new(1);
        let mut inst = CrsInstance::new("a".into(), "t/3", Vec::new());
        assert!(matches!(inst.sample(&oracle), Err(Error::Config(_))));
    }

    #[test]
    fn sample_is_idempotent() {
        let oracle = CrsOracle::new(1);
        let mut inst = CrsInstance::new("a".into(), "t/4", one_key());
        let first = inst.sample(&oracle).unwrap();
        assert_eq!(first.out.len(), 1);
        let again = inst.sample(&oracle).unwrap();
        assert!(again.out.is_empty());
    }

    #[test]
    fn below_threshold_views_cannot_reconstruct() {
        let registry = one_key();
        let mut view = AdversaryView::default();
        view.saw_share(&"k0".into(), &"a".into());
        assert!(!view_reconstructs_all(&registry, &view));
        view.saw_share(&"k0".into(), &"b".into());
        assert!(view_reconstructs_all(&registry, &view), "t+1 = 2 shares suffice");
    }

    #[test]
    fn outputs_differ_across_tags_and_seeds() {
        let registry = one_key();
        let o1 = CrsOracle::new(1);
        let o2 = CrsOracle::new(2);
        assert_ne!(
            reference_output(&o1, &registry, "x"),
            reference_output(&o1, &registry, "y")
        );
        assert_ne!(
            reference_output(&o1, &registry, "x"),
            reference_output(&o2, &registry, "x")
        );
        assert_eq!(
            reference_output(&o1, &registry, "x"),
            reference_output(&o1, &registry, "x")
        );
    }

    #[test]
    fn expansion_is_deterministic() {
        let m = Opaque32([3; 32]);
        assert_eq!(expand_bit(m), expand_bit(m));
        assert_eq!(expand_seed(m), expand_seed(m));
    }
}
