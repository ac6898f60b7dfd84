//! Per-label message bookkeeping shared by every protocol layer: first
//! claim per sender wins, later contradictions are flagged, and support is
//! graded against a node's essential subsets.

use std::collections::{BTreeMap, BTreeSet};

use crate::topology::{support_by, EssentialSubset, NodeId, SupportGrade};
use crate::Result;

/// What happened when a claim was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recorded {
    /// First claim from this sender.
    Fresh,
    /// Same claim again; ignored.
    Duplicate,
    /// A different claim than the sender's first; ignored and remembered
    /// as equivocation.
    Equivocation,
}

/// Tracks one claim per sender for a single (instance, label) pair.
#[derive(Debug, Clone)]
pub struct SupportTracker<C> {
    claims: BTreeMap<NodeId, C>,
    equivocators: BTreeSet<NodeId>,
}

impl<C> Default for SupportTracker<C> {
    fn default() -> Self {
        SupportTracker {
            claims: BTreeMap::new(),
            equivocators: BTreeSet::new(),
        }
    }
}

impl<C: Eq + Clone> SupportTracker<C> {
    pub fn new() -> Self {
        SupportTracker {
            claims: BTreeMap::new(),
            equivocators: BTreeSet::new(),
        }
    }

    /// Record `content` from `sender`. Only the sender's first claim is
    /// kept; a differing second claim marks the sender as an equivocator.
    pub fn record(&mut self, sender: &NodeId, content: C) -> Recorded {
        match self.claims.get(sender) {
            None => {
                self.claims.insert(sender.clone(), content);
                Recorded::Fresh
            }
            Some(prev) if *prev == content => Recorded::Duplicate,
            Some(_) => {
                self.equivocators.insert(sender.clone());
                Recorded::Equivocation
            }
        }
    }

    pub fn claim_of(&self, sender: &NodeId) -> Option<&C> {
        self.claims.get(sender)
    }

    pub fn senders(&self) -> impl Iterator<Item = (&NodeId, &C)> {
        self.claims.iter()
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn equivocators(&self) -> &BTreeSet<NodeId> {
        &self.equivocators
    }

    /// Grade support for `target` against `es`.
    pub fn grade(&self, es: &[EssentialSubset], target: &C) -> Result<SupportGrade> {
        support_by(es, |m| self.claims.get(m) == Some(target))
    }

    /// Grade support counting senders whose claim satisfies `pred`.
    pub fn grade_by(
        &self,
        es: &[EssentialSubset],
        pred: impl Fn(&C) -> bool,
    ) -> Result<SupportGrade> {
        support_by(es, |m| self.claims.get(m).map(&pred).unwrap_or(false))
    }

    /// Distinct claimed contents, each with its senders.
    pub fn by_content(&self) -> Vec<(&C, Vec<&NodeId>)> {
        let mut out: Vec<(&C, Vec<&NodeId>)> = Vec::new();
        for (sender, content) in &self.claims {
            match out.iter_mut().find(|(c, _)| *c == content) {
                Some((_, senders)) => senders.push(sender),
                None => out.push((content, vec![sender])),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::EssentialSubset;

    #[test]
    fn first_claim_wins() {
        let mut t: SupportTracker<&str> = SupportTracker::new();
        assert_eq!(t.record(&"a".into(), "x"), Recorded::Fresh);
        assert_eq!(t.record(&"a".into(), "x"), Recorded::Duplicate);
        assert_eq!(t.record(&"a".into(), "y"), Recorded::Equivocation);
        assert_eq!(t.claim_of(&"a".into()), Some(&"x"));
        assert!(t.equivocators().contains(&NodeId::from("a")));
    }

    #[test]
    fn grading_matches_topology_support() {
        let es = vec![EssentialSubset::new(vec!["a", "b", "c", "d"], 1, 3)];
        let mut t: SupportTracker<u8> = SupportTracker::new();
        t.record(&"a".into(), 7);
        t.record(&"b".into(), 7);
        assert_eq!(t.grade(&es, &7).unwrap(), SupportGrade::Weak);
        t.record(&"c".into(), 7);
        assert_eq!(t.grade(&es, &7).unwrap(), SupportGrade::Strong);
        assert_eq!(t.grade(&es, &9).unwrap(), SupportGrade::None);
    }
}
