//! Scenario scripts: structured text files describing one reproducible run.
//!
//! A script names the protocol under test, the trust topology, scripted
//! faults, the adversary's delivery policy, timing parameters, and the
//! protocol-specific workload (proposals, inputs, blocks). The same
//! `[nodes]` / `[subsets]` sections feed both `analyze` and the simulator,
//! so a topology vetted by one is exactly what the other runs.

use crate::crs::KeySpec;
use crate::msg::Payload;
use crate::topology::{EssentialSubset, NodeId, TrustConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Which machine the run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Rbc,
    Abba,
    Mvba,
    Dabc,
    Txorder,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Protocol::Rbc => "rbc",
            Protocol::Abba => "abba",
            Protocol::Mvba => "mvba",
            Protocol::Dabc => "dabc",
            Protocol::Txorder => "txorder",
        };
        f.write_str(s)
    }
}

/// How the adversary orders deliverable messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayPolicy {
    /// Oldest first: a well-behaved network.
    #[default]
    None,
    /// Seeded random choice among everything in flight.
    Uniform,
    /// Newest first, starving old traffic up to the fairness bound.
    Lifo,
    /// Hold back messages whose serialized form matches a label.
    Bias,
}

/// Scripted misbehavior for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByzScript {
    /// Sends nothing at all.
    Silent,
    /// Splits every broadcast: half the listeners get a mutated payload.
    Equivocate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodesSection {
    pub names: Vec<String>,
}

/// One essential subset declaration. Every owner adopts it verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetSection {
    /// Nodes declaring this subset; defaults to every node.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub owners: Vec<String>,
    pub members: Vec<String>,
    pub t: usize,
    pub q: usize,
    /// Skip parameter-law validation for this subset. Lets a scenario give
    /// some nodes a deliberately broken configuration to show that their
    /// trouble stays their own; sound nodes keep their guarantees.
    #[serde(default, skip_serializing_if = "bool_is_false")]
    pub unchecked: bool,
}

fn bool_is_false(v: &bool) -> bool {
    !*v
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultsSection {
    /// Node name to crash tick. The node stops cold at that tick.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub crashed: BTreeMap<String, u64>,
    /// Node name to misbehavior script, active from the first tick.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub byzantine: BTreeMap<String, ByzScript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySection {
    #[serde(default)]
    pub delay: DelayPolicy,
    /// No correct-to-correct message may wait longer than this many
    /// delivered events.
    #[serde(default = "default_fairness")]
    pub fairness: u64,
    /// Substring the bias policy holds back (matched against the
    /// serialized payload).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
}

fn default_fairness() -> u64 {
    64
}

impl Default for AdversarySection {
    fn default() -> Self {
        AdversarySection { delay: DelayPolicy::None, fairness: default_fairness(), bias: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    /// Stamping boundaries fall on multiples of this.
    #[serde(default = "default_tick_interval")]
    pub tick_interval: u64,
    /// Activation margin added to the stamping boundary.
    #[serde(default)]
    pub advance: u64,
    /// How many delivered messages make one tick.
    #[serde(default = "default_dpt")]
    pub deliveries_per_tick: u64,
}

fn default_tick_interval() -> u64 {
    10
}

fn default_dpt() -> u64 {
    4
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection {
            tick_interval: default_tick_interval(),
            advance: 0,
            deliveries_per_tick: default_dpt(),
        }
    }
}

/// One randomizing key. Bootstrap keys count from slot zero; others only
/// after an amendment registers them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeySection {
    pub id: String,
    /// Holder subset; defaults to every node.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrsSection {
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keys: Vec<KeySection>,
}

fn default_master_seed() -> u64 {
    7
}

impl Default for CrsSection {
    fn default() -> Self {
        CrsSection { master_seed: default_master_seed(), keys: Vec::new() }
    }
}

/// One amendment put forward during the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSection {
    /// "text" or "allow_key".
    #[serde(default = "default_kind")]
    pub kind: String,
    /// Rule text, or the key id for allow_key.
    pub body: String,
    pub slot: u64,
    /// Proposing node. Absent means every correct node learns the content
    /// out of band and no one plays broadcaster.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposer: Option<String>,
    #[serde(default)]
    pub at_tick: u64,
    /// Nodes whose local policy rejects this amendment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oppose: Vec<String>,
}

fn default_kind() -> String {
    "text".into()
}

/// A knowledge query issued mid-run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaitSection {
    pub node: String,
    pub target: u64,
    #[serde(default)]
    pub at_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbcSection {
    /// Broadcasting node; absent means the content arrives as a
    /// self-certifying claim every correct node learns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broadcaster: Option<String>,
    pub content: String,
    /// Gate echoes on per-node verdicts instead of echoing anything.
    #[serde(default)]
    pub democratic: bool,
    /// Nodes whose verdict rejects the content (democratic mode).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oppose: Vec<String>,
    #[serde(default)]
    pub at_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbbaSection {
    /// Input bit per node, 0 or 1. Nodes missing here provide nothing.
    pub inputs: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvbaSection {
    /// Externally valid labels per node, fed in script order.
    pub inputs: BTreeMap<String, Vec<String>>,
    /// Ticks between consecutive labels of one node's list; zero feeds
    /// everything up front. Staggered arrival keeps candidate sets ragged
    /// across nodes, which is what makes the election narrow gradually.
    #[serde(default, skip_serializing_if = "u64_is_zero")]
    pub stagger: u64,
}

fn u64_is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSection {
    pub id: u64,
    pub members: Vec<String>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSection {
    pub view: u64,
    pub seq: u64,
    pub batch: String,
    #[serde(default)]
    pub at_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KillSection {
    /// Crash every member of this view...
    pub view: u64,
    /// ...at this tick.
    pub at_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeRequestSection {
    /// Every correct node asks for the next view at this tick.
    pub at_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FallbackProposalSection {
    pub id: String,
    pub proposer: String,
    #[serde(default)]
    pub at_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub views: Vec<ViewSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kills: Vec<KillSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub change_requests: Vec<ChangeRequestSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_proposals: Vec<FallbackProposalSection>,
}

/// A complete run description. Everything the simulator needs, and nothing
/// that varies between two runs of the same script and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub protocol: Protocol,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub tick_budget: u64,
    /// Decide slots optimistically after one agreement round when support
    /// is unanimous.
    #[serde(default)]
    pub pipeline: bool,
    pub nodes: NodesSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subsets: Vec<SubsetSection>,
    #[serde(default)]
    pub faults: FaultsSection,
    #[serde(default)]
    pub adversary: AdversarySection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub crs: CrsSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub proposals: Vec<ProposalSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waits: Vec<WaitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbc: Option<RbcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abba: Option<AbbaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mvba: Option<MvbaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txorder: Option<TxSection>,
}

fn default_seed() -> u64 {
    1
}

fn default_budget() -> u64 {
    10_000
}

impl ScenarioScript {
    pub fn parse(text: &str) -> Result<Self> {
        let script: ScenarioScript =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        toml::to_string_pretty(self).expect("scripts always serialize")
    }

    /// Build the trust topology from the `[nodes]` and `[subsets]`
    /// sections. Owners default to every node; `analyze` and the simulator
    /// both go through here.
    pub fn trust_config(&self) -> Result<TrustConfig> {
        let mut config = TrustConfig::new(self.nodes.names.iter().cloned());
        for section in &self.subsets {
            if !section.unchecked {
                let bad =
                    crate::topology::validate_subset(section.members.len(), section.t, section.q);
                if let Some(v) = bad.first() {
                    return Err(Error::Config(format!(
                        "subset {:?} (t={}, q={}): {v}",
                        section.members, section.t, section.q
                    )));
                }
            }
            let subset = EssentialSubset::new(section.members.iter().cloned(), section.t, section.q);
            let owners: Vec<String> = if section.owners.is_empty() {
                self.nodes.names.clone()
            } else {
                section.owners.clone()
            };
            for owner in owners {
                config.add_subset(owner, subset.clone());
            }
        }
        config.validate_coverage()?;
        Ok(config)
    }

    /// The full key registry from `[crs]`, holder subsets defaulted to the
    /// whole network with classic thresholds.
    pub fn key_registry(&self) -> Result<Vec<KeySpec>> {
        let n_all = self.nodes.names.len();
        let mut out = Vec::new();
        for key in &self.crs.keys {
            let members: Vec<String> =
                if key.members.is_empty() { self.nodes.names.clone() } else { key.members.clone() };
            let n = members.len();
            let t = key.t.unwrap_or_else(|| n.saturating_sub(1) / 3);
            let q = key.q.unwrap_or(n - t);
            if n == 0 || n > n_all {
                return Err(Error::Config(format!("key {}: bad holder set", key.id)));
            }
            out.push(KeySpec {
                id: crate::msg::KeyId(key.id.clone()),
                holders: vec![EssentialSubset::new(members, t, q)],
            });
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.names.is_empty() {
            return Err(Error::Config("no nodes declared".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.nodes.names {
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("duplicate node {name}")));
            }
        }
        let known = |n: &String| seen.contains(n);
        for s in &self.subsets {
            for m in s.owners.iter().chain(&s.members) {
                if !known(m) {
                    return Err(Error::UnknownNode(m.clone()));
                }
            }
        }
        for n in self.faults.crashed.keys().chain(self.faults.byzantine.keys()) {
            if !known(n) {
                return Err(Error::UnknownNode(n.clone()));
            }
        }
        if let Some(n) = self
            .faults
            .crashed
            .keys()
            .find(|n| self.faults.byzantine.contains_key(*n))
        {
            return Err(Error::Config(format!("{n} is both crashed and byzantine")));
        }
        for k in &self.crs.keys {
            for m in &k.members {
                if !known(m) {
                    return Err(Error::UnknownNode(m.clone()));
                }
            }
        }
        for p in &self.proposals {
            if p.kind != "text" && p.kind != "allow_key" {
                return Err(Error::Config(format!("unknown proposal kind {}", p.kind)));
            }
            for m in p.proposer.iter().chain(&p.oppose) {
                if !known(m) {
                    return Err(Error::UnknownNode(m.clone()));
                }
            }
        }
        for w in &self.waits {
            if !known(&w.node) {
                return Err(Error::UnknownNode(w.node.clone()));
            }
        }
        if let Some(rbc) = &self.rbc {
            for m in rbc.broadcaster.iter().chain(&rbc.oppose) {
                if !known(m) {
                    return Err(Error::UnknownNode(m.clone()));
                }
            }
        }
        if let Some(abba) = &self.abba {
            for (n, v) in &abba.inputs {
                if !known(n) {
                    return Err(Error::UnknownNode(n.clone()));
                }
                if *v > 1 {
                    return Err(Error::Config(format!("input for {n} must be 0 or 1")));
                }
            }
        }
        if let Some(mvba) = &self.mvba {
            for n in mvba.inputs.keys() {
                if !known(n) {
                    return Err(Error::UnknownNode(n.clone()));
                }
            }
        }
        if let Some(tx) = &self.txorder {
            let mut view_ids = std::collections::BTreeSet::new();
            for v in &tx.views {
                if !view_ids.insert(v.id) {
                    return Err(Error::Config(format!("duplicate view {}", v.id)));
                }
                if v.members.is_empty() || v.t >= v.members.len() {
                    return Err(Error::Config(format!("view {}: bad committee", v.id)));
                }
                for m in &v.members {
                    if !known(m) {
                        return Err(Error::UnknownNode(m.clone()));
                    }
                }
            }
            for b in &tx.blocks {
                if !view_ids.contains(&b.view) {
                    return Err(Error::Config(format!("block for unknown view {}", b.view)));
                }
            }
            for k in &tx.kills {
                if !view_ids.contains(&k.view) {
                    return Err(Error::Config(format!("kill for unknown view {}", k.view)));
                }
            }
            for f in &tx.fallback_proposals {
                if !known(&f.proposer) {
                    return Err(Error::UnknownNode(f.proposer.clone()));
                }
            }
            if self.protocol == Protocol::Txorder && tx.views.is_empty() {
                return Err(Error::Config("txorder needs at least one view".into()));
            }
        } else if self.protocol == Protocol::Txorder {
            return Err(Error::Config("txorder protocol needs a [txorder] section".into()));
        }
        if self.time.tick_interval == 0 || self.time.deliveries_per_tick == 0 {
            return Err(Error::Config("time parameters must be positive".into()));
        }
        match self.protocol {
            Protocol::Rbc if self.rbc.is_none() => {
                Err(Error::Config("rbc protocol needs an [rbc] section".into()))
            }
            Protocol::Abba if self.abba.is_none() => {
                Err(Error::Config("abba protocol needs an [abba] section".into()))
            }
            Protocol::Mvba if self.mvba.is_none() => {
                Err(Error::Config("mvba protocol needs an [mvba] section".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.nodes.names.iter().map(NodeId::new).collect();
        ids.sort();
        ids
    }

    /// Nodes that are neither crashed at any point nor byzantine.
    pub fn correct_nodes(&self) -> Vec<NodeId> {
        self.node_ids()
            .into_iter()
            .filter(|n| {
                !self.faults.crashed.contains_key(n.as_str())
                    && !self.faults.byzantine.contains_key(n.as_str())
            })
            .collect()
    }

    /// Nodes declaring at least one subset whose parameters break the
    /// safety laws. Their machines sit outside every guarantee.
    pub fn misconfigured_nodes(&self) -> std::collections::BTreeSet<NodeId> {
        let everyone = self.node_ids();
        let mut out = std::collections::BTreeSet::new();
        for section in &self.subsets {
            let bad =
                crate::topology::validate_subset(section.members.len(), section.t, section.q);
            if bad.is_empty() {
                continue;
            }
            if section.owners.is_empty() {
                out.extend(everyone.iter().cloned());
            } else {
                out.extend(section.owners.iter().map(NodeId::new));
            }
        }
        out
    }
}

/// The textual tag the bias policy matches against.
pub fn payload_text(payload: &Payload) -> String {
    serde_json::to_string(payload).expect("payloads always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
protocol = "dabc"
seed = 3
tick_budget = 500

[nodes]
names = ["a", "b", "c", "d"]

[[subsets]]
members = ["a", "b", "c", "d"]
t = 1
q = 3

[faults]
crashed = { d = 40 }

[adversary]
delay = "lifo"
fairness = 32

[time]
tick_interval = 10
advance = 5

[crs]
master_seed = 9
[[crs.keys]]
id = "genesis"

[[proposals]]
body = "raise-reserve"
slot = 0
proposer = "a"
oppose = ["c"]

[[waits]]
node = "b"
target = 40
at_tick = 2
"#;

    #[test]
    fn parses_sample_and_resolves_topology() {
        let s = ScenarioScript::parse(SAMPLE).unwrap();
        assert_eq!(s.protocol, Protocol::Dabc);
        assert_eq!(s.seed, 3);
        assert_eq!(s.adversary.delay, DelayPolicy::Lifo);
        assert_eq!(s.adversary.fairness, 32);
        assert_eq!(s.faults.crashed.get("d"), Some(&40));
        let config = s.trust_config().unwrap();
        assert_eq!(config.node_count(), 4);
        let a = NodeId::new("a");
        assert_eq!(config.subsets_of(&a).len(), 1);
        assert_eq!(config.subsets_of(&a)[0].q, 3);
        let keys = s.key_registry().unwrap();
        assert_eq!(keys.len(), 1);
        assert_eq!(keys[0].holders[0].n(), 4);
        assert_eq!(keys[0].holders[0].t, 1);
        assert_eq!(keys[0].holders[0].q, 3);
        assert_eq!(s.correct_nodes().len(), 3);
    }

    #[test]
    fn round_trips_through_render() {
        let s = ScenarioScript::parse(SAMPLE).unwrap();
        let rendered = s.render();
        let back = ScenarioScript::parse(&rendered).unwrap();
        assert_eq!(s, back);
        // Rendering is a fixpoint: canonical text stays put.
        assert_eq!(rendered, back.render());
    }

    #[test]
    fn rejects_unknown_nodes_and_bad_sections() {
        let bad = SAMPLE.replace("proposer = \"a\"", "proposer = \"z\"");
        assert!(ScenarioScript::parse(&bad).is_err());
        let bad = SAMPLE.replace("crashed = { d = 40 }", "crashed = { d = 40 }\nbyzantine = { d = \"silent\" }");
        assert!(ScenarioScript::parse(&bad).is_err());
        let bad = "protocol = \"abba\"\n[nodes]\nnames = [\"a\"]\n";
        assert!(matches!(ScenarioScript::parse(bad), Err(Error::Config(_))));
    }

    #[test]
    fn defaults_fill_in() {
        let min = r#"
protocol = "mvba"
[nodes]
names = ["a", "b", "c", "d"]
[[subsets]]
members = ["a", "b", "c", "d"]
t = 1
q = 3
[crs]
[[crs.keys]]
id = "k0"
[mvba]
inputs = { a = ["x"] }
"#;
        let s = ScenarioScript::parse(min).unwrap();
        assert_eq!(s.seed, 1);
        assert_eq!(s.tick_budget, 10_000);
        assert_eq!(s.adversary.fairness, 64);
        assert_eq!(s.time.tick_interval, 10);
        assert_eq!(s.time.deliveries_per_tick, 4);
        assert!(!s.pipeline);
    }
}
