//! Build a heterogeneous trust configuration by hand and report what the
//! topology layer concludes about it: parameter validity, per-node health
//! under a fault assignment, pairwise linkage, and connectivity.

use cobalt::topology::{
    classify, connectivity, linkage, validate_subset, EssentialSubset, FaultAssignment,
    FaultStatus, NodeId, TrustConfig,
};

fn main() -> cobalt::Result<()> {
    // Seven nodes, two overlapping circles. Everyone trusts the core
    // a-b-c-d; the east wing additionally trusts d-e-f-g.
    let names = ["a", "b", "c", "d", "e", "f", "g"];
    let core = EssentialSubset::new(["a", "b", "c", "d"], 1, 3);
    let east = EssentialSubset::new(["d", "e", "f", "g"], 1, 3);
    let mut config = TrustConfig::new(names);
    for n in names {
        config.add_subset(n, core.clone());
        config.add_subset(n, east.clone());
    }
    config.validate()?;
    println!("configuration valid: {} nodes, 2 circles", config.node_count());

    for (n, t, q) in [(4, 1, 3), (4, 2, 3), (7, 2, 5), (3, 1, 3)] {
        let verdict = validate_subset(n, t, q);
        if verdict.is_empty() {
            println!("n={n} t={t} q={q}: lawful");
        } else {
            let products: Vec<String> = verdict.iter().map(|v| v.to_string()).collect();
            println!("n={n} t={t} q={q}: {}", products.join("; "));
        }
    }

    // g crashes and b turns byzantine; see who keeps their guarantees.
    let mut faults = FaultAssignment::new();
    faults.set("g", FaultStatus::Crashed);
    faults.set("b", FaultStatus::Byzantine);

    println!("\nwith g crashed and b byzantine:");
    for (node, class) in classify(&config, &faults)? {
        println!(
            "  {node}: healthy={} unblocked={}",
            class.healthy, class.unblocked
        );
    }

    let a = NodeId::new("a");
    let e = NodeId::new("e");
    let l = linkage(&config, &faults, &a, &e)?;
    println!("\na-e linkage: linked={} fully={}", l.linked, l.fully_linked);
    for node in ["a", "d", "e"] {
        let c = connectivity(&config, &faults, &NodeId::new(node))?;
        println!("{node} connectivity: strong={} weak={}", c.strongly, c.weakly);
    }
    Ok(())
}
