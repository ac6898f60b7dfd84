//! How much does leaking shares of the randomness source buy an attacker?
//! Below the reconstruction threshold the coin stays a fair flip; at full
//! compromise every output is computable in advance.

use cobalt::crs::KeySpec;
use cobalt::harness::crs_trials;
use cobalt::msg::KeyId;
use cobalt::topology::EssentialSubset;

fn main() {
    let spec = KeySpec {
        id: KeyId("beacon".into()),
        holders: vec![EssentialSubset::new(["a", "b", "c", "d"], 1, 3)],
    };
    for leaked in 0..=4 {
        let report = crs_trials(99, &spec, leaked, 2000);
        println!(
            "leaked {leaked}/4 shares: predicted {:>4}/{} ({:.3}) reconstructable={}",
            report.successes,
            report.trials,
            report.rate(),
            report.reconstructable
        );
    }
    println!("prediction stays at chance until the holder threshold falls");
}
