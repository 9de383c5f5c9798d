//! Finite-difference check of the full training objective (network forward,
//! anchor matching, mining, both loss terms) at reduced width, across a
//! batch of seeds.

use ctcn::train::pipeline_gradient_check;

fn main() {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let err = pipeline_gradient_check(seed).unwrap();
        println!("seed {seed}: max relative error {err:.3e}");
        worst = worst.max(err);
    }
    println!("worst over all seeds: {worst:.3e}");
    assert!(worst < 1e-4, "gradient check failed");
}
