//! Scratch probe: default-config condensation across the acceptance
//! seed triple, printing insertion events and final key counts.

use prism_core::condenser::{condense, CondenseConfig};
use prism_core::config::RunConfig;
use prism_core::pipeline;

fn main() {
    let cfg = RunConfig::default_run();
    let ds = pipeline::generate_dataset(&cfg).unwrap();
    let spec = pipeline::matching_spec(&cfg).unwrap();
    for seed in [1u64, 2, 3] {
        let t0 = std::time::Instant::now();
        let mode = CondenseConfig {
            seed,
            ..cfg.condense.clone()
        };
        let out = condense(&mode, &ds, &spec).unwrap();
        let keys: Vec<usize> = out.videos.iter().map(|v| v.key_count()).collect();
        println!(
            "seed {seed}: {} events, keys per class {:?}, ranks {:?}, {:.1}s",
            out.events.len(),
            keys,
            ds.class_ranks,
            t0.elapsed().as_secs_f64()
        );
        for e in &out.events {
            println!(
                "  iter {} class {} video {} inserted {} between ({}, {}) cos ({:.3}, {:.3})",
                e.iteration, e.class, e.video, e.inserted, e.left_key, e.right_key, e.cos_left,
                e.cos_right
            );
        }
    }
}
