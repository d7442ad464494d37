//! Scratch probe: full-data training on the default benchmark, printing
//! per-class accuracy and the test-set confusion matrix.

use prism_core::eval::{train_and_test, EvalProtocol};
use prism_core::models::Architecture;
use prism_core::videogen::{self, Video};
use prism_core::geometry::Geometry;

fn main() {
    let geom = Geometry::desk();
    let ds = videogen::generate(&videogen::default_programs(), 64, 32, geom, 2026).unwrap();
    let train: Vec<Video> = ds.train.iter().flatten().cloned().collect();
    let protocol = EvalProtocol::default();
    for seed in [1u64, 2, 3] {
        let run = train_and_test(&train, &ds, &protocol, Architecture::Conv3dMicro, seed).unwrap();
        println!("seed {seed}: accuracy {:.4}", run.accuracy);
        for (c, (good, total)) in run.per_class.iter().enumerate() {
            println!(
                "  class {c} {:<12} {good}/{total} = {:.3}",
                ds.class_names[c],
                *good as f64 / *total as f64
            );
        }
    }
}
