//! Scratch timing probe (manual).
use guided_co::datagen::{generate_one, GeneratorKind, GeneratorSpec};
use guided_co::kcut::{karger_stein, CompareMode};
use guided_co::rng::rng_from_seed;
use std::time::Instant;

fn main() {
    let spec = GeneratorSpec {
        kind: GeneratorKind::NoiGenPlus,
        nodes_min: 50,
        nodes_max: 50,
        k: 3,
        subgraphs: Some(3),
        density: 0.3,
        inter_fraction: 0.05,
        weight_scale_factor: Some(0.5),
        label_runs: 1,
        seed: 1,
    };
    let t0 = Instant::now();
    let inst = generate_one(&spec, &mut rng_from_seed(5)).unwrap();
    println!("gen one n=50 (label_runs=1): {:?}", t0.elapsed());
    println!("edges: {}", inst.graph().edge_count());

    let t1 = Instant::now();
    let runs = 100u32;
    let mut rng = rng_from_seed(9);
    for _ in 0..runs {
        let _ = karger_stein(
            inst.graph(),
            3,
            None,
            CompareMode::SampleModifiedCompareOriginal,
            &mut rng,
        )
        .unwrap();
    }
    println!(
        "KS n=50 x{runs}: {:?} ({:?}/run)",
        t1.elapsed(),
        t1.elapsed() / runs
    );
}
