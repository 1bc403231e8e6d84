//! Scratch timing probe for the TSP training step (manual).
use std::time::Instant;

use guided_co::datagen::gen_euclidean_tsp;
use guided_co::estimators::{build_pool, pbge_gradient};
use guided_co::gnn::{
    backward, forward_batch, init_params, instance_features, sgd_step_adamw, AdamWState,
    Features, GnnConfig, NormMode,
};
use guided_co::graph::ProblemInstance;
use guided_co::rng::{child_seed, rng_from_seed};
use guided_co::tsp::random_insertion;

fn main() {
    let batch: Vec<ProblemInstance> = (0..64u64)
        .map(|i| gen_euclidean_tsp(20, &mut rng_from_seed(child_seed(1, i))).unwrap())
        .collect();
    let feats: Vec<Features> = batch.iter().map(instance_features).collect();

    let t = Instant::now();
    let mut rng = rng_from_seed(2);
    for inst in &batch {
        for _ in 0..20 {
            let _ = random_insertion(inst.graph(), None, &mut rng).unwrap();
        }
    }
    println!("insertion pool 64x20 @ n=20: {:?}", t.elapsed());

    let config = GnnConfig {
        layers: 6,
        hidden: 64,
        head_layers: 3,
        ..GnnConfig::tsp_default()
    };
    let mut params = init_params(&config, &mut rng_from_seed(3)).unwrap();
    let mut state = AdamWState::new(&params);

    let items: Vec<(&guided_co::ProblemGraph, &Features)> = batch
        .iter()
        .zip(&feats)
        .map(|(inst, f)| (inst.graph(), f))
        .collect();

    let t = Instant::now();
    let (scores, trace) = forward_batch(&params, &items, NormMode::BatchStats).unwrap();
    println!("forward batch 64: {:?}", t.elapsed());

    let t = Instant::now();
    let mut grads_all = Vec::new();
    let mut rng = rng_from_seed(4);
    for (inst, s) in batch.iter().zip(&scores) {
        let pool = build_pool(inst, Some(s), 10, 10, &mut rng).unwrap();
        grads_all.push(pbge_gradient(&pool, inst.graph().edge_count()).unwrap());
    }
    println!("pools+gradients: {:?}", t.elapsed());

    let t = Instant::now();
    let refs: Vec<&[f64]> = grads_all.iter().map(|g| g.as_slice()).collect();
    let grads = backward(&params, &trace, &refs).unwrap();
    println!("backward batch 64: {:?}", t.elapsed());

    let t = Instant::now();
    sgd_step_adamw(&mut params, &grads, &mut state, 1e-4, 0.01).unwrap();
    println!("adamw step: {:?}", t.elapsed());

    // Full-step estimate at 781 steps/epoch.
    let t = Instant::now();
    let (scores, trace) = forward_batch(&params, &items, NormMode::BatchStats).unwrap();
    let mut grads_all = Vec::new();
    for (inst, s) in batch.iter().zip(&scores) {
        let pool = build_pool(inst, Some(s), 10, 10, &mut rng).unwrap();
        grads_all.push(pbge_gradient(&pool, inst.graph().edge_count()).unwrap());
    }
    let refs: Vec<&[f64]> = grads_all.iter().map(|g| g.as_slice()).collect();
    let grads = backward(&params, &trace, &refs).unwrap();
    sgd_step_adamw(&mut params, &grads, &mut state, 1e-4, 0.01).unwrap();
    let step = t.elapsed();
    println!(
        "one full step: {:?}; epoch (781 steps) approx {:.1} min",
        step,
        step.as_secs_f64() * 781.0 / 60.0
    );
}
