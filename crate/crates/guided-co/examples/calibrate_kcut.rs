//! Scratch calibration for the desk-scale k-cut training run (manual).
use std::time::Instant;

use guided_co::datagen::{generate_dataset, write_dataset, GeneratorKind, GeneratorSpec};
use guided_co::estimators::{EstimatorConfig, EstimatorKind};
use guided_co::gnn::GnnConfig;
use guided_co::harness::{
    evaluate, train, Checkpoint, DecoderSpec, EvalOptions, OptimizerConfig, SchedulerConfig,
    TrainConfig,
};

fn spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        kind: GeneratorKind::NoiGenPlus,
        nodes_min: 20,
        nodes_max: 50,
        k: 3,
        subgraphs: Some(3),
        density: 0.3,
        inter_fraction: 0.05,
        weight_scale_factor: Some(0.5),
        label_runs: 100,
        seed,
    }
}

fn main() {
    let dir = std::path::PathBuf::from("/tmp/calib-kcut");
    std::fs::create_dir_all(&dir).unwrap();
    let t0 = Instant::now();
    let train_path = dir.join("train.jsonl");
    let val_path = dir.join("val.jsonl");
    let test_path = dir.join("test.jsonl");
    if !train_path.exists() {
        write_dataset(&train_path, &generate_dataset(&spec(2101), 2000).unwrap()).unwrap();
        write_dataset(&val_path, &generate_dataset(&spec(2102), 200).unwrap()).unwrap();
        write_dataset(&test_path, &generate_dataset(&spec(2103), 200).unwrap()).unwrap();
    }
    println!("datasets ready at {:.0}s", t0.elapsed().as_secs_f64());

    let test = guided_co::datagen::read_dataset(&test_path).unwrap();
    let opts = EvalOptions {
        eval_runs: 3,
        seed: 31,
        runs_until_min_cap: 10,
        allow_best_known_reference: true,
    };
    let unguided = evaluate(None, &test, &DecoderSpec::Unguided, &opts).unwrap();
    println!(
        "unguided single-run gap: {:.3}% curve {:?} ({:.0}s)",
        unguided.rows[0].mean_gap_pct_best_known.unwrap(),
        unguided.rows[0].runs_until_min.as_ref().unwrap(),
        t0.elapsed().as_secs_f64()
    );

    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(6);
    let config = TrainConfig {
        estimator: EstimatorConfig::new(EstimatorKind::Pbge),
        gnn: GnnConfig {
            layers: 4,
            hidden: 32,
            head_layers: 2,
            ..GnnConfig::kcut_default()
        },
        optimizer: OptimizerConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            scheduler: SchedulerConfig::default(),
        },
        batch_size: 64,
        epochs,
        seed: 4242,
        train_set: train_path,
        val_set: val_path,
    };
    let ckpt_path = dir.join("pbge.ckpt");
    let outcome = train(&config, &ckpt_path, Some(&dir.join("log.jsonl"))).unwrap();
    for e in &outcome.log {
        println!(
            "epoch {:>3}: train metric {:.4}, val gap {:.3}%, lr {:.2e}",
            e.epoch, e.train_metric, e.val_gap_pct, e.lr
        );
    }
    println!("training done at {:.0}s", t0.elapsed().as_secs_f64());

    let ckpt = Checkpoint::load(&ckpt_path).unwrap();
    let guided = evaluate(Some(&ckpt), &test, &DecoderSpec::GuidedSingle, &opts).unwrap();
    println!(
        "guided single-run gap: {:.3}% curve {:?}",
        guided.rows[0].mean_gap_pct_best_known.unwrap(),
        guided.rows[0].runs_until_min.as_ref().unwrap()
    );
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}
