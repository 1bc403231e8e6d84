//! Command-line frontend: dataset generation and labeling, training,
//! evaluation and single-instance solving.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for data
//! errors. `GUIDEDCO_THREADS` caps the worker-thread count.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use guided_co::datagen::{
    generate_dataset, label_dataset, read_dataset, write_dataset, write_manifest, DatasetManifest,
    GeneratorSpec, LabelMethod,
};
use guided_co::harness::{
    evaluate, solve, train, Checkpoint, DecoderSpec, EvalOptions, HarnessError, TrainConfig,
};
use guided_co::ProblemInstance;

#[derive(Parser)]
#[command(
    name = "guidedco",
    about = "Learned guidance for Karger-Stein and random-insertion solvers",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a generator spec file.
    Generate {
        /// JSON file: {"spec": <generator spec>, "count": <instances>}.
        #[arg(long)]
        spec: PathBuf,
        /// Output dataset (JSON lines); a .manifest.json sidecar is written
        /// next to it.
        #[arg(long)]
        out: PathBuf,
        /// Override the instance count from the spec file.
        #[arg(long)]
        count: Option<usize>,
    },
    /// (Re)label a dataset in place.
    Label {
        #[arg(long)]
        dataset: PathBuf,
        /// bruteforce | karger100 | heuristic
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint output path (best validation epoch).
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON-lines training log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a decoder over a labeled dataset.
    Eval {
        /// Checkpoint; required by guided/greedy/beam decoders.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// guided-single | guided-best-of-N | unguided | unguided-best-of-N
        /// | greedy | beam-N, each optionally suffixed with +2opt.
        #[arg(long)]
        decoder: String,
        /// Report JSON output path.
        #[arg(long)]
        report: PathBuf,
        /// Independent evaluation repetitions.
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cap R of the runs-until-minimum histogram (0 disables).
        #[arg(long, default_value_t = 0)]
        runs_until_min: usize,
        /// Allow the runs-until-minimum curve against best-known labels.
        #[arg(long, default_value_t = false)]
        allow_best_known_reference: bool,
    },
    /// Solve one instance and print the solution.
    Solve {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// File holding one instance JSON line.
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        decoder: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Contents of the `--spec` file for `generate`.
#[derive(Serialize, Deserialize)]
struct GenerateJob {
    spec: GeneratorSpec,
    count: usize,
}

fn init_threads() {
    if let Ok(v) = std::env::var("GUIDEDCO_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn parse_decoder(s: &str) -> Result<DecoderSpec, HarnessError> {
    s.parse().map_err(HarnessError::Config)
}

fn run() -> Result<(), HarnessError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { spec, out, count } => {
            let text = std::fs::read_to_string(&spec)?;
            let job: GenerateJob = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("bad spec file: {e}")))?;
            let count = count.unwrap_or(job.count);
            let instances = generate_dataset(&job.spec, count)?;
            write_dataset(&out, &instances)?;
            write_manifest(
                &out,
                &DatasetManifest {
                    spec: job.spec.clone(),
                    count,
                    seed: job.spec.seed,
                    label_method: job.spec.label_method().to_string(),
                },
            )?;
            println!("wrote {count} instances to {}", out.display());
            Ok(())
        }
        Command::Label {
            dataset,
            method,
            seed,
        } => {
            let method: LabelMethod = method.parse().map_err(HarnessError::Config)?;
            let mut instances = read_dataset(&dataset)?;
            label_dataset(&mut instances, method, seed)?;
            write_dataset(&dataset, &instances)?;
            println!("labeled {} instances in place", instances.len());
            Ok(())
        }
        Command::Train { config, out, log } => {
            let config = TrainConfig::from_json_file(&config)?;
            let outcome = train(&config, &out, log.as_deref())?;
            println!(
                "best validation gap {:.4}% at epoch {}; checkpoint {}",
                outcome.best_val_gap_pct,
                outcome.best_epoch,
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            ckpt,
            dataset,
            decoder,
            report,
            runs,
            seed,
            runs_until_min,
            allow_best_known_reference,
        } => {
            let decoder = parse_decoder(&decoder)?;
            let ckpt = match ckpt {
                Some(p) => Some(Checkpoint::load(&p)?),
                None => None,
            };
            let instances = read_dataset(&dataset)?;
            let opts = EvalOptions {
                eval_runs: runs,
                seed,
                runs_until_min_cap: runs_until_min,
                allow_best_known_reference,
            };
            let result = evaluate(ckpt.as_ref(), &instances, &decoder, &opts)?;
            result.save(&report)?;
            let row = &result.rows[0];
            if let Some(g) = row.mean_gap_pct_exact {
                println!(
                    "{}: gap {:.4}% ± {:.4}% vs exact labels ({} instances)",
                    row.method,
                    g,
                    row.std_gap_pct_exact.unwrap_or(0.0),
                    row.instances_exact
                );
            }
            if let Some(g) = row.mean_gap_pct_best_known {
                println!(
                    "{}: gap {:.4}% ± {:.4}% vs best-known labels ({} instances)",
                    row.method,
                    g,
                    row.std_gap_pct_best_known.unwrap_or(0.0),
                    row.instances_best_known
                );
            }
            println!("report written to {}", report.display());
            Ok(())
        }
        Command::Solve {
            ckpt,
            instance,
            decoder,
            seed,
        } => {
            let decoder = parse_decoder(&decoder)?;
            let ckpt = match ckpt {
                Some(p) => Some(Checkpoint::load(&p)?),
                None => None,
            };
            let text = std::fs::read_to_string(&instance)?;
            let line = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .ok_or_else(|| HarnessError::Data("instance file is empty".into()))?;
            let inst = ProblemInstance::from_json_line(line)
                .map_err(|e| HarnessError::Data(format!("bad instance: {e}")))?;
            let output = solve(ckpt.as_ref(), &inst, &decoder, seed)?;
            let indicator: String = output
                .selected
                .iter()
                .map(|&b| if b == 1 { '1' } else { '0' })
                .collect();
            println!("solution  {indicator}");
            println!("objective {:.12}", output.objective);
            println!("feasible  {}", output.feasible);
            println!(
                "time      model {:.3} ms, algorithm {:.3} ms",
                output.model_ms, output.algo_ms
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
