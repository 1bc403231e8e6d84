//! Training loop, evaluation metrics, persistence and the pieces behind
//! the `guidedco` CLI.
//!
//! Training follows the usual epoch/mini-batch shape: every batch graph is
//! scored by one forward pass over the batch union, the configured
//! estimator turns sampled solutions into a gradient per edge score, the
//! concatenated gradients drive one reverse pass, and AdamW updates the
//! parameters. The learning rate halves when the validation gap (mean gap
//! of a guided single-run decode, the deployment decoder) plateaus.
//!
//! Every random decision derives from the run seed through fixed child
//! streams, so reruns with the same config produce byte-identical
//! checkpoints, logs and reports (timing fields aside).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::DatagenError;
use crate::estimators::{
    bce_loss_and_grad, build_pool, imle_parts, pbge_gradient, reinforce_parts, EstimatorConfig,
    EstimatorError, EstimatorKind, ImleLossMode,
};
use crate::gnn::{
    backward, forward, forward_batch, init_params, instance_features, sgd_step_adamw, AdamWState,
    Features, GnnConfig, GnnError, ModelParams, NormMode,
};
use crate::graph::{ProblemInstance, ProblemKind, Solution};
use crate::param::{guided_sample, EdgeScores, SampleError};
use crate::rng::{child_seed, rng_from_seed};
use crate::tsp::{beam_search_decode, greedy_decode, two_opt, TspError};

/// Relative slack when deciding that a run reproduced the reference
/// objective.
const REFERENCE_MATCH_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Tsp(#[from] TspError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
}

impl HarnessError {
    /// CLI exit code: 2 for configuration problems, 3 for data problems,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) | HarnessError::Io(_) => 3,
            HarnessError::Datagen(inner) => match inner {
                DatagenError::BadSpec(_) | DatagenError::Infeasible(_) => 2,
                _ => 3,
            },
            HarnessError::Json(_) => 3,
            HarnessError::Gnn(GnnError::BadConfig(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchedulerConfig {
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_factor() -> f64 {
    0.5
}
fn default_patience() -> usize {
    4
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            factor: default_factor(),
            patience: default_patience(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
}

fn default_weight_decay() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub estimator: EstimatorConfig,
    pub gnn: GnnConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_set: PathBuf,
    pub val_set: PathBuf,
}

fn default_batch_size() -> usize {
    64
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.batch_size < 1 {
            return Err(HarnessError::Config("batch_size must be >= 1".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(HarnessError::Config("learning rate must be positive".into()));
        }
        if self.epochs < 1 {
            return Err(HarnessError::Config("epochs must be >= 1".into()));
        }
        self.estimator
            .validate()
            .map_err(HarnessError::Config)?;
        self.gnn.validate()?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let config: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("bad config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }
}

fn kind_tag(kind: ProblemKind) -> &'static str {
    match kind {
        ProblemKind::MinKCut { .. } => "kcut",
        ProblemKind::Tsp => "tsp",
    }
}

/// Persisted model: architecture, weights, optimizer state and provenance.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub params: ModelParams,
    pub opt_state: AdamWState,
    pub rng_seed: u64,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct OptStateWire {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointWire {
    config: GnnConfig,
    kind: String,
    params: BTreeMap<String, Vec<f64>>,
    optimizer_state: OptStateWire,
    rng_seed: u64,
    epoch: usize,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let wire = CheckpointWire {
            config: self.params.config.clone(),
            kind: self.kind.clone(),
            params: self.params.named_arrays(),
            optimizer_state: OptStateWire {
                step: self.opt_state.step,
                m: self.opt_state.m.clone(),
                v: self.opt_state.v.clone(),
            },
            rng_seed: self.rng_seed,
            epoch: self.epoch,
        };
        serde_json::to_string(&wire).expect("checkpoint serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(self.to_json().as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let wire: CheckpointWire = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Data(format!("bad checkpoint {}: {e}", path.display())))?;
        let params = ModelParams::from_named_arrays(&wire.config, &wire.params)?;
        let expected = params.trainable_param_count();
        if wire.optimizer_state.m.len() != expected || wire.optimizer_state.v.len() != expected {
            return Err(HarnessError::Data(
                "optimizer state does not match the parameter count".into(),
            ));
        }
        Ok(Self {
            kind: wire.kind,
            params,
            opt_state: AdamWState {
                m: wire.optimizer_state.m,
                v: wire.optimizer_state.v,
                step: wire.optimizer_state.step,
            },
            rng_seed: wire.rng_seed,
            epoch: wire.epoch,
        })
    }

    pub fn check_kind(&self, kind: ProblemKind) -> Result<(), HarnessError> {
        if self.kind != kind_tag(kind) {
            return Err(HarnessError::Data(format!(
                "checkpoint is for {:?} but the instance is {:?}",
                self.kind,
                kind_tag(kind)
            )));
        }
        Ok(())
    }
}

/// How solutions are decoded at evaluation time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecoderSpec {
    GuidedSingle,
    GuidedBestOf(usize),
    Unguided,
    UnguidedBestOf(usize),
    Greedy,
    Beam(usize),
    PlusTwoOpt(Box<DecoderSpec>),
}

impl DecoderSpec {
    pub fn needs_scores(&self) -> bool {
        match self {
            DecoderSpec::GuidedSingle | DecoderSpec::GuidedBestOf(_) => true,
            DecoderSpec::Greedy | DecoderSpec::Beam(_) => true,
            DecoderSpec::Unguided | DecoderSpec::UnguidedBestOf(_) => false,
            DecoderSpec::PlusTwoOpt(inner) => inner.needs_scores(),
        }
    }

    /// The one-repetition variant used for runs-until-minimum curves.
    fn single_run(&self) -> DecoderSpec {
        match self {
            DecoderSpec::GuidedBestOf(_) => DecoderSpec::GuidedSingle,
            DecoderSpec::UnguidedBestOf(_) => DecoderSpec::Unguided,
            DecoderSpec::PlusTwoOpt(inner) => {
                DecoderSpec::PlusTwoOpt(Box::new(inner.single_run()))
            }
            other => other.clone(),
        }
    }
}

impl std::fmt::Display for DecoderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecoderSpec::GuidedSingle => write!(f, "guided-single"),
            DecoderSpec::GuidedBestOf(r) => write!(f, "guided-best-of-{r}"),
            DecoderSpec::Unguided => write!(f, "unguided"),
            DecoderSpec::UnguidedBestOf(r) => write!(f, "unguided-best-of-{r}"),
            DecoderSpec::Greedy => write!(f, "greedy"),
            DecoderSpec::Beam(b) => write!(f, "beam-{b}"),
            DecoderSpec::PlusTwoOpt(inner) => write!(f, "{inner}+2opt"),
        }
    }
}

impl std::str::FromStr for DecoderSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(base) = s.strip_suffix("+2opt") {
            return Ok(DecoderSpec::PlusTwoOpt(Box::new(base.parse()?)));
        }
        if s == "guided-single" {
            return Ok(DecoderSpec::GuidedSingle);
        }
        if s == "unguided" {
            return Ok(DecoderSpec::Unguided);
        }
        if s == "greedy" {
            return Ok(DecoderSpec::Greedy);
        }
        if let Some(r) = s.strip_prefix("guided-best-of-") {
            let r: usize = r.parse().map_err(|_| format!("bad repeat count in {s:?}"))?;
            if r < 1 {
                return Err("repeat count must be >= 1".into());
            }
            return Ok(DecoderSpec::GuidedBestOf(r));
        }
        if let Some(r) = s.strip_prefix("unguided-best-of-") {
            let r: usize = r.parse().map_err(|_| format!("bad repeat count in {s:?}"))?;
            if r < 1 {
                return Err("repeat count must be >= 1".into());
            }
            return Ok(DecoderSpec::UnguidedBestOf(r));
        }
        if let Some(b) = s.strip_prefix("beam-") {
            let b: usize = b.parse().map_err(|_| format!("bad beam width in {s:?}"))?;
            if b < 1 {
                return Err("beam width must be >= 1".into());
            }
            return Ok(DecoderSpec::Beam(b));
        }
        Err(format!(
            "unknown decoder {s:?} (expected guided-single, guided-best-of-N, unguided, \
             unguided-best-of-N, greedy, beam-N, optionally with a +2opt suffix)"
        ))
    }
}

/// Runs a decoder once for the given instance. Repetition `r` of a
/// best-of decoder draws from the child stream `child_seed(seed, r)`, so
/// larger budgets extend smaller ones.
pub fn decode(
    instance: &ProblemInstance,
    scores: Option<&EdgeScores>,
    decoder: &DecoderSpec,
    seed: u64,
) -> Result<Solution, HarnessError> {
    match decoder {
        DecoderSpec::GuidedSingle => {
            let scores =
                scores.ok_or_else(|| HarnessError::Config("decoder needs a model".into()))?;
            Ok(guided_sample(instance, Some(scores), &mut rng_from_seed(seed))?)
        }
        DecoderSpec::Unguided => Ok(guided_sample(instance, None, &mut rng_from_seed(seed))?),
        DecoderSpec::GuidedBestOf(r) | DecoderSpec::UnguidedBestOf(r) => {
            let use_scores = matches!(decoder, DecoderSpec::GuidedBestOf(_));
            if use_scores && scores.is_none() {
                return Err(HarnessError::Config("decoder needs a model".into()));
            }
            let mut best: Option<Solution> = None;
            for i in 0..*r {
                let mut rng = rng_from_seed(child_seed(seed, i as u64));
                let sol = guided_sample(
                    instance,
                    if use_scores { scores } else { None },
                    &mut rng,
                )?;
                if best.as_ref().map_or(true, |b| sol.objective() < b.objective()) {
                    best = Some(sol);
                }
            }
            Ok(best.expect("r >= 1"))
        }
        DecoderSpec::Greedy => {
            let scores =
                scores.ok_or_else(|| HarnessError::Config("decoder needs a model".into()))?;
            if !instance.kind().is_tsp() {
                return Err(HarnessError::Config(
                    "greedy decoding applies to TSP instances only".into(),
                ));
            }
            Ok(greedy_decode(instance.graph(), scores)?)
        }
        DecoderSpec::Beam(b) => {
            let scores =
                scores.ok_or_else(|| HarnessError::Config("decoder needs a model".into()))?;
            if !instance.kind().is_tsp() {
                return Err(HarnessError::Config(
                    "beam decoding applies to TSP instances only".into(),
                ));
            }
            Ok(beam_search_decode(instance.graph(), scores, *b)?)
        }
        DecoderSpec::PlusTwoOpt(inner) => {
            if !instance.kind().is_tsp() {
                return Err(HarnessError::Config(
                    "2-opt improvement applies to TSP instances only".into(),
                ));
            }
            let sol = decode(instance, scores, inner, seed)?;
            Ok(two_opt(instance.graph(), &sol)?)
        }
    }
}

/// Scores an instance with a checkpoint's model (evaluation mode).
pub fn model_scores(
    ckpt: &Checkpoint,
    instance: &ProblemInstance,
) -> Result<EdgeScores, HarnessError> {
    ckpt.check_kind(instance.kind())?;
    let feats = instance_features(instance);
    let (scores, _) = forward(&ckpt.params, instance.graph(), &feats, NormMode::FixedStats)?;
    Ok(scores)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub train_metric: f64,
    pub val_gap_pct: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_val_gap_pct: f64,
    pub best_epoch: usize,
    pub final_val_gap_pct: f64,
    pub log: Vec<TrainLogEntry>,
}

fn dataset_kind(instances: &[ProblemInstance]) -> Result<ProblemKind, HarnessError> {
    let first = instances
        .first()
        .ok_or_else(|| HarnessError::Data("dataset is empty".into()))?
        .kind();
    for inst in instances {
        if kind_tag(inst.kind()) != kind_tag(first) {
            return Err(HarnessError::Data(
                "dataset mixes problem kinds".into(),
            ));
        }
    }
    Ok(first)
}

/// Per-graph estimator step: gradient with respect to the edge scores plus
/// a scalar training metric (estimator-specific; lower is better).
fn estimator_gradient<R: Rng>(
    instance: &ProblemInstance,
    scores: &EdgeScores,
    config: &EstimatorConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, f64), HarnessError> {
    let edge_count = instance.graph().edge_count();
    match config.kind {
        EstimatorKind::Pbge => {
            let pool = build_pool(
                instance,
                Some(scores),
                config.pool_guided,
                config.pool_unguided,
                rng,
            )?;
            let mut grad = pbge_gradient(&pool, edge_count)?;
            if config.mean_normalize {
                let len = pool.solutions.len() as f64;
                for g in &mut grad {
                    *g /= len;
                }
            }
            let metric = pool.best().objective();
            Ok((grad, metric))
        }
        EstimatorKind::Reinforce => {
            Ok(reinforce_parts(instance, scores, config.reinforce_samples, rng)?)
        }
        EstimatorKind::ImleSelfSup => Ok(imle_parts(
            instance,
            scores,
            ImleLossMode::SelfSupervised,
            config,
            rng,
        )?),
        EstimatorKind::ImleSup => {
            let gt = instance
                .ground_truth()
                .ok_or(EstimatorError::MissingLabel)?;
            Ok(imle_parts(
                instance,
                scores,
                ImleLossMode::Supervised(gt.solution.selected()),
                config,
                rng,
            )?)
        }
        EstimatorKind::BceSup => {
            let gt = instance
                .ground_truth()
                .ok_or(EstimatorError::MissingLabel)?;
            let (loss, grad) = bce_loss_and_grad(scores, gt.solution.selected())?;
            Ok((grad, loss))
        }
    }
}

/// Mean validation gap (percent) of a guided single-run decode — the
/// deployment decoder, so the scheduler tracks what inference will use.
fn validation_gap(
    params: &ModelParams,
    val: &[ProblemInstance],
    feats: &[Features],
    seed: u64,
) -> Result<f64, HarnessError> {
    let gaps: Vec<Result<f64, HarnessError>> = val
        .par_iter()
        .zip(feats)
        .enumerate()
        .map(|(idx, (inst, f))| {
            let (scores, _) = forward(params, inst.graph(), f, NormMode::FixedStats)?;
            let sol = guided_sample(
                inst,
                Some(&scores),
                &mut rng_from_seed(child_seed(seed, idx as u64)),
            )?;
            let reference = inst
                .ground_truth()
                .expect("validated above")
                .solution
                .objective();
            Ok(100.0 * (sol.objective() / reference - 1.0))
        })
        .collect();
    let mut total = 0.0;
    for g in gaps {
        total += g?;
    }
    Ok(total / val.len() as f64)
}

/// Trains a model and writes the best-validation checkpoint to `out_path`
/// (and a JSON-lines log to `log_path` if given).
pub fn train(
    config: &TrainConfig,
    out_path: &Path,
    log_path: Option<&Path>,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let train_set = crate::datagen::read_dataset(&config.train_set)?;
    let val_set = crate::datagen::read_dataset(&config.val_set)?;
    let kind = dataset_kind(&train_set)?;
    let val_kind = dataset_kind(&val_set)?;
    if kind_tag(kind) != kind_tag(val_kind) {
        return Err(HarnessError::Data(
            "training and validation sets pose different problems".into(),
        ));
    }
    if config.estimator.kind.requires_labels()
        && train_set.iter().any(|i| i.ground_truth().is_none())
    {
        return Err(HarnessError::Data(
            "the configured estimator needs labels, but the training set has unlabeled instances"
                .into(),
        ));
    }
    if val_set.iter().any(|i| i.ground_truth().is_none()) {
        return Err(HarnessError::Data(
            "validation set must be labeled".into(),
        ));
    }

    let train_feats: Vec<Features> = train_set.iter().map(instance_features).collect();
    let val_feats: Vec<Features> = val_set.iter().map(instance_features).collect();

    let mut params = init_params(&config.gnn, &mut rng_from_seed(child_seed(config.seed, 0)))?;
    let mut opt_state = AdamWState::new(&params);
    let mut lr = config.optimizer.lr;
    let mut best_gap = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut patience_counter = 0usize;
    let mut log = Vec::new();
    let mut log_file = match log_path {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };

    let epoch_root = child_seed(config.seed, 1);
    let val_root = child_seed(config.seed, 2);
    let mut last_gap = f64::INFINITY;

    for epoch in 0..config.epochs {
        let epoch_seed = child_seed(epoch_root, epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_from_seed(child_seed(epoch_seed, 0)));

        let mut metric_sum = 0.0;
        let mut metric_count = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let items: Vec<(&crate::graph::ProblemGraph, &Features)> = batch
                .iter()
                .map(|&i| (train_set[i].graph(), &train_feats[i]))
                .collect();
            let (score_vecs, trace) = forward_batch(&params, &items, NormMode::BatchStats)?;

            let step_seed = child_seed(epoch_seed, 1 + step as u64);
            let results: Vec<Result<(Vec<f64>, f64), HarnessError>> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &inst_idx)| {
                    let mut rng = rng_from_seed(child_seed(step_seed, slot as u64));
                    estimator_gradient(
                        &train_set[inst_idx],
                        &score_vecs[slot],
                        &config.estimator,
                        &mut rng,
                    )
                })
                .collect();
            let mut grad_slices: Vec<Vec<f64>> = Vec::with_capacity(results.len());
            for r in results {
                let (grad, metric) = r?;
                grad_slices.push(grad);
                metric_sum += metric;
                metric_count += 1;
            }
            let grad_refs: Vec<&[f64]> = grad_slices.iter().map(|g| g.as_slice()).collect();
            let grads = backward(&params, &trace, &grad_refs)?;
            if let Some(stats) = trace.batch_stats() {
                params.absorb_batch_stats(stats);
            }
            sgd_step_adamw(&mut params, &grads, &mut opt_state, lr, config.optimizer.weight_decay)?;
        }

        let val_gap = validation_gap(
            &params,
            &val_set,
            &val_feats,
            child_seed(val_root, epoch as u64),
        )?;
        last_gap = val_gap;
        let entry = TrainLogEntry {
            epoch,
            train_metric: metric_sum / metric_count.max(1) as f64,
            val_gap_pct: val_gap,
            lr,
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        }
        log.push(entry);

        if val_gap < best_gap {
            best_gap = val_gap;
            best_epoch = epoch;
            patience_counter = 0;
            Checkpoint {
                kind: kind_tag(kind).to_string(),
                params: params.clone(),
                opt_state: opt_state.clone(),
                rng_seed: config.seed,
                epoch,
            }
            .save(out_path)?;
        } else {
            patience_counter += 1;
            if patience_counter > config.optimizer.scheduler.patience {
                lr *= config.optimizer.scheduler.factor;
                patience_counter = 0;
            }
        }
    }
    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }

    Ok(TrainOutcome {
        best_val_gap_pct: best_gap,
        best_epoch,
        final_val_gap_pct: last_gap,
        log,
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Independent evaluation repetitions for the mean/std aggregation.
    pub eval_runs: usize,
    pub seed: u64,
    /// Cap R of the runs-until-minimum histogram; 0 disables it.
    pub runs_until_min_cap: usize,
    /// Permit runs-until-minimum against best-known (non-exact) labels.
    pub allow_best_known_reference: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            eval_runs: 10,
            seed: 0,
            runs_until_min_cap: 0,
            allow_best_known_reference: false,
        }
    }
}

/// One aggregated evaluation row. Gap statistics against exact labels and
/// best-known labels are reported separately; timing is wall time per
/// instance split into model inference and algorithm time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub instances: usize,
    pub instances_exact: usize,
    pub instances_best_known: usize,
    pub eval_runs: usize,
    pub mean_gap_pct_exact: Option<f64>,
    pub std_gap_pct_exact: Option<f64>,
    pub mean_gap_pct_best_known: Option<f64>,
    pub std_gap_pct_best_known: Option<f64>,
    /// Cumulative counts: entry r-1 holds how many instances reached their
    /// reference within r runs.
    pub runs_until_min: Option<Vec<usize>>,
    pub runs_until_min_reference: Option<String>,
    pub mean_model_ms: f64,
    pub mean_algo_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(self.to_json().as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluates one decoder over a labeled dataset.
pub fn evaluate(
    ckpt: Option<&Checkpoint>,
    dataset: &[ProblemInstance],
    decoder: &DecoderSpec,
    opts: &EvalOptions,
) -> Result<EvalReport, HarnessError> {
    if dataset.is_empty() {
        return Err(HarnessError::Data("dataset is empty".into()));
    }
    if dataset.iter().any(|i| i.ground_truth().is_none()) {
        return Err(HarnessError::Data(
            "evaluation needs a fully labeled dataset".into(),
        ));
    }
    if opts.eval_runs < 1 {
        return Err(HarnessError::Config("eval_runs must be >= 1".into()));
    }
    if decoder.needs_scores() && ckpt.is_none() {
        return Err(HarnessError::Config(format!(
            "decoder {decoder} needs a checkpoint"
        )));
    }

    // Model inference once per instance (the decoder reruns reuse it).
    let mut model_ms_total = 0.0;
    let scores: Vec<Option<EdgeScores>> = if decoder.needs_scores() {
        let ckpt = ckpt.expect("checked above");
        let mut out = Vec::with_capacity(dataset.len());
        for inst in dataset {
            let t0 = Instant::now();
            let s = model_scores(ckpt, inst)?;
            model_ms_total += t0.elapsed().as_secs_f64() * 1e3;
            out.push(Some(s));
        }
        out
    } else {
        vec![None; dataset.len()]
    };

    let exact_mask: Vec<bool> = dataset
        .iter()
        .map(|i| i.ground_truth().expect("checked").exact)
        .collect();

    let mut run_means_exact = Vec::with_capacity(opts.eval_runs);
    let mut run_means_best_known = Vec::with_capacity(opts.eval_runs);
    let mut algo_ms_total = 0.0;
    for run in 0..opts.eval_runs {
        let run_seed = child_seed(opts.seed, run as u64);
        let results: Vec<Result<(f64, f64), HarnessError>> = dataset
            .par_iter()
            .enumerate()
            .map(|(idx, inst)| {
                let t0 = Instant::now();
                let sol = decode(
                    inst,
                    scores[idx].as_ref(),
                    decoder,
                    child_seed(run_seed, idx as u64),
                )?;
                let elapsed = t0.elapsed().as_secs_f64() * 1e3;
                let reference = inst.ground_truth().expect("checked").solution.objective();
                Ok((100.0 * (sol.objective() / reference - 1.0), elapsed))
            })
            .collect();
        let mut exact_gaps = Vec::new();
        let mut bk_gaps = Vec::new();
        for (idx, r) in results.into_iter().enumerate() {
            let (gap, ms) = r?;
            algo_ms_total += ms;
            if exact_mask[idx] {
                exact_gaps.push(gap);
            } else {
                bk_gaps.push(gap);
            }
        }
        if !exact_gaps.is_empty() {
            run_means_exact.push(exact_gaps.iter().sum::<f64>() / exact_gaps.len() as f64);
        }
        if !bk_gaps.is_empty() {
            run_means_best_known.push(bk_gaps.iter().sum::<f64>() / bk_gaps.len() as f64);
        }
    }

    // Runs-until-minimum: repeated single-run decodes with nested seeds.
    let rum_cap = opts.runs_until_min_cap;
    let mut runs_until_min = None;
    let mut runs_until_min_reference = None;
    if rum_cap > 0 {
        let eligible: Vec<usize> = (0..dataset.len())
            .filter(|&i| exact_mask[i] || opts.allow_best_known_reference)
            .collect();
        if !eligible.is_empty() {
            let single = decoder.single_run();
            let rum_root = child_seed(opts.seed, u64::MAX);
            let first_hits: Vec<Result<Option<usize>, HarnessError>> = eligible
                .par_iter()
                .map(|&idx| {
                    let inst = &dataset[idx];
                    let reference =
                        inst.ground_truth().expect("checked").solution.objective();
                    let inst_root = child_seed(rum_root, idx as u64);
                    let mut best = f64::INFINITY;
                    for r in 0..rum_cap {
                        let sol = decode(
                            inst,
                            scores[idx].as_ref(),
                            &single,
                            child_seed(inst_root, r as u64),
                        )?;
                        best = best.min(sol.objective());
                        if best <= reference * (1.0 + REFERENCE_MATCH_RTOL) {
                            return Ok(Some(r + 1));
                        }
                    }
                    Ok(None)
                })
                .collect();
            let mut curve = vec![0usize; rum_cap];
            for hit in first_hits {
                if let Some(r) = hit? {
                    for slot in &mut curve[r - 1..] {
                        *slot += 1;
                    }
                }
            }
            runs_until_min = Some(curve);
            runs_until_min_reference = Some(
                if eligible.iter().all(|&i| exact_mask[i]) {
                    "exact".to_string()
                } else {
                    "mixed-best-known".to_string()
                },
            );
        }
    }

    let (mean_exact, std_exact) = if run_means_exact.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&run_means_exact);
        (Some(m), Some(s))
    };
    let (mean_bk, std_bk) = if run_means_best_known.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&run_means_best_known);
        (Some(m), Some(s))
    };

    let n = dataset.len();
    let row = EvalRow {
        method: decoder.to_string(),
        instances: n,
        instances_exact: exact_mask.iter().filter(|&&e| e).count(),
        instances_best_known: exact_mask.iter().filter(|&&e| !e).count(),
        eval_runs: opts.eval_runs,
        mean_gap_pct_exact: mean_exact,
        std_gap_pct_exact: std_exact,
        mean_gap_pct_best_known: mean_bk,
        std_gap_pct_best_known: std_bk,
        runs_until_min,
        runs_until_min_reference,
        mean_model_ms: model_ms_total / n as f64,
        mean_algo_ms: algo_ms_total / (n * opts.eval_runs) as f64,
    };
    Ok(EvalReport { rows: vec![row] })
}

// ---------------------------------------------------------------------------
// Solve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SolveOutput {
    pub selected: Vec<u8>,
    pub objective: f64,
    pub feasible: bool,
    pub model_ms: f64,
    pub algo_ms: f64,
}

/// Decodes a single instance and reports the solution with timing split
/// into model inference and algorithm time.
pub fn solve(
    ckpt: Option<&Checkpoint>,
    instance: &ProblemInstance,
    decoder: &DecoderSpec,
    seed: u64,
) -> Result<SolveOutput, HarnessError> {
    let mut model_ms = 0.0;
    let scores = if decoder.needs_scores() {
        let ckpt = ckpt.ok_or_else(|| {
            HarnessError::Config(format!("decoder {decoder} needs a checkpoint"))
        })?;
        let t0 = Instant::now();
        let s = model_scores(ckpt, instance)?;
        model_ms = t0.elapsed().as_secs_f64() * 1e3;
        Some(s)
    } else {
        None
    };
    let t0 = Instant::now();
    let solution = decode(instance, scores.as_ref(), decoder, seed)?;
    let algo_ms = t0.elapsed().as_secs_f64() * 1e3;
    let feasible = match instance.kind() {
        ProblemKind::MinKCut { k } => {
            crate::graph::validate_kcut(instance.graph(), solution.selected(), k)
        }
        ProblemKind::Tsp => crate::graph::validate_tour(instance.graph(), solution.selected()),
    };
    Ok(SolveOutput {
        selected: solution.selected().iter().map(|&b| u8::from(b)).collect(),
        objective: solution.objective(),
        feasible,
        model_ms,
        algo_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, write_dataset, GeneratorKind, GeneratorSpec};

    fn tiny_spec(seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            kind: GeneratorKind::UnweightedCliques,
            nodes_min: 6,
            nodes_max: 8,
            k: 2,
            subgraphs: None,
            density: 0.3,
            inter_fraction: 0.05,
            weight_scale_factor: None,
            label_runs: 50,
            seed,
        }
    }

    fn tiny_config(dir: &Path, epochs: usize) -> TrainConfig {
        let train = generate_dataset(&tiny_spec(1), 8).unwrap();
        let val = generate_dataset(&tiny_spec(2), 4).unwrap();
        let train_path = dir.join("train.jsonl");
        let val_path = dir.join("val.jsonl");
        write_dataset(&train_path, &train).unwrap();
        write_dataset(&val_path, &val).unwrap();
        TrainConfig {
            estimator: EstimatorConfig::new(EstimatorKind::Pbge),
            gnn: GnnConfig {
                layers: 2,
                hidden: 8,
                head_layers: 2,
                ..GnnConfig::kcut_default()
            },
            optimizer: OptimizerConfig {
                lr: 1e-3,
                weight_decay: 0.01,
                scheduler: SchedulerConfig::default(),
            },
            batch_size: 4,
            epochs,
            seed: 7,
            train_set: train_path,
            val_set: val_path,
        }
    }

    #[test]
    fn decoder_strings_round_trip() {
        for s in [
            "guided-single",
            "guided-best-of-3",
            "unguided",
            "unguided-best-of-50",
            "greedy",
            "beam-5",
            "greedy+2opt",
            "unguided-best-of-20+2opt",
        ] {
            let spec: DecoderSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("beam-0".parse::<DecoderSpec>().is_err());
        assert!("nonsense".parse::<DecoderSpec>().is_err());
    }

    #[test]
    fn train_checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path(), 1);
        let ckpt_path = dir.path().join("model.ckpt");
        let outcome = train(&config, &ckpt_path, None).unwrap();
        assert!(outcome.best_val_gap_pct.is_finite());
        let loaded = Checkpoint::load(&ckpt_path).unwrap();
        loaded.save(&dir.path().join("model2.ckpt")).unwrap();
        let a = std::fs::read(&ckpt_path).unwrap();
        let b = std::fs::read(dir.path().join("model2.ckpt")).unwrap();
        assert_eq!(a, b, "checkpoint reload must be byte-identical");
    }

    #[test]
    fn training_is_deterministic_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path(), 2);
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        train(&config, &p1, None).unwrap();
        train(&config, &p2, None).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap(),
            "same config and seed must give identical checkpoints"
        );
    }

    #[test]
    fn label_requiring_estimator_fails_fast_on_unlabeled_data() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path(), 1);
        config.estimator = EstimatorConfig::new(EstimatorKind::BceSup);
        // Strip the labels from the training set.
        let mut train_set = crate::datagen::read_dataset(&config.train_set).unwrap();
        for inst in &mut train_set {
            inst.set_ground_truth(None).unwrap();
        }
        write_dataset(&config.train_set, &train_set).unwrap();
        let err = train(&config, &dir.path().join("x.ckpt"), None).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn evaluate_reports_nested_best_of_dominance() {
        let dataset = generate_dataset(&tiny_spec(5), 10).unwrap();
        let opts = EvalOptions {
            eval_runs: 2,
            seed: 11,
            ..EvalOptions::default()
        };
        let single = evaluate(None, &dataset, &DecoderSpec::Unguided, &opts).unwrap();
        let best3 = evaluate(None, &dataset, &DecoderSpec::UnguidedBestOf(3), &opts).unwrap();
        let g1 = single.rows[0].mean_gap_pct_exact.unwrap();
        let g3 = best3.rows[0].mean_gap_pct_exact.unwrap();
        assert!(g3 <= g1 + 1e-12, "best-of-3 ({g3}) must not trail single ({g1})");
        assert!(g1 >= 0.0, "gaps against exact labels are non-negative");
    }

    #[test]
    fn evaluate_runs_until_min_curve_is_monotone() {
        let dataset = generate_dataset(&tiny_spec(6), 8).unwrap();
        let opts = EvalOptions {
            eval_runs: 1,
            seed: 3,
            runs_until_min_cap: 6,
            allow_best_known_reference: false,
        };
        let report = evaluate(None, &dataset, &DecoderSpec::Unguided, &opts).unwrap();
        let curve = report.rows[0].runs_until_min.clone().unwrap();
        assert_eq!(curve.len(), 6);
        for w in curve.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(*curve.last().unwrap() <= dataset.len());
        assert_eq!(report.rows[0].runs_until_min_reference.as_deref(), Some("exact"));
    }

    #[test]
    fn evaluate_requires_labels_and_checkpoints() {
        let mut dataset = generate_dataset(&tiny_spec(7), 3).unwrap();
        let opts = EvalOptions::default();
        assert!(matches!(
            evaluate(None, &dataset, &DecoderSpec::GuidedSingle, &opts),
            Err(HarnessError::Config(_))
        ));
        dataset[0].set_ground_truth(None).unwrap();
        assert!(matches!(
            evaluate(None, &dataset, &DecoderSpec::Unguided, &opts),
            Err(HarnessError::Data(_))
        ));
    }

    #[test]
    fn solve_is_deterministic_and_feasible() {
        let dataset = generate_dataset(&tiny_spec(8), 1).unwrap();
        let a = solve(None, &dataset[0], &DecoderSpec::UnguidedBestOf(5), 42).unwrap();
        let b = solve(None, &dataset[0], &DecoderSpec::UnguidedBestOf(5), 42).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.objective, b.objective);
        assert!(a.feasible);

        let b100 = solve(None, &dataset[0], &DecoderSpec::UnguidedBestOf(100), 42).unwrap();
        let b20 = solve(None, &dataset[0], &DecoderSpec::UnguidedBestOf(20), 42).unwrap();
        assert!(b100.objective <= b20.objective);
    }
}
