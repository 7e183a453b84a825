use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Paradigm};
use crate::attacks::{
    self, AttackMeta, AttackMetrics, AttackPredictor, ShadowStats,
};
use crate::data::{self, load_adult_with, DomainPair, LabeledDataset, RawDataset};
use crate::error::{Error, Result, Stage, StageExt};
use crate::metrics::Measure;
use crate::nn::{Mlp, MlpSpec};
use crate::seed;
use crate::transfer::{self, EpochMetrics, TrainConfig};

/// Task-side results. `test_*` refer to the target-domain test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub test_auc: Measure,
    pub test_acc: f64,
    pub source_test_auc: Measure,
    pub source_train_acc: f64,
    pub source_test_acc: f64,
    pub history: Vec<EpochMetrics>,
}

/// Paradigm-specific facts about the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDetails {
    pub trace_records: usize,
    /// First iteration (or record position) the attack was evaluated on.
    pub attack_from: usize,
    /// Source train minus test accuracy (model-based).
    pub train_test_gap: Option<f64>,
    pub shadows: Vec<ShadowStats>,
    /// MMD of the first and last exchanged feature batches (mapping).
    pub mmd_first: Option<f64>,
    pub mmd_last: Option<f64>,
    pub attack_model: AttackMeta,
}

/// One persisted experiment result. Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub fingerprint: String,
    pub name: Option<String>,
    pub paradigm: String,
    pub attack_kind: String,
    pub defense: String,
    pub property: String,
    pub seed: u64,
    pub task: TaskReport,
    pub attack: AttackMetrics,
    pub details: RunDetails,
    pub wall_clock_secs: f64,
    pub version: String,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    /// The report with run-dependent timing zeroed, for bitwise comparison.
    pub fn without_timing(&self) -> ExperimentReport {
        ExperimentReport {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Data(format!("bad report line: {e}")))
    }
}

/// Parsed raw data for a config; reusable across seeds and cells.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<RawDataset> {
    let d = &cfg.dataset;
    load_adult_with(&d.train_path, &d.test_path, d.missing).stage(Stage::Data)
}

/// Runs `cfg.replicates` seeds starting at `cfg.seed`.
pub fn run_replicates(cfg: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    cfg.validate()?;
    let raw = load_dataset(cfg)?;
    (0..cfg.replicates as u64)
        .map(|i| run_experiment_on(&raw, cfg, cfg.seed + i))
        .collect()
}

/// Runs one seed of `cfg`, loading the data from the configured paths.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    run_experiment_on(&load_dataset(cfg)?, cfg, seed)
}

/// Runs one seed of `cfg` on already-loaded data. Deterministic in
/// `(cfg, seed)` except for the wall-clock field.
pub fn run_experiment_on(
    raw: &RawDataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = Instant::now();
    let (task, attack, details) = match cfg.transfer.paradigm {
        Paradigm::Model => run_model_based(raw, cfg, seed)?,
        Paradigm::Mapping => run_mapping(raw, cfg, seed)?,
        Paradigm::Parameter => run_parameter(raw, cfg, seed)?,
    };
    Ok(ExperimentReport {
        fingerprint: cfg.fingerprint(),
        name: cfg.name.clone(),
        paradigm: cfg.transfer.paradigm.name().into(),
        attack_kind: cfg.attack.kind.name().into(),
        defense: cfg.defense.label(),
        property: cfg.group_value("property").unwrap_or_default(),
        seed,
        task,
        attack,
        details,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
    })
}

type Outcome = (TaskReport, AttackMetrics, RunDetails);

fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    let t = &cfg.transfer;
    TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size(),
        optimizer: cfg.defense.optimizer,
        mmd_weight: t.mmd_weight,
        kernel: t.kernel,
        alignment_layer: t.alignment_layer,
        shared_init: t.shared_init,
        seed,
    }
}

fn model_spec(cfg: &ExperimentConfig, input_dim: usize) -> Result<MlpSpec> {
    MlpSpec::new(input_dim, cfg.model.hidden.clone())?.with_dropout(cfg.defense.dropout)
}

fn measure(v: Option<f64>) -> Measure {
    v.map_or(Measure::Undefined, Measure::Value)
}

fn limit_rows(ds: &LabeledDataset, limit: Option<usize>, seed: u64) -> LabeledDataset {
    match limit {
        Some(n) if n < ds.len() => {
            let mut rows: Vec<usize> = (0..ds.len()).collect();
            rows.shuffle(&mut seed::rng_for(seed, "source-limit", 0));
            rows.truncate(n);
            ds.subset(&rows)
        }
        _ => ds.clone(),
    }
}

fn task_report(
    target_model: &Mlp,
    source_model: &Mlp,
    pair: &DomainPair,
    source_train: &LabeledDataset,
    history: Vec<EpochMetrics>,
) -> Result<TaskReport> {
    let (test_acc, test_auc) = transfer::evaluate(target_model, &pair.target.test)?;
    let (source_train_acc, _) = transfer::evaluate(source_model, source_train)?;
    let (source_test_acc, source_test_auc) = transfer::evaluate(source_model, &pair.source.test)?;
    Ok(TaskReport {
        test_auc: measure(test_auc),
        test_acc,
        source_test_auc: measure(source_test_auc),
        source_train_acc,
        source_test_acc,
        history,
    })
}

fn details(trace_records: usize, attack_from: usize, pred: &AttackPredictor) -> RunDetails {
    RunDetails {
        trace_records,
        attack_from,
        train_test_gap: None,
        shadows: Vec::new(),
        mmd_first: None,
        mmd_last: None,
        attack_model: *pred.meta(),
    }
}

/// Source pre-training, target fine-tuning, and the shadow-model
/// membership attack on the released source model. Members are the rows
/// the source model was trained on; the shadow pool is a disjoint draw
/// from the remaining source train rows; non-members come from source test.
fn run_model_based(raw: &RawDataset, cfg: &ExperimentConfig, seed: u64) -> Result<Outcome> {
    let pair = data::split_domains(raw, &[]).stage(Stage::Data)?;
    let src = &pair.source.train;
    let mut order: Vec<usize> = (0..src.len()).collect();
    order.shuffle(&mut seed::rng_for(seed, "membership-members", 0));
    let n_members = cfg.dataset.source_train_limit.unwrap_or(src.len() / 2).min(src.len() - 1);
    let (member_rows, rest) = order.split_at(n_members);
    let pool_size = cfg.attack.shadow_pool_size.unwrap_or(2 * n_members).min(rest.len());
    let members = src.subset(member_rows);
    let shadow_pool = src.subset(&rest[..pool_size]);

    let spec = model_spec(cfg, src.dim()).stage(Stage::Train)?;
    let train_cfg = train_config(cfg, seed);
    let run = transfer::train_source(&members, Some(&pair.source.test), &spec, &train_cfg)
        .stage(Stage::Train)?;
    let fine_cfg = TrainConfig {
        epochs: cfg.transfer.fine_tune_epochs.unwrap_or(cfg.transfer.epochs),
        ..train_cfg.clone()
    };
    let (tuned, _) = transfer::fine_tune(&run.model, &pair.target.train, None, &fine_cfg)
        .stage(Stage::Train)?;
    let task = task_report(&tuned, &run.model, &pair, &members, run.history.clone())
        .stage(Stage::Eval)?;

    let released = match &run.trace {
        transfer::LeakageTrace::ModelArtifact(m) => m,
        _ => unreachable!("source training releases the model"),
    };
    let split = data::shadow_split(&shadow_pool, cfg.attack.n_shadow, seed::derive(seed, "shadow-split", 0))
        .stage(Stage::Attack)?;
    let shadow_cfg = TrainConfig {
        seed: seed::derive(seed, "shadow-train", 0),
        ..train_cfg
    };
    let trained = attacks::train_membership_predictor(
        &shadow_pool,
        &split,
        &spec,
        &shadow_cfg,
        &cfg.attack.attack_config(seed::derive(seed, "attack-model", 0)),
    )
    .stage(Stage::Attack)?;
    let (eval_rows, membership) =
        attacks::membership_eval_set(&members, &pair.source.test, seed::derive(seed, "membership-eval", 0))
            .stage(Stage::Eval)?;
    let scores = attacks::infer_membership(
        &trained.predictor,
        released,
        eval_rows.features(),
        eval_rows.labels(),
    )
    .stage(Stage::Attack)?;
    let metrics = attacks::AttackEvalSet::new(scores, membership)
        .and_then(|e| e.metrics())
        .stage(Stage::Eval)?;
    let mut det = details(1, 0, &trained.predictor);
    det.train_test_gap = Some(task.source_train_acc - task.source_test_acc);
    det.shadows = trained.shadows;
    Ok((task, metrics, det))
}

/// First iteration of the attack epoch.
fn attack_start(cfg: &ExperimentConfig, per_epoch: usize) -> usize {
    (cfg.attack.at_epoch.unwrap_or(cfg.transfer.epochs) - 1) * per_epoch
}

/// MMD co-training, then the property attack: the attacker trains on its
/// own target model's features at the start of the attack epoch and scores
/// every source feature batch received from then on.
fn run_mapping(raw: &RawDataset, cfg: &ExperimentConfig, seed: u64) -> Result<Outcome> {
    let attr = cfg.dataset.property_attr.as_deref().expect("validated");
    let positive = cfg.dataset.positive_value.as_deref().expect("validated");
    let pair = data::split_domains(raw, &[])
        .and_then(|p| p.with_property(attr, positive))
        .stage(Stage::Data)?;
    let source_train = limit_rows(&pair.source.train, cfg.dataset.source_train_limit, seed);
    let spec = model_spec(cfg, source_train.dim()).stage(Stage::Train)?;
    let train_cfg = train_config(cfg, seed);
    let b = train_cfg.batch_size;
    let per_epoch = (source_train.len() / b).min(pair.target.train.len() / b);
    let start = attack_start(cfg, per_epoch);
    let run = transfer::cotrain_mapping(
        &source_train,
        &pair.target.train,
        &spec,
        &spec,
        &train_cfg,
        Some(start),
    )
    .stage(Stage::Train)?;
    let task = task_report(&run.target_model, &run.source_model, &pair, &source_train, Vec::new())
        .stage(Stage::Eval)?;

    let (_, snapshot) = run
        .target_snapshot
        .as_ref()
        .ok_or_else(|| Error::Data(format!("no target snapshot at iteration {start}")))
        .stage(Stage::Attack)?;
    let (with_prop, without_prop) = pair.target.train.split_by_property().stage(Stage::Attack)?;
    let pred = attacks::train_property_predictor(
        snapshot,
        &with_prop,
        &without_prop,
        run.alignment_layer,
        &cfg.attack.attack_config(seed::derive(seed, "attack-model", 0)),
    )
    .stage(Stage::Attack)?;
    let eval = attacks::infer_property(&pred, &run.trace, start).stage(Stage::Attack)?;
    let metrics = eval.metrics().stage(Stage::Eval)?;
    let mut det = details(run.trace.len(), start, &pred);
    det.mmd_first = run.mmd.first().copied();
    det.mmd_last = run.mmd.last().copied();
    Ok((task, metrics, det))
}

/// Alternating shared-network training, then the batch-property attack:
/// the attacker computes auxiliary gradients (target rows with and without
/// the marking value) at the snapshot published just before the attack
/// epoch and scores the source updates recovered from then on. The rule's
/// attribute is removed from the features.
fn run_parameter(raw: &RawDataset, cfg: &ExperimentConfig, seed: u64) -> Result<Outcome> {
    let rule = cfg.dataset.batch_rule.expect("validated");
    let pair = data::split_domains(raw, &[rule.attribute()]).stage(Stage::Data)?;
    // the attribute is gone from the features but still in the raw rows
    let source_train = limit_rows(&pair.source.train, cfg.dataset.source_train_limit, seed);
    let marks = rule.row_marks(&source_train).stage(Stage::Data)?;
    let spec = model_spec(cfg, source_train.dim()).stage(Stage::Train)?;
    let train_cfg = train_config(cfg, seed);
    let b = train_cfg.batch_size;
    let run = transfer::cotrain_parameter(
        &source_train,
        &pair.target.train,
        &spec,
        &train_cfg,
        Some(&marks),
    )
    .stage(Stage::Train)?;
    let task = task_report(&run.model, &run.model, &pair, &source_train, Vec::new())
        .stage(Stage::Eval)?;

    let start = attack_start(cfg, 2 * run.pairs_per_epoch);
    let mut w_k = Mlp::zeros(run.trace.spec());
    w_k.set_flat(run.trace.previous(start)).stage(Stage::Attack)?;
    let target_marks = rule.row_marks(&pair.target.train).stage(Stage::Attack)?;
    let (prop_rows, non_rows): (Vec<usize>, Vec<usize>) =
        (0..target_marks.len()).partition(|&i| target_marks[i]);
    let aux_prop = pair.target.train.subset(&prop_rows);
    let aux_non = pair.target.train.subset(&non_rows);
    let pred = attacks::train_batch_property_predictor(
        &w_k,
        &aux_prop,
        &aux_non,
        cfg.attack.l_prop,
        cfg.attack.l_nonprop,
        b,
        &cfg.attack.attack_config(seed::derive(seed, "attack-model", 0)),
        seed::derive(seed, "bprop-aux", 0),
    )
    .stage(Stage::Attack)?;
    let eval = attacks::infer_batch_property(&pred, &run.trace, cfg.defense.optimizer.lr(), start)
        .stage(Stage::Attack)?;
    let metrics = eval.metrics().stage(Stage::Eval)?;
    Ok((task, metrics, details(run.trace.len(), start, &pred)))
}
