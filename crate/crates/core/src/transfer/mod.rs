//! The three transfer paradigms and the leakage trace each one emits.
//!
//! | paradigm  | training                         | leaked across the boundary |
//! |-----------|----------------------------------|----------------------------|
//! | model     | source pre-training, fine-tuning | final source model         |
//! | mapping   | co-training with an MMD penalty  | alignment-layer features   |
//! | parameter | alternating updates, shared net  | every shared snapshot      |

mod mapping;
mod mmd;
mod parameter;
mod trace;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::{self, BinaryEval};
use crate::nn::{bce_loss, Gradients, Mlp, MlpSpec, Mode};
use crate::optim::{GradientBatch, Optimizer, OptimizerConfig};
use crate::seed;

pub use mapping::{cotrain_mapping, MappingRun};
pub use mmd::{median_bandwidth, mmd, mmd_with_grad, Kernel, KernelChoice};
pub use parameter::{cotrain_parameter, replay_update, ParamRun};
pub use trace::{
    read_feature_trace, read_param_trace, write_feature_trace, write_param_trace, Domain,
    FeatureRecord, FeatureTrace, LeakageTrace, ParamRecord, ParamTrace, ParamTruth,
};

/// Training hyperparameters shared by every paradigm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Weight λ of the MMD alignment term (mapping only).
    #[serde(default = "default_mmd_weight")]
    pub mmd_weight: f64,
    #[serde(default)]
    pub kernel: KernelChoice,
    /// Hidden layer whose output is aligned; `None` means the last one.
    #[serde(default)]
    pub alignment_layer: Option<usize>,
    /// Mapping only: start both networks from one common initialization.
    #[serde(default)]
    pub shared_init: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_mmd_weight() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            mmd_weight: default_mmd_weight(),
            kernel: KernelChoice::default(),
            alignment_layer: None,
            shared_init: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.mmd_weight >= 0.0) {
            return Err(Error::Config(format!("mmd_weight must be >= 0, got {}", self.mmd_weight)));
        }
        self.optimizer.validate()
    }

    pub fn alignment_layer_for(&self, spec: &MlpSpec) -> Result<usize> {
        let n = spec.hidden_dims().len();
        let layer = self.alignment_layer.unwrap_or(n - 1);
        if layer >= n {
            return Err(Error::shape("alignment layer", n, layer));
        }
        Ok(layer)
    }
}

/// Task metrics after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub train_auc: Option<f64>,
    pub test_acc: Option<f64>,
    pub test_auc: Option<f64>,
}

/// Accuracy and AUC of `model` on `data` (AUC is `None` for a single class).
pub fn evaluate(model: &Mlp, data: &LabeledDataset) -> Result<(f64, Option<f64>)> {
    let probs = model.predict(data.features())?;
    let eval = BinaryEval::new(probs, data.labels().to_vec())?;
    Ok((metrics::accuracy(&eval), metrics::auc(&eval).ok()))
}

fn epoch_metrics(
    epoch: usize,
    train_loss: f64,
    model: &Mlp,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
) -> Result<EpochMetrics> {
    let (train_acc, train_auc) = evaluate(model, train)?;
    let (test_acc, test_auc) = match test {
        Some(t) => {
            let (a, u) = evaluate(model, t)?;
            (Some(a), u)
        }
        None => (None, None),
    };
    Ok(EpochMetrics {
        epoch,
        train_loss,
        train_acc,
        train_auc,
        test_acc,
        test_auc,
    })
}

/// A shuffled index order for epoch `epoch` of `stage`.
pub(crate) fn epoch_order(n: usize, seed: u64, stage: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng_for(seed, stage, epoch as u64));
    order
}

/// Seeds for the forward-pass dropout masks and optimizer noise of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSeeds {
    pub dropout: u64,
    pub noise: u64,
}

impl StepSeeds {
    pub(crate) fn new(seed: u64, stage: &str, step: usize) -> Self {
        StepSeeds {
            dropout: seed::derive(seed, &format!("{stage}/dropout"), step as u64),
            noise: seed::derive(seed, &format!("{stage}/noise"), step as u64),
        }
    }
}

/// Loss and gradient information for one batch.
pub(crate) struct BatchGrad {
    pub loss: f64,
    pub mean: Option<Gradients>,
    pub per_example: Option<Vec<Gradients>>,
}

impl BatchGrad {
    pub fn as_batch(&self) -> GradientBatch<'_> {
        match (&self.mean, &self.per_example) {
            (_, Some(per)) => GradientBatch::PerExample(per),
            (Some(mean), None) => GradientBatch::Mean(mean),
            (None, None) => unreachable!("one of mean/per-example is always set"),
        }
    }
}

/// Forward pass and BCE on one batch. Also returns the output of
/// `hidden_layer` so a caller can add a loss on it before finishing the
/// backward pass.
pub(crate) fn batch_gradients(
    model: &Mlp,
    x: ArrayView2<f64>,
    y: &[u8],
    dropout_seed: u64,
    per_example: bool,
    hidden_layer: Option<usize>,
) -> Result<(BatchGradState, ndarray::Array2<f64>)> {
    let acts = model.forward(x, Mode::Train { seed: dropout_seed })?;
    let (loss, d_probs) = bce_loss(acts.probs(), y)?;
    let hidden = match hidden_layer {
        Some(l) => acts
            .hidden(l)
            .cloned()
            .ok_or_else(|| Error::shape("hidden layer", model.spec().hidden_dims().len(), l))?,
        None => ndarray::Array2::zeros((0, 0)),
    };
    Ok((
        BatchGradState {
            acts,
            loss,
            d_probs,
            per_example,
        },
        hidden,
    ))
}

/// Forward state awaiting an optional hidden-layer gradient before backward.
pub(crate) struct BatchGradState {
    acts: crate::nn::Activations,
    loss: f64,
    d_probs: Vec<f64>,
    per_example: bool,
}

impl BatchGradState {
    pub fn finish(
        self,
        model: &Mlp,
        injected: Option<(usize, ArrayView2<f64>)>,
    ) -> Result<BatchGrad> {
        if !self.per_example {
            let g = model.backward_with(&self.acts, &self.d_probs, injected)?;
            return Ok(BatchGrad {
                loss: self.loss,
                mean: Some(g),
                per_example: None,
            });
        }
        // per-example gradient of the i-th term: the batch-mean upstream
        // gradients restricted to row i, rescaled by n
        let n = self.acts.batch_size();
        let scale = n as f64;
        let mut per = Vec::with_capacity(n);
        for i in 0..n {
            let row = self.acts.row(i);
            let d = [self.d_probs[i] * scale];
            let inj_row = injected.map(|(l, g)| (l, g.index_axis(Axis(0), i).to_owned() * scale));
            let inj_view = inj_row
                .as_ref()
                .map(|(l, g)| (*l, g.view().insert_axis(Axis(0))));
            per.push(model.backward_with(&row, &d, inj_view)?);
        }
        Ok(BatchGrad {
            loss: self.loss,
            mean: None,
            per_example: Some(per),
        })
    }
}

/// Plain supervised training of `model` on `train`; `stage` namespaces the
/// randomness so that different training runs draw independent streams.
pub(crate) fn fit(
    model: &mut Mlp,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    stage: &str,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train.dim() != model.spec().input_dim() {
        return Err(Error::shape("training features", model.spec().input_dim(), train.dim()));
    }
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer, model)?;
    let per_example = cfg.optimizer.needs_per_example();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, &format!("{stage}/shuffle"), epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for rows in order.chunks(cfg.batch_size) {
            let x = train.gather(rows);
            let y = train.gather_labels(rows);
            let seeds = StepSeeds::new(cfg.seed, stage, step);
            let (state, _) = batch_gradients(model, x.view(), &y, seeds.dropout, per_example, None)?;
            let grad = state.finish(model, None)?;
            opt.step(model, grad.as_batch(), seeds.noise)?;
            loss_sum += grad.loss;
            batches += 1;
            step += 1;
        }
        history.push(epoch_metrics(epoch + 1, loss_sum / batches as f64, model, train, test)?);
    }
    Ok(history)
}

/// Result of source-domain pre-training.
#[derive(Debug, Clone)]
pub struct SourceRun {
    pub model: Mlp,
    pub trace: LeakageTrace,
    pub history: Vec<EpochMetrics>,
}

/// Supervised training on the source train split. The only thing that
/// leaves the source domain is the final model.
pub fn train_source(
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    spec: &MlpSpec,
    cfg: &TrainConfig,
) -> Result<SourceRun> {
    let mut model = Mlp::init(spec, seed::derive(cfg.seed, "source-init", 0));
    let history = fit(&mut model, train, test, cfg, "source")?;
    Ok(SourceRun {
        trace: LeakageTrace::ModelArtifact(model.clone()),
        model,
        history,
    })
}

/// Continues training `source_model` on the target train split.
pub fn fine_tune(
    source_model: &Mlp,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<EpochMetrics>)> {
    if train.dim() != source_model.spec().input_dim() {
        return Err(Error::shape(
            "fine-tune features",
            source_model.spec().input_dim(),
            train.dim(),
        ));
    }
    let mut model = source_model.clone();
    let history = fit(&mut model, train, test, cfg, "fine-tune")?;
    Ok((model, history))
}

/// Trains a freshly initialized model on `train` (the no-transfer baseline).
pub fn train_from_scratch(
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    stage: &str,
) -> Result<(Mlp, Vec<EpochMetrics>)> {
    let mut model = Mlp::init(spec, seed::derive(cfg.seed, &format!("{stage}-init"), 0));
    let history = fit(&mut model, train, test, cfg, stage)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests;
