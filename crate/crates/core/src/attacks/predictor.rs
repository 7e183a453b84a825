use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, BinaryEval};
use crate::nn::{fmt_f64, parse_floats, read_mlp, write_mlp, Mlp, MlpSpec, Mode, ParamLayers};
use crate::optim::{AdamHyper, AdamState};
use crate::seed;

/// What an attack model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "width", rename_all = "kebab-case")]
pub enum FeatureDescriptor {
    /// Output probability vector plus the sample's class one-hot.
    PredictionVector(usize),
    HiddenFeature(usize),
    FlattenedGradient(usize),
}

impl FeatureDescriptor {
    pub fn width(self) -> usize {
        match self {
            FeatureDescriptor::PredictionVector(w)
            | FeatureDescriptor::HiddenFeature(w)
            | FeatureDescriptor::FlattenedGradient(w) => w,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            FeatureDescriptor::PredictionVector(_) => "prediction-vector",
            FeatureDescriptor::HiddenFeature(_) => "hidden-feature",
            FeatureDescriptor::FlattenedGradient(_) => "flattened-gradient",
        }
    }
}

/// How attack classifiers are trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_val")]
    pub val_fraction: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    0.001
}
fn default_max_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    64
}
fn default_val() -> f64 {
    0.2
}
fn default_patience() -> usize {
    10
}

impl AttackConfig {
    pub fn with_hidden(hidden: impl Into<Vec<usize>>) -> Self {
        AttackConfig {
            hidden: hidden.into(),
            lr: default_lr(),
            max_epochs: default_max_epochs(),
            batch_size: default_batch(),
            val_fraction: default_val(),
            patience: default_patience(),
            seed: 0,
        }
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(format!("invalid attack training config {self:?}")));
        }
        Ok(())
    }
}

/// Per-column affine standardization fitted on the attack training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Standardizer {
        let mean = x.mean_axis(Axis(0)).expect("non-empty training set");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Standardizer { mean, std }
    }

    pub fn identity(width: usize) -> Standardizer {
        Standardizer {
            mean: Array1::zeros(width),
            std: Array1::ones(width),
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean.view().insert_axis(Axis(0))) / self.std.view().insert_axis(Axis(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub val_auc: Option<f64>,
    pub seed: u64,
}

/// A trained binary attack classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackPredictor {
    model: Mlp,
    descriptor: FeatureDescriptor,
    standardizer: Standardizer,
    meta: AttackMeta,
}

impl AttackPredictor {
    pub fn from_parts(
        model: Mlp,
        descriptor: FeatureDescriptor,
        standardizer: Standardizer,
        meta: AttackMeta,
    ) -> Result<Self> {
        let w = descriptor.width();
        if model.spec().input_dim() != w || standardizer.mean.len() != w || standardizer.std.len() != w {
            return Err(Error::shape("attack predictor width", w, model.spec().input_dim()));
        }
        Ok(AttackPredictor {
            model,
            descriptor,
            standardizer,
            meta,
        })
    }

    pub fn descriptor(&self) -> FeatureDescriptor {
        self.descriptor
    }

    pub fn meta(&self) -> &AttackMeta {
        &self.meta
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    /// P(property / member | features) for every row.
    pub fn score(&self, features: ArrayView2<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.descriptor.width() {
            return Err(Error::shape(
                "attack features",
                self.descriptor.width(),
                features.ncols(),
            ));
        }
        self.model.predict(self.standardizer.apply(features).view())
    }
}

/// Trains an attack MLP with Adam, holding out `val_fraction` for early
/// stopping on validation AUC (validation loss when AUC is undefined). The
/// best validation epoch's weights are kept.
pub fn train_attack_model(
    x: ArrayView2<f64>,
    y: &[u8],
    descriptor: FeatureDescriptor,
    cfg: &AttackConfig,
) -> Result<AttackPredictor> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::shape("attack training labels", x.nrows(), y.len()));
    }
    if x.ncols() != descriptor.width() {
        return Err(Error::shape("attack training features", descriptor.width(), x.ncols()));
    }
    if x.nrows() < 2 {
        return Err(Error::Data("attack training set needs at least two examples".into()));
    }
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.shuffle(&mut seed::rng_for(cfg.seed, "attack-split", 0));
    let n_val = ((x.nrows() as f64) * cfg.val_fraction).round() as usize;
    let n_val = n_val.min(x.nrows() - 1);
    let (val_rows, train_rows) = order.split_at(n_val);

    let raw_train = x.select(Axis(0), train_rows);
    let standardizer = Standardizer::fit(raw_train.view());
    let x_train = standardizer.apply(raw_train.view());
    let y_train: Vec<u8> = train_rows.iter().map(|&i| y[i]).collect();
    let x_val = standardizer.apply(x.select(Axis(0), val_rows).view());
    let y_val: Vec<u8> = val_rows.iter().map(|&i| y[i]).collect();

    let spec = MlpSpec::new(descriptor.width(), cfg.hidden.clone())?;
    let mut model = Mlp::init(&spec, seed::derive(cfg.seed, "attack-init", 0));
    let mut adam = AdamState::new(&model, AdamHyper { lr: cfg.lr, ..AdamHyper::default() });

    // higher is better: AUC, or negative loss when AUC is undefined
    let val_score = |m: &Mlp| -> Result<Option<(f64, f64, Option<f64>)>> {
        if y_val.is_empty() {
            return Ok(None);
        }
        let probs = m.predict(x_val.view())?;
        let eval = BinaryEval::new(probs.clone(), y_val.clone())?;
        let acc = metrics::accuracy(&eval);
        Ok(Some(match metrics::auc(&eval) {
            Ok(a) => (a, acc, Some(a)),
            Err(_) => (-crate::nn::bce_loss(&probs, &y_val)?.0, acc, None),
        }))
    };

    let mut best = (f64::NEG_INFINITY, model.clone(), 0, None, None);
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let mut rows: Vec<usize> = (0..x_train.nrows()).collect();
        rows.shuffle(&mut seed::rng_for(cfg.seed, "attack-shuffle", epoch as u64));
        for chunk in rows.chunks(cfg.batch_size) {
            let xb = x_train.select(Axis(0), chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| y_train[i]).collect();
            let (_, g) = model.loss_and_grad(xb.view(), &yb, Mode::Eval)?;
            adam.step(&mut model, &g)?;
        }
        if !model.all_finite() {
            return Err(Error::Numeric("attack model diverged".into()));
        }
        match val_score(&model)? {
            None => {
                best = (0.0, model.clone(), epochs_run, None, None);
            }
            Some((score, acc, auc)) => {
                if score > best.0 {
                    best = (score, model.clone(), epochs_run, Some(acc), auc);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        break;
                    }
                }
            }
        }
    }
    let (_, model, best_epoch, val_accuracy, val_auc) = best;
    let train_probs = model.predict(x_train.view())?;
    let train_accuracy = metrics::accuracy(&BinaryEval::new(train_probs, y_train)?);
    AttackPredictor::from_parts(
        model,
        descriptor,
        standardizer,
        AttackMeta {
            epochs_run,
            best_epoch,
            train_accuracy,
            val_accuracy,
            val_auc,
            seed: cfg.seed,
        },
    )
}

/// Descriptor header, standardizer rows, then the network in the model format.
pub fn write_predictor(pred: &AttackPredictor, mut out: impl Write) -> Result<()> {
    writeln!(out, "predictor v1")?;
    writeln!(out, "descriptor {} {}", pred.descriptor.tag(), pred.descriptor.width())?;
    let join = |v: &Array1<f64>| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ");
    writeln!(out, "mean {}", join(&pred.standardizer.mean))?;
    writeln!(out, "std {}", join(&pred.standardizer.std))?;
    write_mlp(&pred.model, out)
}

pub fn read_predictor(mut input: impl BufRead) -> Result<AttackPredictor> {
    let bad = |line: usize, m: &str| Error::Parse {
        path: "<predictor>".into(),
        line,
        message: m.to_string(),
    };
    let mut header = Vec::new();
    for _ in 0..4 {
        let mut line = String::new();
        input.read_line(&mut line)?;
        header.push(line.trim_end().to_string());
    }
    if header[0] != "predictor v1" {
        return Err(bad(1, "missing `predictor v1` header"));
    }
    let desc: Vec<&str> = header[1].split_ascii_whitespace().collect();
    let width: usize = desc
        .get(2)
        .and_then(|w| w.parse().ok())
        .ok_or_else(|| bad(2, "bad descriptor"))?;
    let descriptor = match desc.get(1).copied() {
        Some("prediction-vector") => FeatureDescriptor::PredictionVector(width),
        Some("hidden-feature") => FeatureDescriptor::HiddenFeature(width),
        Some("flattened-gradient") => FeatureDescriptor::FlattenedGradient(width),
        _ => return Err(bad(2, "unknown descriptor")),
    };
    let row = |i: usize, key: &str| -> Result<Array1<f64>> {
        let rest = header[i]
            .strip_prefix(key)
            .ok_or_else(|| bad(i + 1, "malformed standardizer row"))?;
        Ok(Array1::from(parse_floats(rest).map_err(|m| bad(i + 1, &m))?))
    };
    let standardizer = Standardizer {
        mean: row(2, "mean")?,
        std: row(3, "std")?,
    };
    let model = read_mlp(input)?;
    AttackPredictor::from_parts(
        model,
        descriptor,
        standardizer,
        AttackMeta {
            epochs_run: 0,
            best_epoch: 0,
            train_accuracy: f64::NAN,
            val_accuracy: None,
            val_auc: None,
            seed: 0,
        },
    )
}
