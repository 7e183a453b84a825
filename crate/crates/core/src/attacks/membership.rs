use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::predictor::{train_attack_model, AttackConfig, AttackPredictor, FeatureDescriptor};
use crate::data::{LabeledDataset, ShadowSplit};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec};
use crate::seed;
use crate::transfer::{self, TrainConfig};

/// Width of the membership feature: `[p, 1 − p, onehot(y)]`.
pub const MEMBERSHIP_WIDTH: usize = 4;

/// Prediction vector of `model` on each row, augmented with the row's class.
pub fn membership_features(model: &Mlp, x: ArrayView2<f64>, y: &[u8]) -> Result<Array2<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::shape("membership labels", x.nrows(), y.len()));
    }
    let probs = model.predict(x)?;
    let mut out = Array2::zeros((y.len(), MEMBERSHIP_WIDTH));
    for (i, (&p, &label)) in probs.iter().zip(y).enumerate() {
        out[[i, 0]] = p;
        out[[i, 1]] = 1.0 - p;
        out[[i, 2 + usize::from(label)]] = 1.0;
    }
    Ok(out)
}

/// Train/test accuracy of one shadow model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowStats {
    pub train_acc: f64,
    pub out_acc: f64,
}

#[derive(Debug, Clone)]
pub struct MembershipTraining {
    pub predictor: AttackPredictor,
    pub shadows: Vec<ShadowStats>,
    /// Size of the pooled (feature, in/out) training set.
    pub pool_size: usize,
}

/// Trains one shadow model per partition (same architecture as the source
/// model), labels its train half 1 and its out half 0 and fits a single
/// attack model on the pooled prediction vectors.
pub fn train_membership_predictor(
    pool: &LabeledDataset,
    shadow: &ShadowSplit,
    spec: &MlpSpec,
    train_cfg: &TrainConfig,
    attack_cfg: &AttackConfig,
) -> Result<MembershipTraining> {
    if shadow.partitions.is_empty() {
        return Err(Error::Data("no shadow partitions".into()));
    }
    let mut blocks = Vec::new();
    let mut labels = Vec::new();
    let mut shadows = Vec::new();
    for (k, part) in shadow.partitions.iter().enumerate() {
        if part.train.is_empty() || part.out.is_empty() {
            return Err(Error::Data(format!("shadow partition {k} is empty")));
        }
        let train = pool.subset(&part.train);
        let out = pool.subset(&part.out);
        let cfg = TrainConfig {
            seed: seed::derive(train_cfg.seed, "shadow", k as u64),
            ..train_cfg.clone()
        };
        let (model, _) = transfer::train_from_scratch(&train, None, spec, &cfg, "shadow")?;
        shadows.push(ShadowStats {
            train_acc: transfer::evaluate(&model, &train)?.0,
            out_acc: transfer::evaluate(&model, &out)?.0,
        });
        for (data, label) in [(&train, 1u8), (&out, 0u8)] {
            blocks.push(membership_features(&model, data.features(), data.labels())?);
            labels.extend(std::iter::repeat_n(label, data.len()));
        }
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let features = ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let predictor = train_attack_model(
        features.view(),
        &labels,
        FeatureDescriptor::PredictionVector(MEMBERSHIP_WIDTH),
        attack_cfg,
    )?;
    Ok(MembershipTraining {
        predictor,
        shadows,
        pool_size: labels.len(),
    })
}

/// P(member) for each sample, from the leaked model's prediction vectors.
pub fn infer_membership(
    pred: &AttackPredictor,
    source_model: &Mlp,
    x: ArrayView2<f64>,
    y: &[u8],
) -> Result<Vec<f64>> {
    if pred.descriptor() != FeatureDescriptor::PredictionVector(MEMBERSHIP_WIDTH) {
        return Err(Error::Config(format!(
            "membership inference needs a prediction-vector predictor, got {:?}",
            pred.descriptor()
        )));
    }
    pred.score(membership_features(source_model, x, y)?.view())
}

/// Balanced evaluation sample: `min(|members|, |non_members|)` rows drawn
/// from each side. Returns the rows and their membership labels.
pub fn membership_eval_set(
    members: &LabeledDataset,
    non_members: &LabeledDataset,
    seed: u64,
) -> Result<(LabeledDataset, Vec<u8>)> {
    let n = members.len().min(non_members.len());
    if n == 0 {
        return Err(Error::Data("membership evaluation needs members and non-members".into()));
    }
    let pick = |len: usize, index: u64| {
        let mut rows: Vec<usize> = (0..len).collect();
        rows.shuffle(&mut seed::rng_for(seed, "membership-eval", index));
        rows.truncate(n);
        rows
    };
    let a = members.subset(&pick(members.len(), 0));
    let b = non_members.subset(&pick(non_members.len(), 1));
    let features = ndarray::concatenate(ndarray::Axis(0), &[a.features(), b.features()])
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let mut labels = a.labels().to_vec();
    labels.extend_from_slice(b.labels());
    let ds = LabeledDataset::new(features, labels, a.columns().to_vec())?;
    let mut membership = vec![1u8; n];
    membership.extend(std::iter::repeat_n(0u8, n));
    Ok((ds, membership))
}
