use ndarray::{concatenate, Array2, Axis};

use super::predictor::{train_attack_model, AttackConfig, AttackPredictor, FeatureDescriptor};
use super::AttackEvalSet;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::transfer::{FeatureRecord, FeatureTrace};

/// Trains the property classifier on the attacker's own alignment-layer
/// features: rows of `with_property` are labeled 1, rows of
/// `without_property` 0.
pub fn train_property_predictor(
    target_model: &Mlp,
    with_property: &LabeledDataset,
    without_property: &LabeledDataset,
    layer: usize,
    cfg: &AttackConfig,
) -> Result<AttackPredictor> {
    let hidden = target_model.spec().hidden_dims();
    if layer >= hidden.len() {
        return Err(Error::shape("property attack layer", hidden.len(), layer));
    }
    if with_property.is_empty() || without_property.is_empty() {
        return Err(Error::Data("property attack needs both auxiliary sets".into()));
    }
    let h_prop = target_model.hidden_features(with_property.features(), layer)?;
    let h_non = target_model.hidden_features(without_property.features(), layer)?;
    let x = concatenate(Axis(0), &[h_prop.view(), h_non.view()])
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let mut y = vec![1u8; h_prop.nrows()];
    y.extend(std::iter::repeat_n(0u8, h_non.nrows()));
    train_attack_model(x.view(), &y, FeatureDescriptor::HiddenFeature(hidden[layer]), cfg)
}

/// Scores every source-side feature row of `records`, in order.
pub fn score_feature_records(pred: &AttackPredictor, records: &[FeatureRecord]) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let views: Vec<_> = records.iter().map(|r| r.source_hidden.view()).collect();
    let stacked: Array2<f64> =
        concatenate(Axis(0), &views).map_err(|e| Error::Numeric(e.to_string()))?;
    pred.score(stacked.view())
}

/// Scores the source features received at and after `at_iteration` and
/// joins them with the harness-held property labels.
pub fn infer_property(
    pred: &AttackPredictor,
    trace: &FeatureTrace,
    at_iteration: usize,
) -> Result<AttackEvalSet> {
    let start = trace
        .position(at_iteration)
        .ok_or_else(|| Error::Data(format!("feature trace has no iteration {at_iteration}")))?;
    let scores = score_feature_records(pred, &trace.observed()[start..])?;
    let labels: Vec<u8> = (start..trace.len())
        .flat_map(|pos| trace.ground_truth(pos).iter().copied())
        .collect();
    AttackEvalSet::new(scores, labels)
}
