use ndarray::Array2;
use rand::seq::index;

use super::predictor::{train_attack_model, AttackConfig, AttackPredictor, FeatureDescriptor};
use super::AttackEvalSet;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Mlp, Mode, ParamLayers};
use crate::seed;
use crate::transfer::{Domain, ParamTrace};

/// Flattened mean-loss gradient of `model` on one batch (no dropout).
pub fn batch_gradient(model: &Mlp, data: &LabeledDataset, rows: &[usize]) -> Result<Vec<f64>> {
    let x = data.gather(rows);
    let y = data.gather_labels(rows);
    let (_, g) = model.loss_and_grad(x.view(), &y, Mode::Eval)?;
    Ok(g.flatten())
}

/// `(w_prev − w_cur) / lr`: the update an SGD step would have applied.
pub fn online_gradient(prev: &[f64], cur: &[f64], lr: f64) -> Result<Vec<f64>> {
    if prev.len() != cur.len() {
        return Err(Error::shape("online gradient", prev.len(), cur.len()));
    }
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    Ok(prev.iter().zip(cur).map(|(a, b)| (a - b) / lr).collect())
}

/// Draws `l_prop` batches from `aux_prop` and `l_nonprop` from `aux_nonprop`
/// (each `b` distinct rows), computes their gradients at `model` and trains
/// the batch-property classifier on them.
#[allow(clippy::too_many_arguments)]
pub fn train_batch_property_predictor(
    model: &Mlp,
    aux_prop: &LabeledDataset,
    aux_nonprop: &LabeledDataset,
    l_prop: usize,
    l_nonprop: usize,
    b: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackPredictor> {
    if b == 0 || l_prop == 0 || l_nonprop == 0 {
        return Err(Error::Config("batch size and sample counts must be at least 1".into()));
    }
    for (name, set) in [("property", aux_prop), ("non-property", aux_nonprop)] {
        if set.len() < b {
            return Err(Error::Data(format!(
                "{name} auxiliary set has {} rows, fewer than the batch size {b}",
                set.len()
            )));
        }
    }
    let width = model.param_count();
    let mut x = Array2::zeros((l_prop + l_nonprop, width));
    let mut y = Vec::with_capacity(l_prop + l_nonprop);
    let plan = [(aux_prop, l_prop, 1u8, "bprop-aux-prop"), (aux_nonprop, l_nonprop, 0u8, "bprop-aux-nonprop")];
    let mut row = 0;
    for (set, count, label, stage) in plan {
        let mut rng = seed::rng_for(seed, stage, 0);
        for _ in 0..count {
            let rows = index::sample(&mut rng, set.len(), b).into_vec();
            let g = batch_gradient(model, set, &rows)?;
            x.row_mut(row).assign(&ndarray::ArrayView1::from(&g));
            y.push(label);
            row += 1;
        }
    }
    train_attack_model(x.view(), &y, FeatureDescriptor::FlattenedGradient(width), cfg)
}

/// `(position, score)` for every source-tagged record at or after `from`,
/// computed from consecutive published snapshots only (the first update is
/// measured against the shared initialization).
pub fn score_online_gradients(
    pred: &AttackPredictor,
    trace: &ParamTrace,
    lr: f64,
    from: usize,
) -> Result<Vec<(usize, f64)>> {
    if trace.len() < 2 {
        return Err(Error::Data("batch property inference needs at least two snapshots".into()));
    }
    let observed = trace.observed();
    let positions: Vec<usize> = (from..observed.len())
        .filter(|&pos| observed[pos].domain == Domain::Source)
        .collect();
    if positions.is_empty() {
        return Ok(Vec::new());
    }
    let width = trace.initial().len();
    let mut x = Array2::zeros((positions.len(), width));
    for (i, &pos) in positions.iter().enumerate() {
        let g = online_gradient(trace.previous(pos), &observed[pos].params, lr)?;
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&g));
    }
    let scores = pred.score(x.view())?;
    Ok(positions.into_iter().zip(scores).collect())
}

/// Scores the source updates at and after record `from` and joins them with
/// the harness-held batch labels.
pub fn infer_batch_property(
    pred: &AttackPredictor,
    trace: &ParamTrace,
    lr: f64,
    from: usize,
) -> Result<AttackEvalSet> {
    let scored = score_online_gradients(pred, trace, lr, from)?;
    let mut scores = Vec::with_capacity(scored.len());
    let mut labels = Vec::with_capacity(scored.len());
    for (pos, s) in scored {
        let label = trace.ground_truth(pos).batch_label.ok_or_else(|| {
            Error::Data(format!("source record {pos} carries no batch label"))
        })?;
        scores.push(s);
        labels.push(label);
    }
    AttackEvalSet::new(scores, labels)
}
