use super::trace::{Domain, ParamRecord, ParamTrace, ParamTruth};
use super::{batch_gradients, epoch_order, StepSeeds, TrainConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec, ParamLayers};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::seed;

/// Outcome of parameter-based co-training.
#[derive(Debug, Clone)]
pub struct ParamRun {
    pub model: Mlp,
    pub trace: ParamTrace,
    /// Source/target update pairs per epoch.
    pub pairs_per_epoch: usize,
}

const STAGE: &str = "parameter";

/// Trains one fully shared network by strictly alternating source and
/// target batches. The shared parameters are published after every update.
///
/// `source_marks` flags rows that carry the batch property; when given, each
/// source update's truth record holds the batch label "any member marked".
pub fn cotrain_parameter(
    source: &LabeledDataset,
    target: &LabeledDataset,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    source_marks: Option<&[bool]>,
) -> Result<ParamRun> {
    cfg.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::shape("shared feature dimension", source.dim(), target.dim()));
    }
    if source.dim() != spec.input_dim() {
        return Err(Error::shape("shared model input", spec.input_dim(), source.dim()));
    }
    if let Some(m) = source_marks {
        if m.len() != source.len() {
            return Err(Error::shape("source property marks", source.len(), m.len()));
        }
    }
    let b = cfg.batch_size;
    let pairs = (source.len() / b).min(target.len() / b);
    if pairs == 0 {
        return Err(Error::Data("batch size exceeds a domain size".into()));
    }
    let mut model = Mlp::init(spec, seed::derive(cfg.seed, "parameter-init", 0));
    let mut opt = Optimizer::new(cfg.optimizer, &model)?;
    let per_example = cfg.optimizer.needs_per_example();
    let mut trace = ParamTrace::new(spec.clone(), model.flatten());

    let mut k = 0;
    for epoch in 0..cfg.epochs {
        let s_order = epoch_order(source.len(), cfg.seed, "parameter/source/shuffle", epoch);
        let t_order = epoch_order(target.len(), cfg.seed, "parameter/target/shuffle", epoch);
        for j in 0..pairs {
            for (domain, data, order) in [
                (Domain::Source, source, &s_order),
                (Domain::Target, target, &t_order),
            ] {
                let rows = &order[j * b..(j + 1) * b];
                let seeds = StepSeeds::new(cfg.seed, STAGE, k);
                let x = data.gather(rows);
                let y = data.gather_labels(rows);
                let (state, _) =
                    batch_gradients(&model, x.view(), &y, seeds.dropout, per_example, None)?;
                let grad = state.finish(&model, None)?;
                opt.step(&mut model, grad.as_batch(), seeds.noise)?;
                let batch_label = match (domain, source_marks) {
                    (Domain::Source, Some(m)) => Some(u8::from(rows.iter().any(|&r| m[r]))),
                    _ => None,
                };
                trace.push(
                    ParamRecord {
                        iteration: k,
                        domain,
                        params: model.flatten(),
                    },
                    ParamTruth {
                        batch_rows: rows.to_vec(),
                        dropout_seed: seeds.dropout,
                        noise_seed: seeds.noise,
                        batch_label,
                    },
                )?;
                k += 1;
            }
        }
    }
    Ok(ParamRun {
        model,
        trace,
        pairs_per_epoch: pairs,
    })
}

/// Recomputes record `pos` from the previous snapshot, the recorded batch
/// and seeds. Only stateless optimizers can be replayed from a snapshot.
pub fn replay_update(
    trace: &ParamTrace,
    pos: usize,
    data: &LabeledDataset,
    optimizer: &OptimizerConfig,
) -> Result<Vec<f64>> {
    if matches!(optimizer, OptimizerConfig::Adam(_)) {
        return Err(Error::Config(
            "adam updates depend on moment state and cannot be replayed from a snapshot".into(),
        ));
    }
    if pos >= trace.len() {
        return Err(Error::Data(format!("trace has no record {pos}")));
    }
    let truth = trace.ground_truth(pos);
    let mut model = Mlp::zeros(trace.spec());
    model.set_flat(trace.previous(pos))?;
    let x = data.gather(&truth.batch_rows);
    let y = data.gather_labels(&truth.batch_rows);
    let (state, _) = batch_gradients(
        &model,
        x.view(),
        &y,
        truth.dropout_seed,
        optimizer.needs_per_example(),
        None,
    )?;
    let grad = state.finish(&model, None)?;
    let mut opt = Optimizer::new(*optimizer, &model)?;
    opt.step(&mut model, grad.as_batch(), truth.noise_seed)?;
    Ok(model.flatten())
}
