use super::trace::{FeatureRecord, FeatureTrace};
use super::{batch_gradients, epoch_order, mmd_with_grad, StepSeeds, TrainConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec};
use crate::optim::Optimizer;
use crate::seed;

/// Outcome of mapping-based co-training.
#[derive(Debug, Clone)]
pub struct MappingRun {
    pub source_model: Mlp,
    pub target_model: Mlp,
    pub trace: FeatureTrace,
    /// The target model as it stood at the start of the requested iteration.
    pub target_snapshot: Option<(usize, Mlp)>,
    pub iterations_per_epoch: usize,
    /// MMD between the exchanged feature batches, per iteration.
    pub mmd: Vec<f64>,
    pub alignment_layer: usize,
}

/// Jointly trains a source and a target network. Each iteration takes one
/// batch per domain and minimizes
/// `task_loss_src + task_loss_tgt + λ·MMD(h_src, h_tgt)` at the alignment
/// layer, updating both networks. The exchanged feature batches are the
/// trace; an epoch is one pass over the smaller domain.
pub fn cotrain_mapping(
    source: &LabeledDataset,
    target: &LabeledDataset,
    source_spec: &MlpSpec,
    target_spec: &MlpSpec,
    cfg: &TrainConfig,
    snapshot_at: Option<usize>,
) -> Result<MappingRun> {
    cfg.validate()?;
    let layer = cfg.alignment_layer_for(source_spec)?;
    let target_layer = cfg.alignment_layer_for(target_spec)?;
    let width = source_spec.hidden_dims()[layer];
    if target_layer != layer || target_spec.hidden_dims()[layer] != width {
        return Err(Error::shape(
            "alignment layer width",
            width,
            target_spec.hidden_dims()[target_layer],
        ));
    }
    if source.dim() != source_spec.input_dim() {
        return Err(Error::shape("source features", source_spec.input_dim(), source.dim()));
    }
    if target.dim() != target_spec.input_dim() {
        return Err(Error::shape("target features", target_spec.input_dim(), target.dim()));
    }
    let b = cfg.batch_size;
    let per_epoch = (source.len() / b).min(target.len() / b);
    if per_epoch == 0 {
        return Err(Error::Data(format!(
            "batch size {b} exceeds a domain size ({} / {})",
            source.len(),
            target.len()
        )));
    }

    let mut src = Mlp::init(source_spec, seed::derive(cfg.seed, "mapping-source-init", 0));
    let target_init = if cfg.shared_init && source_spec == target_spec {
        seed::derive(cfg.seed, "mapping-source-init", 0)
    } else {
        seed::derive(cfg.seed, "mapping-target-init", 0)
    };
    let mut tgt = Mlp::init(target_spec, target_init);
    let mut opt_s = Optimizer::new(cfg.optimizer, &src)?;
    let mut opt_t = Optimizer::new(cfg.optimizer, &tgt)?;
    let per_example = cfg.optimizer.needs_per_example();
    let mut trace = FeatureTrace::new(width);
    let mut snapshot = None;
    let mut mmd_values = Vec::with_capacity(per_epoch * cfg.epochs);

    for epoch in 0..cfg.epochs {
        let s_order = epoch_order(source.len(), cfg.seed, "mapping/source/shuffle", epoch);
        let t_order = epoch_order(target.len(), cfg.seed, "mapping/target/shuffle", epoch);
        for j in 0..per_epoch {
            let k = epoch * per_epoch + j;
            if snapshot_at == Some(k) {
                snapshot = Some((k, tgt.clone()));
            }
            let s_rows = &s_order[j * b..(j + 1) * b];
            let t_rows = &t_order[j * b..(j + 1) * b];
            let (xs, ys) = (source.gather(s_rows), source.gather_labels(s_rows));
            let (xt, yt) = (target.gather(t_rows), target.gather_labels(t_rows));
            let s_seeds = StepSeeds::new(cfg.seed, "mapping/source", k);
            let t_seeds = StepSeeds::new(cfg.seed, "mapping/target", k);

            let (s_state, hs) =
                batch_gradients(&src, xs.view(), &ys, s_seeds.dropout, per_example, Some(layer))?;
            let (t_state, ht) =
                batch_gradients(&tgt, xt.view(), &yt, t_seeds.dropout, per_example, Some(layer))?;

            let kernel = cfg.kernel.resolve(hs.view(), ht.view());
            let (value, mut gs, mut gt) = mmd_with_grad(hs.view(), ht.view(), kernel)?;
            mmd_values.push(value);
            let (s_grad, t_grad) = if cfg.mmd_weight > 0.0 {
                gs *= cfg.mmd_weight;
                gt *= cfg.mmd_weight;
                (
                    s_state.finish(&src, Some((layer, gs.view())))?,
                    t_state.finish(&tgt, Some((layer, gt.view())))?,
                )
            } else {
                (s_state.finish(&src, None)?, t_state.finish(&tgt, None)?)
            };
            opt_s.step(&mut src, s_grad.as_batch(), s_seeds.noise)?;
            opt_t.step(&mut tgt, t_grad.as_batch(), t_seeds.noise)?;

            let truth = source
                .property()
                .map(|p| s_rows.iter().map(|&r| p[r]).collect())
                .unwrap_or_default();
            trace.push(
                FeatureRecord {
                    iteration: k,
                    source_hidden: hs,
                    target_hidden: ht,
                },
                truth,
            )?;
        }
    }
    Ok(MappingRun {
        source_model: src,
        target_model: tgt,
        trace,
        target_snapshot: snapshot,
        iterations_per_epoch: per_epoch,
        mmd: mmd_values,
        alignment_layer: layer,
    })
}
