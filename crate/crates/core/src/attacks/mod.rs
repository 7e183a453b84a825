//! Inference attacks against the three leakage profiles.
//!
//! * membership: shadow models turn the leaked source model's prediction
//!   vectors into member/non-member scores;
//! * property: a classifier trained on the attacker's own alignment-layer
//!   features scores the source features received during co-training;
//! * batch property: a classifier trained on auxiliary batch gradients
//!   scores the gradients recovered from consecutive shared snapshots.
//!
//! Attack functions only ever read the observed part of a trace. Ground
//! truth is joined in afterwards to build an [`AttackEvalSet`].

mod batch;
mod membership;
mod predictor;
mod property;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, BinaryEval, Measure};
use crate::seed;

pub use batch::{
    batch_gradient, infer_batch_property, online_gradient, score_online_gradients,
    train_batch_property_predictor,
};
pub use membership::{
    infer_membership, membership_eval_set, membership_features, train_membership_predictor,
    MembershipTraining, ShadowStats, MEMBERSHIP_WIDTH,
};
pub use predictor::{
    read_predictor, train_attack_model, write_predictor, AttackConfig, AttackMeta,
    AttackPredictor, FeatureDescriptor, Standardizer,
};
pub use property::{infer_property, score_feature_records, train_property_predictor};

/// Attack scores with harness-held ground truth, one entry per unit
/// (sample, feature row or batch).
#[derive(Debug, Clone, PartialEq)]
pub struct AttackEvalSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Summary metrics of one attack evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub auc: Measure,
    pub accuracy: f64,
    pub precision_positive: Measure,
    pub precision_negative: Measure,
    pub units: usize,
    pub positives: usize,
}

impl AttackEvalSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape("attack scores vs labels", labels.len(), scores.len()));
        }
        Ok(AttackEvalSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn binary(&self) -> Result<BinaryEval> {
        BinaryEval::new(self.scores.clone(), self.labels.clone())
    }

    pub fn auc(&self) -> Result<f64> {
        metrics::auc(&self.binary()?)
    }

    pub fn metrics(&self) -> Result<AttackMetrics> {
        let eval = self.binary()?;
        let (pp, pn) = metrics::precision_per_class(&eval);
        Ok(AttackMetrics {
            auc: metrics::auc(&eval).map_or(Measure::Undefined, Measure::Value),
            accuracy: metrics::accuracy(&eval),
            precision_positive: pp,
            precision_negative: pn,
            units: eval.len(),
            positives: eval.positives(),
        })
    }
}

/// Distribution of AUC under random relabeling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationNull {
    pub observed: f64,
    pub mean: f64,
    pub std: f64,
}

impl PermutationNull {
    /// Whether `value` lies within `k` null standard deviations of 0.5.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (value - 0.5).abs() <= k * self.std
    }
}

/// AUC of `eval` and of `shuffles` label permutations of it.
pub fn permutation_null(eval: &AttackEvalSet, shuffles: usize, seed: u64) -> Result<PermutationNull> {
    use rand::seq::SliceRandom;
    let observed = eval.auc()?;
    let mut labels = eval.labels.clone();
    let mut rng = seed::rng_for(seed, "permutation-null", 0);
    let mut aucs = Vec::with_capacity(shuffles);
    for _ in 0..shuffles {
        labels.shuffle(&mut rng);
        aucs.push(metrics::auc(&BinaryEval::new(eval.scores.clone(), labels.clone())?)?);
    }
    let n = aucs.len().max(1) as f64;
    let mean = aucs.iter().sum::<f64>() / n;
    let var = aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(PermutationNull {
        observed,
        mean,
        std: var.sqrt(),
    })
}
