use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed;

/// Batch-level property labeling rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchRule {
    /// 1 iff at least one member's race is not White.
    AnyNonWhite,
    /// 1 iff at least one member is Female.
    AnyFemale,
}

impl BatchRule {
    pub fn attribute(self) -> &'static str {
        match self {
            BatchRule::AnyNonWhite => "race",
            BatchRule::AnyFemale => "sex",
        }
    }

    /// Whether a single row carries the marking value.
    pub fn marks(self, value: Option<&str>) -> bool {
        match self {
            BatchRule::AnyNonWhite => value != Some("White"),
            BatchRule::AnyFemale => value == Some("Female"),
        }
    }

    /// Per-row marker for every row of `ds`.
    pub fn row_marks(self, ds: &LabeledDataset) -> Result<Vec<bool>> {
        Ok(ds
            .attribute_values(self.attribute())?
            .into_iter()
            .map(|v| self.marks(v))
            .collect())
    }

    pub fn label(self, marks: &[bool], rows: &[usize]) -> u8 {
        u8::from(rows.iter().any(|&r| marks[r]))
    }
}

/// Row-index batches of one fixed size with their batch-level labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedDataset {
    batch_size: usize,
    rule: BatchRule,
    batches: Vec<Vec<usize>>,
    labels: Vec<u8>,
}

impl BatchedDataset {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn rule(&self) -> BatchRule {
        self.rule
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// `(positive, negative)` batch counts.
    pub fn counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (pos, self.labels.len() - pos)
    }
}

/// Shuffles rows by `seed`, cuts them into batches of `batch_size` (dropping
/// the last partial batch) and labels each batch with `rule`.
pub fn make_batch_property_dataset(
    ds: &LabeledDataset,
    batch_size: usize,
    rule: BatchRule,
    seed: u64,
) -> Result<BatchedDataset> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if batch_size > ds.len() {
        return Err(Error::Data(format!(
            "batch size {batch_size} exceeds dataset size {}",
            ds.len()
        )));
    }
    let marks = rule.row_marks(ds)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut seed::rng_for(seed, "batch-property", 0));
    let batches: Vec<Vec<usize>> = order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect();
    let labels = batches.iter().map(|b| rule.label(&marks, b)).collect();
    Ok(BatchedDataset {
        batch_size,
        rule,
        batches,
        labels,
    })
}

/// One shadow model's data: disjoint member and non-member halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShadowPartition {
    pub train: Vec<usize>,
    pub out: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShadowSplit {
    pub partitions: Vec<ShadowPartition>,
}

/// For every shadow index, an independent shuffle of the pool split in half.
pub fn shadow_split(pool: &LabeledDataset, n_shadow: usize, seed: u64) -> Result<ShadowSplit> {
    let pool_len = pool.len();
    if pool_len < 2 {
        return Err(Error::Data(format!("shadow pool needs at least 2 rows, has {pool_len}")));
    }
    if n_shadow == 0 {
        return Err(Error::Config("at least one shadow model is required".into()));
    }
    let partitions = (0..n_shadow)
        .map(|k| {
            let mut order: Vec<usize> = (0..pool_len).collect();
            order.shuffle(&mut seed::rng_for(seed, "shadow-split", k as u64));
            let out = order.split_off(pool_len.div_ceil(2));
            ShadowPartition { train: order, out }
        })
        .collect();
    Ok(ShadowSplit { partitions })
}
