//! Datasets: UCI-Adult ingestion and encoding, domain and property views,
//! batch-property and shadow splits, synthetic fixtures.

mod adult;
mod batches;
mod cache;
mod encode;
mod synth;
#[cfg(test)]
pub(crate) mod fixtures;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adult::{
    load_adult, load_adult_with, AttributeKind, MissingPolicy, Provenance, RawDataset, RawRecord,
    SourceFile, ATTRIBUTES, NATIVE_COUNTRY, US,
};
pub use batches::{
    make_batch_property_dataset, shadow_split, BatchRule, BatchedDataset, ShadowPartition,
    ShadowSplit,
};
pub use cache::{read_dataset, write_dataset};
pub use encode::{make_property_dataset, preprocess, split_domains, DomainPair, DomainSplit, Encoder};
pub use synth::{synth_domain_pair, synth_gaussian, synth_with_property};

/// A named feature column and the raw attribute it was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub attribute: String,
}

/// Standardization parameters of one continuous column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub attribute: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub columns: Vec<ColumnStats>,
}

impl NormStats {
    pub fn get(&self, attribute: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.attribute == attribute)
    }
}

/// Feature matrix with binary task labels and optional property labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    property: Option<Vec<u8>>,
    columns: Vec<FeatureColumn>,
    stats: NormStats,
    /// Raw rows behind each feature row; empty for synthetic data.
    records: Vec<Arc<RawRecord>>,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<u8>,
        columns: Vec<FeatureColumn>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape("dataset labels", features.nrows(), labels.len()));
        }
        if features.ncols() != columns.len() {
            return Err(Error::shape("dataset columns", features.ncols(), columns.len()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Data("task labels must be 0/1".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(LabeledDataset {
            features,
            labels,
            property: None,
            columns,
            stats: NormStats::default(),
            records: Vec::new(),
        })
    }

    pub fn with_property(mut self, property: Vec<u8>) -> Result<Self> {
        if property.len() != self.len() {
            return Err(Error::shape("property labels", self.len(), property.len()));
        }
        if property.iter().any(|&y| y > 1) {
            return Err(Error::Data("property labels must be 0/1".into()));
        }
        self.property = Some(property);
        Ok(self)
    }

    pub(crate) fn with_stats(mut self, stats: NormStats) -> Self {
        self.stats = stats;
        self
    }

    pub(crate) fn with_records(mut self, records: Vec<Arc<RawRecord>>) -> Result<Self> {
        if records.len() != self.len() {
            return Err(Error::shape("row provenance", self.len(), records.len()));
        }
        self.records = records;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn property(&self) -> Option<&[u8]> {
        self.property.as_deref()
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn records(&self) -> &[Arc<RawRecord>] {
        &self.records
    }

    /// Raw value of `attribute` for every row, when provenance is attached.
    pub fn attribute_values(&self, attribute: &str) -> Result<Vec<Option<&str>>> {
        let idx = adult::attribute_index(attribute)
            .ok_or_else(|| Error::Config(format!("unknown attribute {attribute:?}")))?;
        if self.records.is_empty() && !self.is_empty() {
            return Err(Error::Data(format!(
                "dataset carries no raw attributes to read {attribute:?} from"
            )));
        }
        Ok(self.records.iter().map(|r| r.value(idx)).collect())
    }

    /// Gathers the feature rows at `rows`.
    pub fn gather(&self, rows: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), rows)
    }

    pub fn gather_labels(&self, rows: &[usize]) -> Vec<u8> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }

    /// A new dataset made of the rows at `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.gather(rows),
            labels: self.gather_labels(rows),
            property: self
                .property
                .as_ref()
                .map(|p| rows.iter().map(|&r| p[r]).collect()),
            columns: self.columns.clone(),
            stats: self.stats.clone(),
            records: if self.records.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&r| self.records[r].clone()).collect()
            },
        }
    }

    /// Rows split by property label: `(with property, without)`.
    pub fn split_by_property(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let prop = self
            .property
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no property labels".into()))?;
        let (yes, no): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| prop[i] == 1);
        Ok((self.subset(&yes), self.subset(&no)))
    }

    /// Same rows with the feature columns derived from `attribute` removed.
    pub fn without_attribute(&self, attribute: &str) -> LabeledDataset {
        let keep: Vec<usize> = (0..self.columns.len())
            .filter(|&c| self.columns[c].attribute != attribute)
            .collect();
        LabeledDataset {
            features: self.features.select(Axis(1), &keep),
            labels: self.labels.clone(),
            property: self.property.clone(),
            columns: keep.iter().map(|&c| self.columns[c].clone()).collect(),
            stats: NormStats {
                columns: self
                    .stats
                    .columns
                    .iter()
                    .filter(|c| c.attribute != attribute)
                    .cloned()
                    .collect(),
            },
            records: self.records.clone(),
        }
    }
}
