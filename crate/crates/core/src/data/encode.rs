//! One-hot / z-score encoding and the domain and property views built on it.

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::Array2;

use super::adult::{attribute_index, AttributeKind, SourceFile, ATTRIBUTES, NATIVE_COUNTRY, US};
use super::{ColumnStats, FeatureColumn, LabeledDataset, NormStats, RawDataset, RawRecord};
use crate::error::{Error, Result};

const MISSING_CATEGORY: &str = "?";

enum Slot {
    Continuous { attr: usize },
    Categorical { attr: usize, categories: Vec<String> },
}

/// Column layout shared by every dataset encoded from one [`RawDataset`].
///
/// Category vocabularies come from the whole raw dataset so that encodings
/// of different subsets (domains, splits) line up column for column.
pub struct Encoder {
    slots: Vec<Slot>,
    columns: Vec<FeatureColumn>,
}

impl Encoder {
    pub fn new(raw: &RawDataset, drop_attrs: &[&str]) -> Result<Encoder> {
        for name in drop_attrs {
            if attribute_index(name).is_none() {
                return Err(Error::Config(format!("unknown attribute {name:?}")));
            }
        }
        let mut slots = Vec::new();
        let mut columns = Vec::new();
        for (idx, (name, kind)) in ATTRIBUTES.iter().enumerate() {
            if drop_attrs.contains(name) {
                continue;
            }
            match kind {
                AttributeKind::Continuous => {
                    slots.push(Slot::Continuous { attr: idx });
                    columns.push(FeatureColumn {
                        name: (*name).to_string(),
                        attribute: (*name).to_string(),
                    });
                }
                AttributeKind::Categorical => {
                    let categories: BTreeSet<&str> = raw
                        .records()
                        .iter()
                        .map(|r| r.value(idx).unwrap_or(MISSING_CATEGORY))
                        .collect();
                    let categories: Vec<String> =
                        categories.into_iter().map(str::to_string).collect();
                    columns.extend(categories.iter().map(|c| FeatureColumn {
                        name: format!("{name}={c}"),
                        attribute: (*name).to_string(),
                    }));
                    slots.push(Slot::Categorical {
                        attr: idx,
                        categories,
                    });
                }
            }
        }
        Ok(Encoder { slots, columns })
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    /// Mean and population standard deviation of every continuous attribute.
    pub fn fit(&self, records: &[Arc<RawRecord>]) -> NormStats {
        let columns = self
            .slots
            .iter()
            .filter_map(|slot| match slot {
                Slot::Continuous { attr } => {
                    let vals: Vec<f64> = records
                        .iter()
                        .filter_map(|r| r.value(*attr))
                        .map(|v| v.parse::<f64>().expect("validated at load"))
                        .collect();
                    let n = vals.len().max(1) as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    Some(ColumnStats {
                        attribute: ATTRIBUTES[*attr].0.to_string(),
                        mean,
                        std,
                    })
                }
                Slot::Categorical { .. } => None,
            })
            .collect();
        NormStats { columns }
    }

    pub fn encode(&self, records: &[Arc<RawRecord>], stats: &NormStats) -> Result<LabeledDataset> {
        let mut features = Array2::zeros((records.len(), self.columns.len()));
        for (row, record) in records.iter().enumerate() {
            let mut col = 0;
            for slot in &self.slots {
                match slot {
                    Slot::Continuous { attr } => {
                        let name = ATTRIBUTES[*attr].0;
                        let s = stats.get(name).ok_or_else(|| {
                            Error::Data(format!("no normalization stats for {name}"))
                        })?;
                        // a missing continuous value is imputed at the mean
                        features[[row, col]] = match record.value(*attr) {
                            Some(v) => (v.parse::<f64>().expect("validated at load") - s.mean) / s.std,
                            None => 0.0,
                        };
                        col += 1;
                    }
                    Slot::Categorical { attr, categories } => {
                        let value = record.value(*attr).unwrap_or(MISSING_CATEGORY);
                        let pos = categories.binary_search_by(|c| c.as_str().cmp(value)).map_err(
                            |_| {
                                Error::Data(format!(
                                    "category {value:?} of {} missing from the vocabulary",
                                    ATTRIBUTES[*attr].0
                                ))
                            },
                        )?;
                        features[[row, col + pos]] = 1.0;
                        col += categories.len();
                    }
                }
            }
        }
        let labels = records.iter().map(|r| u8::from(r.high_income())).collect();
        LabeledDataset::new(features, labels, self.columns.clone())?
            .with_stats(stats.clone())
            .with_records(records.to_vec())
    }
}

/// Encodes every row of `raw`, standardizing with stats from those rows.
pub fn preprocess(raw: &RawDataset, drop_attrs: &[&str]) -> Result<LabeledDataset> {
    let encoder = Encoder::new(raw, drop_attrs)?;
    let stats = encoder.fit(raw.records());
    encoder.encode(raw.records(), &stats)
}

#[derive(Debug, Clone)]
pub struct DomainSplit {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl DomainSplit {
    fn map(&self, f: impl Fn(&LabeledDataset) -> Result<LabeledDataset>) -> Result<DomainSplit> {
        Ok(DomainSplit {
            train: f(&self.train)?,
            test: f(&self.test)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DomainPair {
    pub source: DomainSplit,
    pub target: DomainSplit,
}

impl DomainPair {
    /// Applies [`make_property_dataset`] to all four splits.
    pub fn with_property(&self, attribute: &str, positive_value: &str) -> Result<DomainPair> {
        let f = |ds: &LabeledDataset| make_property_dataset(ds, attribute, positive_value);
        Ok(DomainPair {
            source: self.source.map(f)?,
            target: self.target.map(f)?,
        })
    }
}

/// US rows become the source domain, all others the target. Each side keeps
/// the original train/test file boundary and is standardized with its own
/// train-split statistics. `native-country` never reaches the features.
pub fn split_domains(raw: &RawDataset, drop_attrs: &[&str]) -> Result<DomainPair> {
    let mut drops: Vec<&str> = drop_attrs.to_vec();
    if !drops.contains(&NATIVE_COUNTRY) {
        drops.push(NATIVE_COUNTRY);
    }
    let encoder = Encoder::new(raw, &drops)?;
    let country = attribute_index(NATIVE_COUNTRY).expect("known attribute");
    let side = |us: bool| -> Result<DomainSplit> {
        let pick = |file: SourceFile| -> Vec<Arc<RawRecord>> {
            raw.records()
                .iter()
                .filter(|r| (r.value(country) == Some(US)) == us && r.provenance().file == file)
                .cloned()
                .collect()
        };
        let train = pick(SourceFile::Train);
        let test = pick(SourceFile::Test);
        let stats = encoder.fit(&train);
        Ok(DomainSplit {
            train: encoder.encode(&train, &stats)?,
            test: encoder.encode(&test, &stats)?,
        })
    };
    Ok(DomainPair {
        source: side(true)?,
        target: side(false)?,
    })
}

/// Removes `attribute` from the features and labels each row 1 iff the
/// attribute equals `positive_value`. Task labels are untouched.
pub fn make_property_dataset(
    ds: &LabeledDataset,
    attribute: &str,
    positive_value: &str,
) -> Result<LabeledDataset> {
    let values = ds.attribute_values(attribute)?;
    let property = values
        .iter()
        .map(|v| u8::from(*v == Some(positive_value)))
        .collect();
    ds.without_attribute(attribute).with_property(property)
}
