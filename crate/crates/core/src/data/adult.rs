//! Reader for the UCI `adult.data` / `adult.test` files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeKind {
    Continuous,
    Categorical,
}

/// The 14 attributes in file order.
pub const ATTRIBUTES: [(&str, AttributeKind); 14] = [
    ("age", AttributeKind::Continuous),
    ("workclass", AttributeKind::Categorical),
    ("fnlwgt", AttributeKind::Continuous),
    ("education", AttributeKind::Categorical),
    ("education-num", AttributeKind::Continuous),
    ("marital-status", AttributeKind::Categorical),
    ("occupation", AttributeKind::Categorical),
    ("relationship", AttributeKind::Categorical),
    ("race", AttributeKind::Categorical),
    ("sex", AttributeKind::Categorical),
    ("capital-gain", AttributeKind::Continuous),
    ("capital-loss", AttributeKind::Continuous),
    ("hours-per-week", AttributeKind::Continuous),
    ("native-country", AttributeKind::Categorical),
];

pub const NATIVE_COUNTRY: &str = "native-country";
pub const US: &str = "United-States";
pub(crate) const HIGH_INCOME: &str = ">50K";
const LOW_INCOME: &str = "<=50K";
const MISSING: &str = "?";

pub(crate) fn attribute_index(name: &str) -> Option<usize> {
    ATTRIBUTES.iter().position(|(n, _)| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFile {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub file: SourceFile,
    pub line: usize,
}

/// One row: 14 attribute values (`None` = missing) and the income label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    values: Vec<Option<String>>,
    label: String,
    provenance: Provenance,
}

impl RawRecord {
    pub fn value(&self, attribute: usize) -> Option<&str> {
        self.values[attribute].as_deref()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        attribute_index(name).and_then(|i| self.value(i))
    }

    /// Normalized income label, `">50K"` or `"<=50K"`.
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn high_income(&self) -> bool {
        self.label == HIGH_INCOME
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }
}

/// What to do with rows that contain a `?`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Drop any row with a missing attribute.
    #[default]
    Drop,
    /// Keep the row; a missing categorical value becomes its own `?` category.
    KeepAsCategory,
}

#[derive(Debug, Clone)]
pub struct RawDataset {
    records: Vec<Arc<RawRecord>>,
    dropped_incomplete: usize,
    policy: MissingPolicy,
}

impl RawDataset {
    pub fn records(&self) -> &[Arc<RawRecord>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dropped_incomplete(&self) -> usize {
        self.dropped_incomplete
    }

    pub fn policy(&self) -> MissingPolicy {
        self.policy
    }

    pub fn from_records(records: Vec<RawRecord>, policy: MissingPolicy) -> Self {
        let total = records.len();
        let records: Vec<Arc<RawRecord>> = records
            .into_iter()
            .filter(|r| policy == MissingPolicy::KeepAsCategory || r.is_complete())
            .map(Arc::new)
            .collect();
        RawDataset {
            dropped_incomplete: total - records.len(),
            records,
            policy,
        }
    }
}

/// Loads both files, dropping incomplete rows.
pub fn load_adult(train: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<RawDataset> {
    load_adult_with(train, test, MissingPolicy::Drop)
}

pub fn load_adult_with(
    train: impl AsRef<Path>,
    test: impl AsRef<Path>,
    policy: MissingPolicy,
) -> Result<RawDataset> {
    let mut records = parse_file(train.as_ref(), SourceFile::Train)?;
    records.extend(parse_file(test.as_ref(), SourceFile::Test)?);
    Ok(RawDataset::from_records(records, policy))
}

fn parse_file(path: &Path, file: SourceFile) -> Result<Vec<RawRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_text(&text, path, file)
}

pub(crate) fn parse_text(text: &str, path: &Path, file: SourceFile) -> Result<Vec<RawRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        // adult.test opens with a `|1x3 Cross validator` banner
        if line.is_empty() || line.starts_with('|') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != ATTRIBUTES.len() + 1 {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", ATTRIBUTES.len() + 1, fields.len()),
            ));
        }
        let mut values = Vec::with_capacity(ATTRIBUTES.len());
        for ((name, kind), raw) in ATTRIBUTES.iter().zip(&fields) {
            if *raw == MISSING {
                values.push(None);
                continue;
            }
            if *kind == AttributeKind::Continuous && raw.parse::<f64>().is_err() {
                return Err(err(lineno, format!("attribute {name}: {raw:?} is not numeric")));
            }
            values.push(Some((*raw).to_string()));
        }
        let label = fields[ATTRIBUTES.len()].trim_end_matches('.');
        if label != HIGH_INCOME && label != LOW_INCOME {
            return Err(err(lineno, format!("unknown income label {label:?}")));
        }
        out.push(RawRecord {
            values,
            label: label.to_string(),
            provenance: Provenance { file, line: lineno },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW: &str = "39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K";

    #[test]
    fn test_file_label_period_is_stripped() {
        let text = "|1x3 Cross validator\n25, Private, 226802, 11th, 7, Never-married, Machine-op-inspct, Own-child, Black, Male, 0, 0, 40, United-States, >50K.\n";
        let rows = parse_text(text, Path::new("adult.test"), SourceFile::Test).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].label(), ">50K");
        assert!(rows[0].high_income());
        assert_eq!(rows[0].provenance().line, 2);
    }

    #[test]
    fn short_row_reports_its_line() {
        let short = ROW.rsplit_once(',').unwrap().0.rsplit_once(',').unwrap().0.to_string()
            + ", <=50K";
        let text = format!("{ROW}\n{short}\n");
        match parse_text(&text, Path::new("adult.data"), SourceFile::Train) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("found 14"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_policy() {
        let text = format!("{ROW}\n{}\n", ROW.replace("State-gov", "?"));
        let rows = parse_text(&text, Path::new("x"), SourceFile::Train).unwrap();
        assert_eq!(rows[1].get("workclass"), None);
        let dropped = RawDataset::from_records(rows.clone(), MissingPolicy::Drop);
        assert_eq!((dropped.len(), dropped.dropped_incomplete()), (1, 1));
        let kept = RawDataset::from_records(rows, MissingPolicy::KeepAsCategory);
        assert_eq!((kept.len(), kept.dropped_incomplete()), (2, 0));
    }
}
