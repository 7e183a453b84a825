//! Evaluation statistics: AUC, accuracy, per-class precision, Pearson r.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores paired with binary ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryEval {
    scores: Vec<f64>,
    labels: Vec<u8>,
    threshold: f64,
}

impl BinaryEval {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape("score/label pairing", scores.len(), labels.len()));
        }
        if scores.is_empty() {
            return Err(Error::shape("binary evaluation size", 1, 0));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Data(format!("label {bad} is not binary")));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite score".into()));
        }
        Ok(BinaryEval {
            scores,
            labels,
            threshold: DEFAULT_THRESHOLD,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    fn predicted(&self) -> impl Iterator<Item = (bool, bool)> + '_ {
        self.scores
            .iter()
            .zip(&self.labels)
            .map(|(&s, &y)| (s >= self.threshold, y == 1))
    }
}

/// Area under the ROC curve via the Mann-Whitney rank sum, ties averaged.
pub fn auc(eval: &BinaryEval) -> Result<f64> {
    let n_pos = eval.positives();
    let n_neg = eval.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUC with a single class"));
    }
    let mut order: Vec<usize> = (0..eval.len()).collect();
    // scores are finite, so partial_cmp is total here; unlike total_cmp it
    // also treats -0.0 and 0.0 as a tie
    order.sort_by(|&a, &b| {
        eval.scores[a]
            .partial_cmp(&eval.scores[b])
            .expect("finite scores")
    });

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && eval.scores[order[j + 1]] == eval.scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares the mean rank
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j]
            .iter()
            .filter(|&&k| eval.labels[k] == 1)
            .count();
        pos_rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of units where `(score ≥ threshold) == label`.
pub fn accuracy(eval: &BinaryEval) -> f64 {
    let hits = eval.predicted().filter(|(pred, truth)| pred == truth).count();
    hits as f64 / eval.len() as f64
}

/// A metric that may legitimately have no value (empty denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Value(f64),
    Undefined,
}

impl Measure {
    pub fn value(self) -> Option<f64> {
        match self {
            Measure::Value(v) => Some(v),
            Measure::Undefined => None,
        }
    }

    fn ratio(num: usize, den: usize) -> Measure {
        if den == 0 {
            Measure::Undefined
        } else {
            Measure::Value(num as f64 / den as f64)
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Value(v) => write!(f, "{v:.4}"),
            Measure::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Measure {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Measure::Value(v) => s.serialize_f64(*v),
            Measure::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Measure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct MeasureVisitor;
        impl Visitor<'_> for MeasureVisitor {
            type Value = Measure;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"undefined\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Measure, E> {
                Ok(Measure::Value(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Measure, E> {
                Ok(Measure::Value(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Measure, E> {
                Ok(Measure::Value(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Measure, E> {
                if v == "undefined" {
                    Ok(Measure::Undefined)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(MeasureVisitor)
    }
}

/// `(TP/(TP+FP), TN/(TN+FN))`; an empty predicted class is `Undefined`.
pub fn precision_per_class(eval: &BinaryEval) -> (Measure, Measure) {
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (pred, truth) in eval.predicted() {
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    (Measure::ratio(tp, tp + fp), Measure::ratio(tn, tn + fneg))
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("pearson inputs", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::shape("pearson length", 2, x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation with a constant vector"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Median and interquartile range (linear interpolation between order statistics).
pub fn median_iqr(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some((q(0.5), q(0.75) - q(0.25)))
}
