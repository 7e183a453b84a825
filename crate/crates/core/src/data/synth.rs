//! Deterministic synthetic fixtures for tests and benches.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FeatureColumn, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed;

fn columns(d: usize) -> Vec<FeatureColumn> {
    (0..d)
        .map(|j| FeatureColumn {
            name: format!("x{j}"),
            attribute: format!("x{j}"),
        })
        .collect()
}

/// Two unit-variance Gaussian blobs whose means differ by `class_separation`
/// along the first coordinate; balanced labels in shuffled order.
pub fn synth_gaussian(n: usize, d: usize, class_separation: f64, seed: u64) -> Result<LabeledDataset> {
    if n == 0 || d == 0 {
        return Err(Error::Config("synthetic data needs n, d >= 1".into()));
    }
    let mut rng = seed::rng_for(seed, "synth-gaussian", 0);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 1)).collect();
    labels.shuffle(&mut rng);
    let mut x = Array2::<f64>::zeros((n, d));
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..d {
            x[[i, j]] = StandardNormal.sample(&mut rng);
        }
        x[[i, 0]] += if y == 1 { class_separation / 2.0 } else { -class_separation / 2.0 };
    }
    LabeledDataset::new(x, labels, columns(d))
}

/// Like [`synth_gaussian`] with a Bernoulli(1/2) property that shifts the
/// second coordinate by `property_shift`.
pub fn synth_with_property(
    n: usize,
    d: usize,
    class_separation: f64,
    property_shift: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if d < 2 {
        return Err(Error::Config("property fixture needs d >= 2".into()));
    }
    let base = synth_gaussian(n, d, class_separation, seed)?;
    let mut rng = seed::rng_for(seed, "synth-property", 0);
    let property: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
    let mut x = base.features().to_owned();
    for (i, &p) in property.iter().enumerate() {
        x[[i, 1]] += if p == 1 { property_shift / 2.0 } else { -property_shift / 2.0 };
    }
    LabeledDataset::new(x, base.labels().to_vec(), columns(d))?.with_property(property)
}

/// Source/target pair sharing one linear labeling rule; the target inputs
/// are mean-shifted by `shift` on every coordinate.
pub fn synth_domain_pair(
    n_source: usize,
    n_target: usize,
    d: usize,
    shift: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if d == 0 || n_source == 0 || n_target == 0 {
        return Err(Error::Config("synthetic domains need positive sizes".into()));
    }
    let mut rng = seed::rng_for(seed, "synth-domains", 0);
    let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut make = |n: usize, offset: f64| -> Result<LabeledDataset> {
        let mut x = Array2::<f64>::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let mut score = 0.0;
            for j in 0..d {
                let v: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] = v + offset;
                score += w[j] * v;
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            labels.push(u8::from(score + 0.3 * noise > 0.0));
        }
        LabeledDataset::new(x, labels, columns(d))
    };
    let source = make(n_source, 0.0)?;
    let target = make(n_target, shift)?;
    Ok((source, target))
}
