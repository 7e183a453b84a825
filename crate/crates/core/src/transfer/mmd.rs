//! Maximum mean discrepancy between two batches of hidden features.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A concrete kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `k(a, b) = a·b`
    Linear,
    /// `k(a, b) = exp(−‖a−b‖² / (2·bandwidth²))`
    Rbf(f64),
}

/// Kernel as configured; an RBF without a bandwidth uses the median heuristic
/// on each batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelChoice {
    Linear,
    Rbf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<f64>,
    },
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::Rbf { bandwidth: None }
    }
}

impl KernelChoice {
    pub fn resolve(self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Kernel {
        match self {
            KernelChoice::Linear => Kernel::Linear,
            KernelChoice::Rbf { bandwidth: Some(b) } => Kernel::Rbf(b),
            KernelChoice::Rbf { bandwidth: None } => Kernel::Rbf(median_bandwidth(x, y)),
        }
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Median pairwise Euclidean distance over the rows of `x ∪ y`; 1.0 when
/// that median is zero.
pub fn median_bandwidth(x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let rows: Vec<_> = x.rows().into_iter().chain(y.rows()).collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            dists.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

fn check(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::shape("mmd feature columns", x.ncols(), y.ncols()));
    }
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::shape("mmd sample count", 1, 0));
    }
    Ok(())
}

fn validate_kernel(kernel: Kernel) -> Result<()> {
    match kernel {
        Kernel::Rbf(b) if !(b > 0.0 && b.is_finite()) => {
            Err(Error::Config(format!("rbf bandwidth must be positive, got {b}")))
        }
        _ => Ok(()),
    }
}

/// Biased (V-statistic) MMD² estimate.
pub fn mmd(x: ArrayView2<f64>, y: ArrayView2<f64>, kernel: Kernel) -> Result<f64> {
    Ok(mmd_with_grad(x, y, kernel)?.0)
}

/// MMD² together with its gradient w.r.t. every row of `x` and of `y`.
/// The bandwidth is held fixed.
pub fn mmd_with_grad(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    kernel: Kernel,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check(x, y)?;
    validate_kernel(kernel)?;
    let (n, m) = (x.nrows() as f64, y.nrows() as f64);
    match kernel {
        Kernel::Linear => {
            let mx = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
            let my = y.mean_axis(ndarray::Axis(0)).expect("non-empty");
            let diff = &mx - &my;
            let value = diff.dot(&diff);
            let gx_row = &diff * (2.0 / n);
            let gy_row = &diff * (-2.0 / m);
            let gx = Array2::from_shape_fn(x.dim(), |(_, j)| gx_row[j]);
            let gy = Array2::from_shape_fn(y.dim(), |(_, j)| gy_row[j]);
            Ok((value, gx, gy))
        }
        Kernel::Rbf(bw) => {
            let inv = 1.0 / (bw * bw);
            let mut gx = Array2::zeros(x.dim());
            let mut gy = Array2::zeros(y.dim());
            // within-set term: coefficient c, pairs (a, b) from the same set
            let within = |s: ArrayView2<f64>, g: &mut Array2<f64>, c: f64| -> f64 {
                let mut total = 0.0;
                for a in 0..s.nrows() {
                    for b in 0..s.nrows() {
                        let k = (-0.5 * sq_dist(s.row(a), s.row(b)) * inv).exp();
                        total += k;
                        if a != b {
                            // d k(s_a, s_b)/d s_a, counted twice by symmetry
                            let scale = -2.0 * c * k * inv;
                            for j in 0..s.ncols() {
                                g[[a, j]] += scale * (s[[a, j]] - s[[b, j]]);
                            }
                        }
                    }
                }
                c * total
            };
            let xx = within(x, &mut gx, 1.0 / (n * n));
            let yy = within(y, &mut gy, 1.0 / (m * m));
            let c = 2.0 / (n * m);
            let mut xy = 0.0;
            for a in 0..x.nrows() {
                for b in 0..y.nrows() {
                    let k = (-0.5 * sq_dist(x.row(a), y.row(b)) * inv).exp();
                    xy += k;
                    let scale = c * k * inv;
                    for j in 0..x.ncols() {
                        let d = x[[a, j]] - y[[b, j]];
                        gx[[a, j]] += scale * d;
                        gy[[b, j]] -= scale * d;
                    }
                }
            }
            Ok((xx + yy - c * xy, gx, gy))
        }
    }
}
