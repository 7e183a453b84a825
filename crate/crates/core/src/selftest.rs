//! Runtime invariant checks, runnable from the command line.
//!
//! Each check builds its own small seeded fixture and compares an
//! implementation against an independent recomputation.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attacks::{self, AttackEvalSet};
use crate::data::{synth_domain_pair, synth_gaussian};
use crate::error::Result;
use crate::metrics::{self, BinaryEval};
use crate::nn::{self, Gradients, Mlp, MlpSpec, Mode, ParamLayers};
use crate::optim::{self, DpSgdConfig, OptimizerConfig, SgldConfig};
use crate::seed;
use crate::transfer::{self, Domain, Kernel, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Check {
        Check { name, passed, detail }
    }
}

/// Runs every check; `Err` only for failures to build a fixture.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        gradient_check(seed)?,
        auc_oracle(seed)?,
        mmd_checks(seed)?,
        sgld_zero_temperature(seed)?,
        dpsgd_degenerate(seed)?,
        online_gradient_recovery(seed)?,
        label_shuffle_null(seed)?,
        training_reproducible(seed)?,
    ])
}

pub const GRAD_CHECK_TOL: f64 = 1e-4;
pub const AUC_ORACLE_TOL: f64 = 1e-12;
pub const MMD_ZERO_TOL: f64 = 1e-12;
pub const ONLINE_GRADIENT_TOL: f64 = 1e-9;

fn random_matrix(rows: usize, cols: usize, seed: u64, stage: &str) -> Array2<f64> {
    let mut rng = seed::rng_for(seed, stage, 0);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

fn gradient_check(seed: u64) -> Result<Check> {
    let spec = MlpSpec::new(12, vec![64, 8])?;
    let mlp = Mlp::init(&spec, seed);
    let x = random_matrix(16, 12, seed, "selftest-grad");
    let mut rng = seed::rng_for(seed, "selftest-grad-labels", 0);
    let y: Vec<u8> = (0..16).map(|_| u8::from(rng.random::<bool>())).collect();
    let err = nn::grad_check(&mlp, x.view(), &y, 1e-5)?;
    Ok(Check::new(
        "gradient check vs central differences",
        err < GRAD_CHECK_TOL,
        format!("max relative error {err:.3e} (tol {GRAD_CHECK_TOL:.0e})"),
    ))
}

/// P(s+ > s-) + P(tie)/2 by enumerating all pairs.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            den += 1.0;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

fn auc_oracle(seed: u64) -> Result<Check> {
    let mut rng = seed::rng_for(seed, "selftest-auc", 0);
    let mut worst: f64 = 0.0;
    let instances = 200;
    for _ in 0..instances {
        let n = rng.random_range(2..=60);
        // coarse scores force ties
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8)) / 8.0).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        labels[0] = 0;
        labels[1] = 1;
        let fast = metrics::auc(&BinaryEval::new(scores.clone(), labels.clone())?)?;
        worst = worst.max((fast - pairwise_auc(&scores, &labels)).abs());
    }
    Ok(Check::new(
        "rank AUC equals pairwise oracle",
        worst <= AUC_ORACLE_TOL,
        format!("{instances} instances, max deviation {worst:.3e}"),
    ))
}

/// Double-loop biased MMD estimate.
pub fn brute_force_mmd(x: &Array2<f64>, y: &Array2<f64>, kernel: Kernel) -> f64 {
    let k = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| match kernel {
        Kernel::Linear => a.dot(&b),
        Kernel::Rbf(bw) => (-nn::sq_dist(a, b) / (2.0 * bw * bw)).exp(),
    };
    let mean = |p: &Array2<f64>, q: &Array2<f64>| {
        let mut s = 0.0;
        for a in p.rows() {
            for b in q.rows() {
                s += k(a, b);
            }
        }
        s / (p.nrows() * q.nrows()) as f64
    };
    mean(x, x) + mean(y, y) - 2.0 * mean(x, y)
}

fn mmd_checks(seed: u64) -> Result<Check> {
    let x = random_matrix(40, 5, seed, "selftest-mmd-x");
    let y = random_matrix(30, 5, seed, "selftest-mmd-y") + 1.5;
    let kernel = Kernel::Rbf(1.3);
    let self_mmd = transfer::mmd(x.view(), x.view(), kernel)?;
    let value = transfer::mmd(x.view(), y.view(), kernel)?;
    let oracle = brute_force_mmd(&x, &y, kernel);
    let dev = (value - oracle).abs();
    Ok(Check::new(
        "MMD(X,X) = 0 and double-loop agreement",
        self_mmd.abs() <= MMD_ZERO_TOL && dev <= 1e-12,
        format!("MMD(X,X) = {self_mmd:.3e}, |fast - oracle| = {dev:.3e}"),
    ))
}

fn sample_grads(mlp: &Mlp, seed: u64, n: usize) -> Result<Vec<Gradients>> {
    let x = random_matrix(n, mlp.spec().input_dim(), seed, "selftest-per-example");
    (0..n)
        .map(|i| {
            let row = x.slice(ndarray::s![i..i + 1, ..]);
            Ok(mlp.loss_and_grad(row, &[u8::from(i % 2 == 0)], Mode::Eval)?.1)
        })
        .collect()
}

fn sgld_zero_temperature(seed: u64) -> Result<Check> {
    let spec = MlpSpec::new(6, vec![8, 4])?;
    let mlp = Mlp::init(&spec, seed);
    let g = &sample_grads(&mlp, seed, 1)?[0];
    let mut a = mlp.clone();
    let mut b = mlp.clone();
    optim::sgd_step(&mut a, g, 0.01)?;
    optim::sgld_step(&mut b, g, &SgldConfig { lr: 0.01, temperature: 0.0 }, seed)?;
    let same = bitwise_equal(&a.flatten(), &b.flatten());
    Ok(Check::new("SGLD at temperature 0 equals SGD bitwise", same, String::new()))
}

fn dpsgd_degenerate(seed: u64) -> Result<Check> {
    let spec = MlpSpec::new(6, vec![8, 4])?;
    let mlp = Mlp::init(&spec, seed);
    let per = sample_grads(&mlp, seed, 8)?;
    let max_norm = per.iter().map(Gradients::l2_norm).fold(0.0, f64::max);
    let cfg = DpSgdConfig {
        lr: 0.01,
        clip_norm: max_norm * 2.0 + 1.0,
        noise_multiplier: 0.0,
    };
    let mut a = mlp.clone();
    let mut b = mlp.clone();
    optim::sgd_step(&mut a, &Gradients::mean(&per)?, cfg.lr)?;
    optim::dpsgd_step(&mut b, &per, &cfg, seed)?;
    let same = bitwise_equal(&a.flatten(), &b.flatten());
    Ok(Check::new(
        "DP-SGD without noise or active clipping equals mean-gradient SGD bitwise",
        same,
        format!("largest per-example norm {max_norm:.3}"),
    ))
}

fn online_gradient_recovery(seed: u64) -> Result<Check> {
    let (source, target) = synth_domain_pair(96, 96, 5, 0.5, seed)?;
    let spec = MlpSpec::new(5, vec![8, 4])?;
    let lr = 0.05;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        optimizer: OptimizerConfig::Sgd { lr },
        seed,
        ..TrainConfig::default()
    };
    let run = transfer::cotrain_parameter(&source, &target, &spec, &cfg, None)?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (pos, record) in run.trace.observed().iter().enumerate() {
        if record.domain != Domain::Source {
            continue;
        }
        let online = attacks::online_gradient(run.trace.previous(pos), &record.params, lr)?;
        let mut before = Mlp::zeros(run.trace.spec());
        before.set_flat(run.trace.previous(pos))?;
        let truth = attacks::batch_gradient(&before, &source, &run.trace.ground_truth(pos).batch_rows)?;
        for (a, b) in online.iter().zip(&truth) {
            worst = worst.max((a - b).abs());
        }
        checked += 1;
    }
    Ok(Check::new(
        "noiseless SGD update inversion recovers the batch gradient",
        worst < ONLINE_GRADIENT_TOL,
        format!("{checked} source updates, max error {worst:.3e}"),
    ))
}

fn label_shuffle_null(seed: u64) -> Result<Check> {
    let data = synth_gaussian(400, 2, 2.0, seed)?;
    let scores: Vec<f64> = data.features().column(0).to_vec();
    let eval = AttackEvalSet::new(scores.clone(), data.labels().to_vec())?;
    let null = attacks::permutation_null(&eval, 200, seed)?;
    let mut shuffled = data.labels().to_vec();
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut seed::rng_for(seed, "selftest-shuffle", 0));
    let auc = metrics::auc(&BinaryEval::new(scores, shuffled)?)?;
    Ok(Check::new(
        "shuffled labels give chance AUC within 3 null std",
        null.within(auc, 3.0),
        format!(
            "observed {:.4}, shuffled {auc:.4}, null std {:.4}",
            null.observed, null.std
        ),
    ))
}

fn training_reproducible(seed: u64) -> Result<Check> {
    let (source, target) = synth_domain_pair(128, 128, 5, 0.5, seed)?;
    let spec = MlpSpec::new(5, vec![8, 4])?.with_dropout(0.2)?;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        optimizer: OptimizerConfig::Sgld(SgldConfig { lr: 0.01, temperature: 0.5 }),
        seed,
        ..TrainConfig::default()
    };
    let a = transfer::cotrain_mapping(&source, &target, &spec, &spec, &cfg, None)?;
    let b = transfer::cotrain_mapping(&source, &target, &spec, &spec, &cfg, None)?;
    let same = a.trace == b.trace
        && bitwise_equal(&a.source_model.flatten(), &b.source_model.flatten())
        && bitwise_equal(&a.target_model.flatten(), &b.target_model.flatten());
    Ok(Check::new(
        "seeded noisy co-training is bitwise reproducible",
        same,
        format!("{} trace records", a.trace.len()),
    ))
}

fn bitwise_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
