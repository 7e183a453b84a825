use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::data::{synth_domain_pair, synth_gaussian, synth_with_property};
use crate::nn::ParamLayers;
use crate::optim::{DpSgdConfig, SgldConfig};

fn blob(n: usize, d: usize, center: f64, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    Array2::from_shape_simple_fn((n, d), || center + rng.random_range(-1.0..1.0))
}

/// Double-loop biased MMD² with the kernel written out.
fn mmd_oracle(x: &Array2<f64>, y: &Array2<f64>, k: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let rows = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    let (xs, ys) = (rows(x), rows(y));
    let mean = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let mut s = 0.0;
        for p in a {
            for q in b {
                s += k(p, q);
            }
        }
        s / (a.len() * b.len()) as f64
    };
    mean(&xs, &xs) + mean(&ys, &ys) - 2.0 * mean(&xs, &ys)
}

fn rbf(bw: f64) -> impl Fn(&[f64], &[f64]) -> f64 {
    move |a, b| {
        let d: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d / (2.0 * bw * bw)).exp()
    }
}

fn sgd(lr: f64) -> OptimizerConfig {
    OptimizerConfig::Sgd { lr }
}

fn cfg(epochs: usize, batch: usize, optimizer: OptimizerConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        optimizer,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn mmd_of_identical_sets_is_zero() {
    let x = blob(30, 4, 0.0, 1);
    for k in [Kernel::Linear, Kernel::Rbf(1.0), Kernel::Rbf(0.3)] {
        assert!(mmd(x.view(), x.view(), k).unwrap().abs() <= 1e-12);
    }
}

#[test]
fn linear_mmd_of_singletons_is_squared_distance() {
    let x = array![[1.0, 2.0, -1.0]];
    let y = array![[0.5, -1.0, 2.0]];
    let v = mmd(x.view(), y.view(), Kernel::Linear).unwrap();
    assert!((v - (0.25 + 9.0 + 9.0)).abs() < 1e-12);
}

#[test]
fn rbf_mmd_matches_brute_force() {
    let x = blob(100, 3, 0.0, 2);
    let y = blob(100, 3, 3.0, 3);
    let fast = mmd(x.view(), y.view(), Kernel::Rbf(1.0)).unwrap();
    assert!((fast - mmd_oracle(&x, &y, rbf(1.0))).abs() <= 1e-12);
    let lin = mmd(x.view(), y.view(), Kernel::Linear).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    assert!((lin - mmd_oracle(&x, &y, dot)).abs() <= 1e-9);
}

#[test]
fn mmd_rejects_column_mismatch_and_bad_bandwidth() {
    let x = blob(3, 2, 0.0, 1);
    let y = blob(3, 3, 0.0, 1);
    assert!(matches!(mmd(x.view(), y.view(), Kernel::Linear), Err(Error::Shape { .. })));
    assert!(mmd(x.view(), x.view(), Kernel::Rbf(0.0)).is_err());
}

#[test]
fn median_bandwidth_examples() {
    let x = array![[0.0], [1.0]];
    let y = array![[3.0]];
    // pairwise distances 1, 3, 2
    assert_eq!(median_bandwidth(x.view(), y.view()), 2.0);
    let same = array![[1.0, 1.0], [1.0, 1.0]];
    assert_eq!(median_bandwidth(same.view(), same.view()), 1.0);
}

// Gradient w.r.t. every input coordinate, bandwidth held fixed.
#[test]
fn mmd_gradient_matches_finite_differences() {
    let x = blob(6, 3, 0.0, 5);
    let y = blob(5, 3, 0.7, 6);
    for kernel in [Kernel::Linear, Kernel::Rbf(0.9)] {
        let (_, gx, gy) = mmd_with_grad(x.view(), y.view(), kernel).unwrap();
        let eps = 1e-6;
        for (which, g) in [(0, &gx), (1, &gy)] {
            for ((i, j), &analytic) in g.indexed_iter() {
                let probe = |delta: f64| {
                    let (mut a, mut b) = (x.clone(), y.clone());
                    if which == 0 {
                        a[[i, j]] += delta;
                    } else {
                        b[[i, j]] += delta;
                    }
                    mmd(a.view(), b.view(), kernel).unwrap()
                };
                let fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
                assert!((fd - analytic).abs() < 1e-7, "{kernel:?} {which} {i},{j}: {fd} vs {analytic}");
            }
        }
    }
}

#[test]
fn train_source_separable_reaches_high_auc() {
    let train = synth_gaussian(2000, 4, 6.0, 1).unwrap();
    let test = synth_gaussian(1000, 4, 6.0, 2).unwrap();
    let spec = MlpSpec::new(4, vec![16, 8]).unwrap();
    let run = train_source(&train, Some(&test), &spec, &cfg(10, 64, OptimizerConfig::default(), 3)).unwrap();
    let (_, auc) = evaluate(&run.model, &test).unwrap();
    assert!(auc.unwrap() > 0.95, "auc {auc:?}");
    assert_eq!(run.history.len(), 10);
    assert!(matches!(run.trace, LeakageTrace::ModelArtifact(ref m) if *m == run.model));
}

#[test]
fn train_source_without_signal_stays_at_chance() {
    let train = synth_gaussian(2000, 4, 0.0, 1).unwrap();
    let test = synth_gaussian(2000, 4, 0.0, 2).unwrap();
    let spec = MlpSpec::new(4, vec![16, 8]).unwrap();
    let run = train_source(&train, None, &spec, &cfg(5, 64, OptimizerConfig::default(), 3)).unwrap();
    let auc = evaluate(&run.model, &test).unwrap().1.unwrap();
    assert!((auc - 0.5).abs() <= 0.05, "auc {auc}");
}

#[test]
fn train_source_is_deterministic() {
    let train = synth_gaussian(300, 3, 2.0, 1).unwrap();
    let spec = MlpSpec::new(3, vec![8, 4]).unwrap().with_dropout(0.3).unwrap();
    let c = cfg(3, 32, OptimizerConfig::default(), 9);
    let a = train_source(&train, None, &spec, &c).unwrap();
    let b = train_source(&train, None, &spec, &c).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
}

// Small noisy train set: the train−test accuracy gap opens up with training.
#[test]
fn overfitting_gap_grows_with_epochs() {
    let train = synth_gaussian(100, 10, 1.0, 4).unwrap();
    let test = synth_gaussian(2000, 10, 1.0, 5).unwrap();
    let spec = MlpSpec::new(10, vec![64, 8]).unwrap();
    let run = train_source(&train, Some(&test), &spec, &cfg(200, 16, OptimizerConfig::default(), 6)).unwrap();
    let gap = |e: &EpochMetrics| e.train_acc - e.test_acc.unwrap();
    let early = gap(&run.history[0]);
    let late = gap(run.history.last().unwrap());
    assert!(late > early + 0.1, "gap {early} -> {late}");
}

#[test]
fn fine_tune_zero_epochs_is_identity() {
    let (src, tgt) = synth_domain_pair(200, 50, 3, 0.5, 1).unwrap();
    let spec = MlpSpec::new(3, vec![8]).unwrap();
    let run = train_source(&src, None, &spec, &cfg(2, 32, OptimizerConfig::default(), 1)).unwrap();
    let (tuned, history) = fine_tune(&run.model, &tgt, None, &cfg(0, 32, OptimizerConfig::default(), 1)).unwrap();
    assert_eq!(tuned, run.model);
    assert!(history.is_empty());
    let wide = synth_gaussian(10, 4, 1.0, 1).unwrap();
    assert!(fine_tune(&run.model, &wide, None, &cfg(1, 4, OptimizerConfig::default(), 1)).is_err());
}

// Paired runs on domains that share a labeling rule: starting from the source
// model never loses to a fresh start with the same small target budget.
#[test]
fn fine_tuning_beats_scratch_on_shared_structure() {
    let spec = MlpSpec::new(8, vec![32, 8]).unwrap();
    let mut wins = 0;
    for seed in 1..=5 {
        let (src, tgt) = synth_domain_pair(4000, 1040, 8, 0.5, seed).unwrap();
        let tgt_train = tgt.subset(&(0..40).collect::<Vec<_>>());
        let tgt_test = tgt.subset(&(40..1040).collect::<Vec<_>>());
        let pre = train_source(&src, None, &spec, &cfg(10, 64, OptimizerConfig::default(), seed)).unwrap();
        let budget = cfg(5, 8, OptimizerConfig::default(), seed);
        let (tuned, _) = fine_tune(&pre.model, &tgt_train, None, &budget).unwrap();
        let (scratch, _) = train_from_scratch(&tgt_train, None, &spec, &budget, "scratch").unwrap();
        let a = evaluate(&tuned, &tgt_test).unwrap().1.unwrap();
        let b = evaluate(&scratch, &tgt_test).unwrap().1.unwrap();
        if a >= b {
            wins += 1;
        }
    }
    assert_eq!(wins, 5);
}

#[test]
fn mapping_trace_bookkeeping() {
    let src = synth_with_property(300, 4, 2.0, 2.0, 1).unwrap();
    let (_, tgt) = synth_domain_pair(10, 130, 4, 0.5, 1).unwrap();
    let spec = MlpSpec::new(4, vec![8, 3]).unwrap();
    let c = TrainConfig { epochs: 3, batch_size: 32, seed: 4, ..TrainConfig::default() };
    let run = cotrain_mapping(&src, &tgt, &spec, &spec, &c, Some(5)).unwrap();
    // 130 / 32 = 4 target batches bound the epoch
    assert_eq!(run.iterations_per_epoch, 4);
    assert_eq!(run.trace.len(), 12);
    assert_eq!(run.mmd.len(), 12);
    assert_eq!(run.trace.width(), 3);
    assert_eq!(run.alignment_layer, 1);
    for (pos, rec) in run.trace.observed().iter().enumerate() {
        assert_eq!(rec.iteration, pos);
        assert_eq!(rec.source_hidden.dim(), (32, 3));
        assert_eq!(rec.target_hidden.dim(), (32, 3));
        assert_eq!(run.trace.ground_truth(pos).len(), 32);
    }
    assert_eq!(run.target_snapshot.as_ref().map(|s| s.0), Some(5));
    assert_eq!(run.trace.position(7), Some(7));
    assert_eq!(run.trace.position(12), None);
}

#[test]
fn mapping_rejects_width_mismatch() {
    let (src, tgt) = synth_domain_pair(100, 100, 4, 0.5, 1).unwrap();
    let a = MlpSpec::new(4, vec![8, 3]).unwrap();
    let b = MlpSpec::new(4, vec![8, 4]).unwrap();
    let c = TrainConfig { epochs: 1, batch_size: 16, ..TrainConfig::default() };
    assert!(matches!(cotrain_mapping(&src, &tgt, &a, &b, &c, None), Err(Error::Shape { .. })));
}

// With λ = 0 the source network never sees the target batch, so swapping in
// different target data of the same size leaves it bitwise unchanged.
#[test]
fn mapping_without_alignment_decouples_the_networks() {
    let (src, tgt) = synth_domain_pair(200, 200, 4, 0.5, 1).unwrap();
    let (_, other) = synth_domain_pair(10, 200, 4, 3.0, 99).unwrap();
    let spec = MlpSpec::new(4, vec![8, 3]).unwrap();
    let c = TrainConfig { epochs: 2, batch_size: 16, mmd_weight: 0.0, seed: 2, ..TrainConfig::default() };
    let a = cotrain_mapping(&src, &tgt, &spec, &spec, &c, None).unwrap();
    let b = cotrain_mapping(&src, &other, &spec, &spec, &c, None).unwrap();
    assert_eq!(a.source_model, b.source_model);
    assert_ne!(a.target_model, b.target_model);
    let aligned = TrainConfig { mmd_weight: 1.0, ..c };
    let d = cotrain_mapping(&src, &tgt, &spec, &spec, &aligned, None).unwrap();
    assert_ne!(a.source_model, d.source_model);
}

#[test]
fn shared_init_starts_both_networks_equal() {
    let (src, tgt) = synth_domain_pair(64, 64, 4, 0.5, 1).unwrap();
    let spec = MlpSpec::new(4, vec![8, 3]).unwrap();
    let c = TrainConfig { epochs: 1, batch_size: 16, shared_init: true, seed: 2, ..TrainConfig::default() };
    let run = cotrain_mapping(&src, &tgt, &spec, &spec, &c, Some(0)).unwrap();
    let shared = Mlp::init(&spec, seed::derive(2, "mapping-source-init", 0));
    assert_eq!(run.target_snapshot.unwrap().1, shared);
}

// Strong alignment pressure pulls the exchanged feature batches together.
#[test]
fn heavy_alignment_shrinks_mmd() {
    let spec = MlpSpec::new(6, vec![16, 4]).unwrap();
    let mut shrunk = 0;
    for seed in 1..=5 {
        let (src, tgt) = synth_domain_pair(1280, 1280, 6, 2.0, seed).unwrap();
        let c = TrainConfig {
            epochs: 5,
            batch_size: 64,
            mmd_weight: 100.0,
            seed,
            ..TrainConfig::default()
        };
        let run = cotrain_mapping(&src, &tgt, &spec, &spec, &c, None).unwrap();
        let head: f64 = run.mmd[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = run.mmd[run.mmd.len() - 10..].iter().sum::<f64>() / 10.0;
        if tail < head {
            shrunk += 1;
        }
    }
    assert_eq!(shrunk, 5);
}

fn parameter_fixture() -> (crate::data::LabeledDataset, crate::data::LabeledDataset, Vec<bool>) {
    let (src, tgt) = synth_domain_pair(120, 90, 4, 0.5, 7).unwrap();
    let marks = (0..src.len()).map(|i| i % 11 == 0).collect();
    (src, tgt, marks)
}

#[test]
fn parameter_trace_alternates_and_counts() {
    let (src, tgt, marks) = parameter_fixture();
    let spec = MlpSpec::new(4, vec![6, 3]).unwrap();
    let c = cfg(2, 8, sgd(0.05), 3);
    let run = cotrain_parameter(&src, &tgt, &spec, &c, Some(&marks)).unwrap();
    assert_eq!(run.pairs_per_epoch, 11);
    assert_eq!(run.trace.len(), 2 * 2 * 11);
    for (pos, rec) in run.trace.observed().iter().enumerate() {
        assert_eq!(rec.iteration, pos);
        let expected = if pos % 2 == 0 { Domain::Source } else { Domain::Target };
        assert_eq!(rec.domain, expected);
        let truth = run.trace.ground_truth(pos);
        assert_eq!(truth.batch_rows.len(), 8);
        match rec.domain {
            Domain::Source => {
                let label = u8::from(truth.batch_rows.iter().any(|&r| marks[r]));
                assert_eq!(truth.batch_label, Some(label));
            }
            Domain::Target => assert_eq!(truth.batch_label, None),
        }
    }
    assert_eq!(run.trace.observed().last().unwrap().params, run.model.flatten());
    assert_eq!(run.trace.initial(), Mlp::init(&spec, seed::derive(3, "parameter-init", 0)).flatten());
}

#[test]
fn parameter_rejects_dimension_mismatch() {
    let (src, _, _) = parameter_fixture();
    let other = synth_gaussian(50, 5, 1.0, 1).unwrap();
    let spec = MlpSpec::new(4, vec![4]).unwrap();
    assert!(cotrain_parameter(&src, &other, &spec, &cfg(1, 8, sgd(0.1), 1), None).is_err());
    assert!(cotrain_parameter(&src, &src, &spec, &cfg(1, 8, sgd(0.1), 1), Some(&[true])).is_err());
}

fn assert_replays(optimizer: OptimizerConfig, dropout: f64) {
    let (src, tgt, marks) = parameter_fixture();
    let spec = MlpSpec::new(4, vec![6, 3]).unwrap().with_dropout(dropout).unwrap();
    let run = cotrain_parameter(&src, &tgt, &spec, &cfg(1, 8, optimizer, 5), Some(&marks)).unwrap();
    for pos in 0..run.trace.len() {
        let data = if pos % 2 == 0 { &src } else { &tgt };
        let replayed = replay_update(&run.trace, pos, data, &optimizer).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&replayed), bits(&run.trace.observed()[pos].params), "record {pos}");
    }
}

#[test]
fn parameter_trace_replays_bitwise() {
    assert_replays(sgd(0.05), 0.0);
    assert_replays(sgd(0.05), 0.5);
    assert_replays(OptimizerConfig::Sgld(SgldConfig { lr: 0.05, temperature: 0.01 }), 0.0);
    assert_replays(
        OptimizerConfig::DpSgd(DpSgdConfig { lr: 0.05, clip_norm: 1.0, noise_multiplier: 1.0 }),
        0.0,
    );
}

#[test]
fn adam_updates_are_not_replayable() {
    let (src, tgt, _) = parameter_fixture();
    let spec = MlpSpec::new(4, vec![4]).unwrap();
    let run = cotrain_parameter(&src, &tgt, &spec, &cfg(1, 8, OptimizerConfig::default(), 5), None).unwrap();
    assert!(replay_update(&run.trace, 0, &src, &OptimizerConfig::default()).is_err());
}

#[test]
fn trace_files_round_trip() {
    let (src, tgt, marks) = parameter_fixture();
    let spec = MlpSpec::new(4, vec![6, 3]).unwrap();
    let run = cotrain_parameter(&src, &tgt, &spec, &cfg(1, 8, sgd(0.05), 5), Some(&marks)).unwrap();
    let mut buf = Vec::new();
    write_param_trace(&run.trace, &mut buf).unwrap();
    let back = read_param_trace(buf.as_slice()).unwrap();
    assert_eq!(back.observed(), run.trace.observed());
    assert_eq!(back.initial(), run.trace.initial());
    assert_eq!(back.spec(), run.trace.spec());

    let c = TrainConfig { epochs: 1, batch_size: 16, seed: 1, ..TrainConfig::default() };
    let map = cotrain_mapping(&src, &tgt, &spec, &spec, &c, None).unwrap();
    let mut buf = Vec::new();
    write_feature_trace(&map.trace, &mut buf).unwrap();
    let back = read_feature_trace(buf.as_slice()).unwrap();
    assert_eq!(back.observed(), map.trace.observed());
    assert_eq!(back.width(), map.trace.width());
}

#[test]
fn train_config_validation() {
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { mmd_weight: -1.0, ..TrainConfig::default() }.validate().is_err());
    let spec = MlpSpec::new(3, vec![4, 2]).unwrap();
    assert_eq!(TrainConfig::default().alignment_layer_for(&spec).unwrap(), 1);
    let bad = TrainConfig { alignment_layer: Some(2), ..TrainConfig::default() };
    assert!(bad.alignment_layer_for(&spec).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mmd_symmetric_and_nonnegative(
        seed in any::<u64>(),
        n in 1usize..12,
        m in 1usize..12,
        shift in -2.0f64..2.0,
        bw in 0.2f64..3.0,
    ) {
        let x = blob(n, 3, 0.0, seed);
        let y = blob(m, 3, shift, seed ^ 7);
        for k in [Kernel::Linear, Kernel::Rbf(bw)] {
            let xy = mmd(x.view(), y.view(), k).unwrap();
            let yx = mmd(y.view(), x.view(), k).unwrap();
            prop_assert!((xy - yx).abs() <= 1e-12);
            prop_assert!(xy >= -1e-12);
        }
        let oracle = mmd_oracle(&x, &y, rbf(bw));
        prop_assert!((mmd(x.view(), y.view(), Kernel::Rbf(bw)).unwrap() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn sgd_parameter_trace_replays(seed in any::<u64>(), lr in 0.001f64..0.2) {
        let (src, tgt, _) = parameter_fixture();
        let spec = MlpSpec::new(4, vec![3]).unwrap();
        let opt = sgd(lr);
        let run = cotrain_parameter(&src, &tgt, &spec, &cfg(1, 8, opt, seed), None).unwrap();
        for pos in [0, 1, run.trace.len() - 1] {
            let data = if pos % 2 == 0 { &src } else { &tgt };
            prop_assert_eq!(
                replay_update(&run.trace, pos, data, &opt).unwrap(),
                run.trace.observed()[pos].params.clone()
            );
        }
    }
}

#[test]
fn param_layers_flatten_matches_param_count() {
    let spec = MlpSpec::new(5, vec![7, 3]).unwrap();
    let m = Mlp::init(&spec, 1);
    assert_eq!(m.flatten().len(), spec.param_count());
    assert_eq!(m.param_count(), 5 * 7 + 7 + 7 * 3 + 3 + 3 + 1);
}
