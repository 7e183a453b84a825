//! Checks against the vendored UCI-Adult files.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use leaklab_core::data::{self, MissingPolicy, RawDataset, SourceFile};
use leaklab_core::nn::MlpSpec;
use leaklab_core::optim::OptimizerConfig;
use leaklab_core::transfer::{self, TrainConfig};

fn adult(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/adult").join(name)
}

fn raw(policy: MissingPolicy) -> RawDataset {
    data::load_adult_with(adult("adult.data"), adult("adult.test"), policy).unwrap()
}

fn kept() -> &'static RawDataset {
    static RAW: OnceLock<RawDataset> = OnceLock::new();
    RAW.get_or_init(|| raw(MissingPolicy::KeepAsCategory))
}

/// Data lines of a file, counted independently of the parser.
fn line_count(name: &str) -> usize {
    std::fs::read_to_string(adult(name))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('|'))
        .count()
}

#[test]
fn raw_row_counts() {
    assert_eq!(line_count("adult.data"), 32_561);
    assert_eq!(line_count("adult.test"), 16_281);
    let all = kept();
    assert_eq!(all.len(), 48_842);
    let from_train = all.records().iter().filter(|r| r.provenance().file == SourceFile::Train).count();
    assert_eq!(from_train, 32_561);
}

#[test]
fn dropping_incomplete_rows_leaves_45222() {
    let dropped = raw(MissingPolicy::Drop);
    assert_eq!(dropped.len(), 45_222);
    assert_eq!(dropped.dropped_incomplete(), 48_842 - 45_222);
    assert!(dropped.records().iter().all(|r| r.is_complete()));
}

#[test]
fn domain_counts_with_missing_as_category() {
    let pair = data::split_domains(kept(), &[]).unwrap();
    assert_eq!(pair.source.train.len(), 29_170);
    assert_eq!(pair.source.test.len(), 14_662);
    assert_eq!(pair.target.train.len(), 3_391);
    assert_eq!(pair.target.test.len(), 1_619);
    assert_eq!(pair.source.train.dim(), pair.target.train.dim());
}

#[test]
fn domain_counts_after_dropping_stay_near_the_kept_split() {
    let pair = data::split_domains(&raw(MissingPolicy::Drop), &[]).unwrap();
    let n = pair.source.train.len() as f64;
    // dropped rows cost about 6% of the US train rows
    assert!((n / 29_170.0 - 1.0).abs() < 0.07, "{n}");
    let total = pair.source.train.len() + pair.source.test.len() + pair.target.train.len() + pair.target.test.len();
    assert_eq!(total, 45_222);
}

#[test]
fn high_income_rate() {
    let high = kept().records().iter().filter(|r| r.high_income()).count();
    assert_eq!(high, 11_687);
}

// Sharing the network with the source domain helps the target model.
#[test]
fn parameter_cotraining_beats_target_only() {
    let pair = data::split_domains(kept(), &[]).unwrap();
    let spec = MlpSpec::new(pair.source.train.dim(), vec![64, 8]).unwrap();
    let mut wins = 0;
    let mut log = Vec::new();
    for seed in 1..=5 {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            optimizer: OptimizerConfig::Sgd { lr: 0.01 },
            seed,
            ..TrainConfig::default()
        };
        let shared = transfer::cotrain_parameter(&pair.source.train, &pair.target.train, &spec, &cfg, None).unwrap();
        let (alone, _) = transfer::train_from_scratch(&pair.target.train, None, &spec, &cfg, "target-only").unwrap();
        let co = transfer::evaluate(&shared.model, &pair.target.test).unwrap().1.unwrap();
        let solo = transfer::evaluate(&alone, &pair.target.test).unwrap().1.unwrap();
        log.push((co, solo));
        wins += usize::from(co > solo);
    }
    assert!(wins >= 3, "co-training vs target-only AUCs: {log:?}");
}
