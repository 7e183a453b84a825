//! Adult-shaped synthetic rows for crate-internal tests.

use std::fmt::Write;
use std::path::Path;

use rand::Rng;

use super::adult::parse_text;
use super::{MissingPolicy, RawDataset, SourceFile};
use crate::seed;

fn pick<'a>(rng: &mut impl Rng, weighted: &[(&'a str, f64)]) -> &'a str {
    let mut u: f64 = rng.random();
    for (v, w) in weighted {
        if u < *w {
            return v;
        }
        u -= w;
    }
    weighted.last().expect("non-empty").0
}

fn rows(n: usize, seed: u64, stream: &str, test_file: bool) -> String {
    let mut rng = seed::rng_for(seed, stream, 0);
    let mut out = String::new();
    for _ in 0..n {
        let age: u32 = rng.random_range(18..70);
        let edu = pick(&mut rng, &[("HS-grad", 0.4), ("Some-college", 0.25), ("Bachelors", 0.25), ("Masters", 0.1)]);
        let edu_num = match edu {
            "HS-grad" => 9,
            "Some-college" => 10,
            "Bachelors" => 13,
            _ => 14,
        };
        let sex = pick(&mut rng, &[("Male", 0.67), ("Female", 0.33)]);
        let race = pick(&mut rng, &[("White", 0.8), ("Black", 0.12), ("Asian-Pac-Islander", 0.08)]);
        let country = pick(&mut rng, &[("United-States", 0.8), ("Mexico", 0.1), ("India", 0.1)]);
        let work = pick(&mut rng, &[("Private", 0.7), ("Self-emp-not-inc", 0.15), ("Local-gov", 0.15)]);
        let marital = pick(&mut rng, &[("Married-civ-spouse", 0.5), ("Never-married", 0.35), ("Divorced", 0.15)]);
        let occupation = pick(&mut rng, &[("Exec-managerial", 0.3), ("Craft-repair", 0.4), ("Other-service", 0.3)]);
        let relationship = match (marital, sex) {
            ("Married-civ-spouse", "Male") => "Husband",
            ("Married-civ-spouse", _) => "Wife",
            _ => "Not-in-family",
        };
        let hours: u32 = rng.random_range(20..60);
        let z = -6.0
            + 0.04 * f64::from(age)
            + 0.3 * f64::from(edu_num)
            + if sex == "Male" { 0.8 } else { 0.0 }
            + if marital == "Married-civ-spouse" { 1.0 } else { 0.0 }
            + 0.02 * f64::from(hours);
        let high = rng.random::<f64>() < 1.0 / (1.0 + (-z).exp());
        let gain = if high && rng.random_bool(0.2) { 5178 } else { 0 };
        let label = match (high, test_file) {
            (true, false) => ">50K",
            (false, false) => "<=50K",
            (true, true) => ">50K.",
            (false, true) => "<=50K.",
        };
        let fnlwgt: u32 = rng.random_range(20_000..400_000);
        writeln!(
            out,
            "{age}, {work}, {fnlwgt}, {edu}, {edu_num}, {marital}, {occupation}, {relationship}, {race}, {sex}, {gain}, 0, {hours}, {country}, {label}"
        )
        .expect("write to string");
    }
    out
}

/// `n_train + n_test` complete rows with roughly 20% non-US and a task
/// label that depends on age, education, sex, marriage and hours.
pub(crate) fn adult_like(n_train: usize, n_test: usize, seed: u64) -> RawDataset {
    let mut records = parse_text(&rows(n_train, seed, "fixture-train", false), Path::new("adult.data"), SourceFile::Train)
        .expect("generated rows parse");
    records.extend(
        parse_text(&rows(n_test, seed, "fixture-test", true), Path::new("adult.test"), SourceFile::Test)
            .expect("generated rows parse"),
    );
    RawDataset::from_records(records, MissingPolicy::Drop)
}
