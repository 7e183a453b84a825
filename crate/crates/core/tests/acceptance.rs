//! Acceptance run on the vendored Adult data: one PASS/FAIL line per
//! criterion, every tolerance pinned below.
//!
//! Criteria listed in `KNOWN_FAILURES` are evaluated and reported exactly
//! like the others; the target only exits non-zero when the outcome set
//! differs from that list (a new failure, or a known failure that starts
//! passing and should be taken off it).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use leaklab_core::data::{self, MissingPolicy};
use leaklab_core::metrics::{median_iqr, pearson, Measure};
use leaklab_core::runner::{self, ExperimentConfig, ExperimentReport};
use leaklab_core::selftest;

const PEARSON_SEX: f64 = -0.2146;
const PEARSON_RACE: f64 = -0.0837;
const PEARSON_TOL: f64 = 0.02;
const PEARSON_BUDGET: Duration = Duration::from_secs(5);

const MAP_SEX_TASK_AUC: f64 = 0.8650;
const MAP_SEX_TASK_TOL: f64 = 0.03;
const MAP_SEX_ATTACK_AUC: f64 = 0.7766;
const MAP_SEX_ATTACK_TOL: f64 = 0.06;
const MAP_RACE_ATTACK_AUC: f64 = 0.5885;
const MAP_RACE_ATTACK_TOL: f64 = 0.05;
const MAP_RACE_PRECISION_GAP: f64 = 0.3;
const MAPPING_BUDGET: Duration = Duration::from_secs(600);

const BPROP_SEX_AUC: f64 = 0.5654;
const BPROP_RACE_AUC: f64 = 0.5545;
const BPROP_TOL: f64 = 0.05;

const SGLD_MIN_ATTACK_DROP: f64 = 0.05;
const SGLD_MAX_TASK_SHIFT: f64 = 0.02;
const DPSGD_MIN_TASK_DROP: f64 = 0.05;
const DROPOUT_BAND: (f64, f64) = (0.48, 0.58);

const OVERFIT_MIN_GAP: f64 = 0.08;
const OVERFIT_MIN_ATTACK: f64 = 0.60;
const FIT_MAX_GAP: f64 = 0.02;
const FIT_MAX_ATTACK: f64 = 0.58;

/// Criteria that fail on this data; the reasons are in the decisions ledger.
const KNOWN_FAILURES: [u32; 4] = [2, 3, 4, 5];

struct Outcome {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_path(root().join("configs").join(format!("{name}.toml")))
        .unwrap_or_else(|e| panic!("config {name}: {e}"));
    cfg.resolve_paths(&root());
    cfg
}

/// Seed-median results of one config.
struct Cell {
    reports: Vec<ExperimentReport>,
    elapsed: Duration,
}

impl Cell {
    fn run(name: &str) -> Cell {
        let started = Instant::now();
        let reports = runner::run_replicates(&config(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        Cell {
            reports,
            elapsed: started.elapsed(),
        }
    }

    fn median(&self, get: impl Fn(&ExperimentReport) -> Measure) -> f64 {
        let values: Vec<f64> = self.reports.iter().filter_map(|r| get(r).value()).collect();
        if values.len() < self.reports.len() {
            return f64::NAN;
        }
        median_iqr(&values).map_or(f64::NAN, |(m, _)| m)
    }

    fn task_auc(&self) -> f64 {
        self.median(|r| r.task.test_auc)
    }

    fn attack_auc(&self) -> f64 {
        self.median(|r| r.attack.auc)
    }

    fn gap(&self) -> f64 {
        self.median(|r| r.details.train_test_gap.map_or(Measure::Undefined, Measure::Value))
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn in_band(value: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&value)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let raw = data::load_adult_with(
        root().join("data/adult/adult.data"),
        root().join("data/adult/adult.test"),
        MissingPolicy::KeepAsCategory,
    )
    .expect("vendored Adult files");
    let pair = data::split_domains(&raw, &[]).expect("domain split");
    let records = pair.source.train.records();
    let income: Vec<f64> = records.iter().map(|r| f64::from(u8::from(r.high_income()))).collect();
    let indicator = |attr: &str, value: &str| -> Vec<f64> {
        records.iter().map(|r| f64::from(u8::from(r.get(attr) != Some(value)))).collect()
    };
    // income vs the complementary indicators female / non-white
    let sex = pearson(&income, &indicator("sex", "Male")).expect("defined");
    let race = pearson(&income, &indicator("race", "White")).expect("defined");
    let elapsed = started.elapsed();
    Outcome {
        id: 1,
        title: "Pearson income vs property on the source domain",
        passed: within(sex, PEARSON_SEX, PEARSON_TOL)
            && within(race, PEARSON_RACE, PEARSON_TOL)
            && elapsed < PEARSON_BUDGET,
        detail: format!(
            "sex {sex:.4} (want {PEARSON_SEX} ± {PEARSON_TOL}), race {race:.4} (want {PEARSON_RACE} ± {PEARSON_TOL}), {:.2}s (< {}s)",
            elapsed.as_secs_f64(),
            PEARSON_BUDGET.as_secs()
        ),
    }
}

fn criterion_2(sex: &Cell) -> Outcome {
    let (task, attack) = (sex.task_auc(), sex.attack_auc());
    Outcome {
        id: 2,
        title: "mapping Prop-sex, 10 epochs",
        passed: within(task, MAP_SEX_TASK_AUC, MAP_SEX_TASK_TOL)
            && within(attack, MAP_SEX_ATTACK_AUC, MAP_SEX_ATTACK_TOL)
            && sex.elapsed < MAPPING_BUDGET,
        detail: format!(
            "task AUC {task:.4} (want {MAP_SEX_TASK_AUC} ± {MAP_SEX_TASK_TOL}), attack AUC {attack:.4} (want {MAP_SEX_ATTACK_AUC} ± {MAP_SEX_ATTACK_TOL}), {:.0}s",
            sex.elapsed.as_secs_f64()
        ),
    }
}

fn criterion_3(race: &Cell) -> Outcome {
    let attack = race.attack_auc();
    let white = race.median(|r| r.attack.precision_positive);
    let non_white = race.median(|r| r.attack.precision_negative);
    Outcome {
        id: 3,
        title: "mapping Prop-race, 10 epochs",
        passed: within(attack, MAP_RACE_ATTACK_AUC, MAP_RACE_ATTACK_TOL)
            && white - non_white >= MAP_RACE_PRECISION_GAP
            && race.elapsed < MAPPING_BUDGET,
        detail: format!(
            "attack AUC {attack:.4} (want {MAP_RACE_ATTACK_AUC} ± {MAP_RACE_ATTACK_TOL}), precision white {white:.4} vs non-white {non_white:.4} (gap >= {MAP_RACE_PRECISION_GAP}), {:.0}s",
            race.elapsed.as_secs_f64()
        ),
    }
}

fn criterion_4(map_sex: &Cell, map_race: &Cell, bsex: &Cell, brace: &Cell) -> Outcome {
    let (s, r) = (bsex.attack_auc(), brace.attack_auc());
    let (ms, mr) = (map_sex.attack_auc(), map_race.attack_auc());
    // the ordering is checked per property: Prop-sex vs BProp-sex, Prop-race vs BProp-race
    let mark = |ok: bool| if ok { "ok" } else { "miss" };
    Outcome {
        id: 4,
        title: "parameter BProp-sex / BProp-race, mapping > parameter",
        passed: within(s, BPROP_SEX_AUC, BPROP_TOL) && within(r, BPROP_RACE_AUC, BPROP_TOL) && ms > s && mr > r,
        detail: format!(
            "BProp-sex {s:.4} (want {BPROP_SEX_AUC} ± {BPROP_TOL}), BProp-race {r:.4} (want {BPROP_RACE_AUC} ± {BPROP_TOL}), mapping over parameter: sex {ms:.4} vs {s:.4} [{}], race {mr:.4} vs {r:.4} [{}]",
            mark(ms > s),
            mark(mr > r)
        ),
    }
}

fn criterion_5(base: &Cell, sgld: &Cell, dp: &Cell, dropout: &Cell) -> Outcome {
    let (bt, ba) = (base.task_auc(), base.attack_auc());
    let (st, sa) = (sgld.task_auc(), sgld.attack_auc());
    let (dt, da) = (dp.task_auc(), dp.attack_auc());
    let (ot, oa) = (dropout.task_auc(), dropout.attack_auc());
    let sgld_ok = ba - sa >= SGLD_MIN_ATTACK_DROP && (st - bt).abs() <= SGLD_MAX_TASK_SHIFT;
    let dp_ok = da <= sa && bt - dt >= DPSGD_MIN_TASK_DROP;
    let dropout_ok = in_band(ot, DROPOUT_BAND) && in_band(oa, DROPOUT_BAND);
    let mark = |ok: bool| if ok { "ok" } else { "miss" };
    Outcome {
        id: 5,
        title: "defense trade-off, mapping Prop-sex",
        passed: sgld_ok && dp_ok && dropout_ok,
        detail: format!(
            "baseline task {bt:.4} attack {ba:.4}; sgld task {st:.4} attack {sa:.4} [{}]; dp-sgd task {dt:.4} attack {da:.4} [{}]; dropout-0.9 task {ot:.4} attack {oa:.4} in {DROPOUT_BAND:?} [{}]",
            mark(sgld_ok),
            mark(dp_ok),
            mark(dropout_ok)
        ),
    }
}

fn criterion_6(overfit: &Cell, fit: &Cell) -> Outcome {
    let (og, oa) = (overfit.gap(), overfit.attack_auc());
    let (fg, fa) = (fit.gap(), fit.attack_auc());
    Outcome {
        id: 6,
        title: "membership vs overfitting, model-based",
        passed: og >= OVERFIT_MIN_GAP && oa > OVERFIT_MIN_ATTACK && fg <= FIT_MAX_GAP && fa < FIT_MAX_ATTACK,
        detail: format!(
            "overfit gap {og:.4} (>= {OVERFIT_MIN_GAP}) attack {oa:.4} (> {OVERFIT_MIN_ATTACK}); fit gap {fg:.4} (<= {FIT_MAX_GAP}) attack {fa:.4} (< {FIT_MAX_ATTACK})"
        ),
    }
}

/// Built-in invariant checks plus a bitwise rerun from a persisted config.
fn criterion_7(sex: &Cell) -> Outcome {
    let checks = selftest::run_all(1).expect("selftest fixtures");
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();

    let first = &sex.reports[0];
    let dir = std::env::temp_dir().join(format!("leaklab-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("persisted.toml");
    std::fs::write(&path, first.config.to_toml().expect("serializable")).expect("write config");
    let reloaded = ExperimentConfig::from_path(&path).expect("persisted config parses");
    let rerun = runner::run_experiment(&reloaded, first.seed).expect("rerun");
    std::fs::remove_dir_all(&dir).ok();
    let line = first.to_json_line().expect("json");
    let from_line = ExperimentReport::from_json_line(&line).expect("json round trip");
    let bitwise = rerun.without_timing() == first.without_timing() && from_line == *first;

    Outcome {
        id: 7,
        title: "invariant suites and reproducibility",
        passed: failed.is_empty() && bitwise,
        detail: format!(
            "{} selftest checks, failed {failed:?}; persisted config + seed {} rerun bitwise equal: {bitwise}",
            checks.len(),
            first.seed
        ),
    }
}

fn main() -> ExitCode {
    let c1 = criterion_1();
    let map_sex = Cell::run("mapping_prop_sex");
    let map_race = Cell::run("mapping_prop_race");
    let bsex = Cell::run("parameter_bprop_sex");
    let brace = Cell::run("parameter_bprop_race");
    let sgld = Cell::run("defense_sgld");
    let dp = Cell::run("defense_dpsgd");
    let dropout = Cell::run("defense_dropout");
    let overfit = Cell::run("model_membership_overfit");
    let fit = Cell::run("model_membership_fit");

    let outcomes = [
        c1,
        criterion_2(&map_sex),
        criterion_3(&map_race),
        criterion_4(&map_sex, &map_race, &bsex, &brace),
        criterion_5(&map_sex, &sgld, &dp, &dropout),
        criterion_6(&overfit, &fit),
        criterion_7(&map_sex),
    ];

    let mut unexpected = Vec::new();
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        let known = KNOWN_FAILURES.contains(&o.id);
        let note = match (o.passed, known) {
            (false, true) => "  [known failure]",
            (true, true) => "  [listed as known failure]",
            _ => "",
        };
        println!("{status}  criterion {}: {}: {}{note}", o.id, o.title, o.detail);
        if o.passed == known {
            unexpected.push(o.id);
        }
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("acceptance: {passed}/{} criteria passed", outcomes.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("outcome differs from KNOWN_FAILURES for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
