use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use leaklab_core::data::{self, MissingPolicy};
use leaklab_core::runner::{self, ExperimentConfig};
use leaklab_core::{selftest, Error};

#[derive(Parser)]
#[command(name = "leaklab", version, about = "Transfer-learning leakage experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode the Adult files into per-domain dataset caches.
    PrepareData {
        train: PathBuf,
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep rows with missing values, treating `?` as a category.
        #[arg(long)]
        keep_missing: bool,
    },
    /// Run an experiment config and append one report per seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a results file as median ± IQR per group.
    Report {
        results: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "name")]
        group_by: Vec<String>,
    },
    /// Run the built-in invariant checks.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<Error>().map_or(4, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::PrepareData {
            train,
            test,
            out,
            keep_missing,
        } => prepare(&train, &test, &out, keep_missing),
        Command::Run {
            config,
            seed,
            replicates,
            out,
        } => run(&config, seed, replicates, &out),
        Command::Report { results, group_by } => {
            let text = fs::read_to_string(&results)
                .map_err(|e| Error::Data(format!("cannot read {}: {e}", results.display())))?;
            let records = runner::read_reports(&text)?;
            let keys: Vec<&str> = group_by.iter().map(String::as_str).collect();
            print!("{}", runner::report(&records, &keys)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { seed } => {
            let checks = selftest::run_all(seed)?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                println!("{status}  {}  {}", c.name, c.detail);
            }
            println!("{} checks, {failed} failed", checks.len());
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            })
        }
    }
}

fn prepare(train: &Path, test: &Path, out: &Path, keep_missing: bool) -> anyhow::Result<ExitCode> {
    let policy = if keep_missing {
        MissingPolicy::KeepAsCategory
    } else {
        MissingPolicy::Drop
    };
    let raw = data::load_adult_with(train, test, policy)?;
    let pair = data::split_domains(&raw, &[])?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let parts = [
        ("source_train", &pair.source.train),
        ("source_test", &pair.source.test),
        ("target_train", &pair.target.train),
        ("target_test", &pair.target.test),
    ];
    for (name, ds) in parts {
        let path = out.join(format!("{name}.txt"));
        let file = File::create(&path).map_err(Error::Io)?;
        data::write_dataset(ds, BufWriter::new(file))?;
        println!("{name}: {} rows x {} features -> {}", ds.len(), ds.dim(), path.display());
    }
    let manifest: Vec<String> = pair
        .source
        .train
        .columns()
        .iter()
        .map(|c| format!("{}\t{}", c.name, c.attribute))
        .collect();
    fs::write(out.join("features.tsv"), manifest.join("\n") + "\n").map_err(Error::Io)?;
    println!(
        "{} rows kept, {} incomplete rows dropped",
        raw.records().len(),
        raw.dropped_incomplete()
    );
    Ok(ExitCode::SUCCESS)
}

fn run(
    config: &Path,
    seed: Option<u64>,
    replicates: Option<usize>,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    let raw = runner::load_dataset(&cfg)?;
    let mut sink = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .map_err(Error::Io)?;
    for i in 0..cfg.replicates as u64 {
        let report = runner::run_experiment_on(&raw, &cfg, cfg.seed + i)?;
        writeln!(sink, "{}", report.to_json_line()?).map_err(Error::Io)?;
        sink.flush().map_err(Error::Io)?;
        eprintln!(
            "seed {}: task AUC {} attack AUC {} ({:.1}s)",
            report.seed, report.task.test_auc, report.attack.auc, report.wall_clock_secs
        );
    }
    Ok(ExitCode::SUCCESS)
}
