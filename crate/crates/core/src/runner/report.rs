use std::collections::BTreeMap;

use super::experiment::ExperimentReport;
use crate::error::{Error, Result};
use crate::metrics::{median_iqr, Measure};

/// Cell text for a metric present in only some records of a group.
pub const GAP_MARKER: &str = "gap";

type Metric = fn(&ExperimentReport) -> Measure;

const METRICS: [(&str, Metric); 6] = [
    ("task_auc", |r| r.task.test_auc),
    ("task_acc", |r| Measure::Value(r.task.test_acc)),
    ("attack_auc", |r| r.attack.auc),
    ("attack_acc", |r| Measure::Value(r.attack.accuracy)),
    ("prec_pos", |r| r.attack.precision_positive),
    ("prec_neg", |r| r.attack.precision_negative),
];

/// Renders `median ± IQR` over the records of each group. Cells show
/// `undefined` when no record defines the metric and [`GAP_MARKER`] when
/// only some do.
pub fn report(records: &[ExperimentReport], group_by: &[&str]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Data("no records to report".into()));
    }
    let mut groups: BTreeMap<Vec<String>, Vec<&ExperimentReport>> = BTreeMap::new();
    for r in records {
        let key = group_by
            .iter()
            .map(|k| {
                r.config
                    .group_value(k)
                    .ok_or_else(|| Error::Config(format!("unknown group-by key {k:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        groups.entry(key).or_default().push(r);
    }

    let mut header: Vec<String> = group_by.iter().map(|k| k.to_string()).collect();
    header.push("n".into());
    header.extend(METRICS.iter().map(|(name, _)| name.to_string()));
    let mut rows = vec![header];
    for (key, members) in &groups {
        let mut row = key.clone();
        row.push(members.len().to_string());
        for (_, get) in METRICS {
            row.push(cell(members.iter().map(|r| get(r))));
        }
        rows.push(row);
    }
    Ok(render(&rows))
}

fn cell(values: impl Iterator<Item = Measure>) -> String {
    let all: Vec<Measure> = values.collect();
    let defined: Vec<f64> = all.iter().filter_map(|m| m.value()).collect();
    if defined.is_empty() {
        return "undefined".into();
    }
    if defined.len() < all.len() {
        return format!("{GAP_MARKER}({}/{})", defined.len(), all.len());
    }
    let (median, iqr) = median_iqr(&defined).expect("non-empty");
    format!("{median:.4} ± {iqr:.4}")
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(v, &w)| format!("{v:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}

/// Reads a JSON-lines results file, skipping blank lines.
pub fn read_reports(text: &str) -> Result<Vec<ExperimentReport>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(ExperimentReport::from_json_line)
        .collect()
}
