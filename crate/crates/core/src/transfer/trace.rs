//! Leakage traces and their record-file format.
//!
//! Each trace separates what crosses the domain boundary (the observed
//! records) from ground truth that only the evaluation harness may read.
//! Attack code is written against the observed records alone.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{fmt_f64, parse_floats, Mlp, MlpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// Alignment-layer features exchanged at one co-training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub iteration: usize,
    pub source_hidden: Array2<f64>,
    pub target_hidden: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrace {
    width: usize,
    records: Vec<FeatureRecord>,
    /// Property label of every source row in each record (harness only).
    truth: Vec<Vec<u8>>,
}

impl FeatureTrace {
    pub(crate) fn new(width: usize) -> Self {
        FeatureTrace {
            width,
            records: Vec::new(),
            truth: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, record: FeatureRecord, truth: Vec<u8>) -> Result<()> {
        for h in [&record.source_hidden, &record.target_hidden] {
            if h.ncols() != self.width {
                return Err(Error::shape("feature trace width", self.width, h.ncols()));
            }
        }
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::Data("feature trace iterations must increase".into()));
            }
        }
        self.records.push(record);
        self.truth.push(truth);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// What the target-domain owner received.
    pub fn observed(&self) -> &[FeatureRecord] {
        &self.records
    }

    /// Position of the record for `iteration`.
    pub fn position(&self, iteration: usize) -> Option<usize> {
        self.records
            .binary_search_by_key(&iteration, |r| r.iteration)
            .ok()
    }

    /// Source-row property labels of record `pos`. Evaluation only.
    pub fn ground_truth(&self, pos: usize) -> &[u8] {
        &self.truth[pos]
    }
}

/// Shared parameters published after one update.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub iteration: usize,
    pub domain: Domain,
    pub params: Vec<f64>,
}

/// Harness-side facts about one update: which rows formed the batch, the
/// seeds it used, and (source updates) the batch property label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTruth {
    pub batch_rows: Vec<usize>,
    pub dropout_seed: u64,
    pub noise_seed: u64,
    pub batch_label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTrace {
    spec: MlpSpec,
    initial: Vec<f64>,
    records: Vec<ParamRecord>,
    truth: Vec<ParamTruth>,
}

impl ParamTrace {
    pub(crate) fn new(spec: MlpSpec, initial: Vec<f64>) -> Self {
        ParamTrace {
            spec,
            initial,
            records: Vec::new(),
            truth: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, record: ParamRecord, truth: ParamTruth) -> Result<()> {
        if record.params.len() != self.initial.len() {
            return Err(Error::shape("parameter trace", self.initial.len(), record.params.len()));
        }
        let expected = self.records.last().map_or(0, |r| r.iteration + 1);
        if record.iteration != expected {
            return Err(Error::Data(format!(
                "parameter trace expected iteration {expected}, got {}",
                record.iteration
            )));
        }
        self.records.push(record);
        self.truth.push(truth);
        Ok(())
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Shared parameters before the first update.
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn observed(&self) -> &[ParamRecord] {
        &self.records
    }

    /// Parameters in force before record `pos` was applied.
    pub fn previous(&self, pos: usize) -> &[f64] {
        if pos == 0 {
            &self.initial
        } else {
            &self.records[pos - 1].params
        }
    }

    /// The shared model as published at record `pos`.
    pub fn model_at(&self, pos: usize) -> Result<Mlp> {
        let mut m = Mlp::zeros(&self.spec);
        m.set_flat(&self.records[pos].params)?;
        Ok(m)
    }

    pub fn ground_truth(&self, pos: usize) -> &ParamTruth {
        &self.truth[pos]
    }
}

/// The leakage profile of one paradigm.
#[derive(Debug, Clone)]
pub enum LeakageTrace {
    ModelArtifact(Mlp),
    Features(FeatureTrace),
    Params(ParamTrace),
}

// Record files: one header line per record, then one payload line per
// matrix, all floats at 17 significant digits.
//
//   feature-trace v1 <width>
//   record <k> <rows_s> <rows_t>
//   s <rows_s*width floats>
//   t <rows_t*width floats>
//
//   param-trace v1 <param_count>
//   spec <input_dim> <hidden dims...> <dropout_rate>
//   initial <floats>
//   record <k> <source|target>
//   w <floats>

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(fmt_f64).collect::<Vec<_>>().join(" ")
}

pub fn write_feature_trace(trace: &FeatureTrace, mut out: impl Write) -> Result<()> {
    writeln!(out, "feature-trace v1 {}", trace.width)?;
    for r in &trace.records {
        writeln!(
            out,
            "record {} {} {}",
            r.iteration,
            r.source_hidden.nrows(),
            r.target_hidden.nrows()
        )?;
        writeln!(out, "s {}", join(r.source_hidden.iter().copied()))?;
        writeln!(out, "t {}", join(r.target_hidden.iter().copied()))?;
    }
    Ok(())
}

pub fn write_param_trace(trace: &ParamTrace, mut out: impl Write) -> Result<()> {
    writeln!(out, "param-trace v1 {}", trace.initial.len())?;
    let dims: Vec<String> = trace.spec.hidden_dims().iter().map(usize::to_string).collect();
    writeln!(
        out,
        "spec {} {} {}",
        trace.spec.input_dim(),
        dims.join(" "),
        fmt_f64(trace.spec.dropout_rate())
    )?;
    writeln!(out, "initial {}", join(trace.initial.iter().copied()))?;
    for r in &trace.records {
        let tag = match r.domain {
            Domain::Source => "source",
            Domain::Target => "target",
        };
        writeln!(out, "record {} {tag}", r.iteration)?;
        writeln!(out, "w {}", join(r.params.iter().copied()))?;
    }
    Ok(())
}

struct Reader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Reader<R> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: PathBuf::from("<trace>"),
            line: self.line,
            message: msg.into(),
        }
    }

    fn next(&mut self) -> Result<Option<Vec<String>>> {
        self.line += 1;
        match self.lines.next() {
            None => Ok(None),
            Some(l) => Ok(Some(l?.split_ascii_whitespace().map(str::to_string).collect())),
        }
    }

    fn expect(&mut self, key: &str) -> Result<Vec<String>> {
        match self.next()? {
            Some(t) if t.first().map(String::as_str) == Some(key) => Ok(t[1..].to_vec()),
            _ => Err(self.err(format!("expected `{key}` line"))),
        }
    }

    fn num<T: std::str::FromStr>(&self, tok: Option<&String>) -> Result<T> {
        tok.and_then(|t| t.parse().ok())
            .ok_or_else(|| self.err("bad or missing integer"))
    }

    fn floats(&self, toks: &[String]) -> Result<Vec<f64>> {
        parse_floats(&toks.join(" ")).map_err(|m| self.err(m))
    }
}

/// Reads the observed part of a feature trace (ground truth is not stored).
pub fn read_feature_trace(input: impl BufRead) -> Result<FeatureTrace> {
    let mut rd = Reader {
        lines: input.lines(),
        line: 0,
    };
    let head = rd.next()?.ok_or_else(|| rd.err("empty trace"))?;
    if head.len() != 3 || head[0] != "feature-trace" || head[1] != "v1" {
        return Err(rd.err("missing `feature-trace v1` header"));
    }
    let width: usize = rd.num(head.get(2))?;
    let mut trace = FeatureTrace::new(width);
    while let Some(tok) = rd.next()? {
        if tok.first().map(String::as_str) != Some("record") {
            return Err(rd.err("expected `record`"));
        }
        let k: usize = rd.num(tok.get(1))?;
        let ns: usize = rd.num(tok.get(2))?;
        let nt: usize = rd.num(tok.get(3))?;
        let s = rd.expect("s")?;
        let s = rd.floats(&s)?;
        let t = rd.expect("t")?;
        let t = rd.floats(&t)?;
        let source_hidden =
            Array2::from_shape_vec((ns, width), s).map_err(|e| rd.err(e.to_string()))?;
        let target_hidden =
            Array2::from_shape_vec((nt, width), t).map_err(|e| rd.err(e.to_string()))?;
        trace.push(
            FeatureRecord {
                iteration: k,
                source_hidden,
                target_hidden,
            },
            Vec::new(),
        )?;
    }
    Ok(trace)
}

pub fn read_param_trace(input: impl BufRead) -> Result<ParamTrace> {
    let mut rd = Reader {
        lines: input.lines(),
        line: 0,
    };
    let head = rd.next()?.ok_or_else(|| rd.err("empty trace"))?;
    if head.len() != 3 || head[0] != "param-trace" || head[1] != "v1" {
        return Err(rd.err("missing `param-trace v1` header"));
    }
    let count: usize = rd.num(head.get(2))?;
    let spec_toks = rd.expect("spec")?;
    if spec_toks.len() < 3 {
        return Err(rd.err("spec line needs input dim, hidden dims and dropout"));
    }
    let input_dim: usize = rd.num(spec_toks.first())?;
    let hidden: Vec<usize> = spec_toks[1..spec_toks.len() - 1]
        .iter()
        .map(|t| rd.num(Some(t)))
        .collect::<Result<_>>()?;
    let rate: f64 = spec_toks[spec_toks.len() - 1]
        .parse()
        .map_err(|_| rd.err("bad dropout rate"))?;
    let spec = MlpSpec::new(input_dim, hidden)?.with_dropout(rate)?;
    if spec.param_count() != count {
        return Err(rd.err("parameter count does not match spec"));
    }
    let initial = rd.expect("initial")?;
    let initial = rd.floats(&initial)?;
    let mut trace = ParamTrace::new(spec, initial);
    while let Some(tok) = rd.next()? {
        if tok.first().map(String::as_str) != Some("record") {
            return Err(rd.err("expected `record`"));
        }
        let k: usize = rd.num(tok.get(1))?;
        let domain = match tok.get(2).map(String::as_str) {
            Some("source") => Domain::Source,
            Some("target") => Domain::Target,
            _ => return Err(rd.err("record tag must be source or target")),
        };
        let w = rd.expect("w")?;
        let params = rd.floats(&w)?;
        trace.push(
            ParamRecord {
                iteration: k,
                domain,
                params,
            },
            ParamTruth {
                batch_rows: Vec::new(),
                dropout_seed: 0,
                noise_seed: 0,
                batch_label: None,
            },
        )?;
    }
    Ok(trace)
}
