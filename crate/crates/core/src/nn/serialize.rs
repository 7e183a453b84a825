//! Flat text format for network parameters.
//!
//! ```text
//! mlp v1
//! input_dim 4
//! hidden_dims 64 8
//! activation relu
//! output sigmoid-scalar
//! dropout_rate 0.0000000000000000e0
//! layer 0 64 4
//! w <out*in values, row-major>
//! b <out values>
//! ...
//! end
//! ```
//!
//! Floats are written with 17 significant digits so a write/read cycle is
//! bit-exact.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use ndarray::{Array1, Array2};

use super::{Layer, Mlp, MlpSpec};
use crate::error::{Error, Result};

const MAGIC: &str = "mlp v1";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(fmt_f64).collect::<Vec<_>>().join(" ")
}

pub fn parse_floats(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split_ascii_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad float {t:?}: {e}")))
        .collect()
}

pub fn write_mlp(mlp: &Mlp, mut out: impl Write) -> Result<()> {
    let spec = mlp.spec();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "input_dim {}", spec.input_dim())?;
    let dims: Vec<String> = spec.hidden_dims().iter().map(usize::to_string).collect();
    writeln!(out, "hidden_dims {}", dims.join(" "))?;
    writeln!(out, "activation relu")?;
    writeln!(out, "output sigmoid-scalar")?;
    writeln!(out, "dropout_rate {}", fmt_f64(spec.dropout_rate()))?;
    for (i, layer) in mlp.layers.iter().enumerate() {
        let (o, n) = layer.weights.dim();
        writeln!(out, "layer {i} {o} {n}")?;
        writeln!(out, "w {}", join(layer.weights.iter().copied()))?;
        writeln!(out, "b {}", join(layer.bias.iter().copied()))?;
    }
    writeln!(out, "end")?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: PathBuf::from("<mlp>"),
            line: self.line,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<String> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.to_string()),
            _ if line == key => Ok(String::new()),
            _ => Err(self.err(format!("expected `{key}`, found {line:?}"))),
        }
    }

    fn usizes(&self, text: &str) -> Result<Vec<usize>> {
        text.split_ascii_whitespace()
            .map(|t| t.parse().map_err(|_| self.err(format!("bad integer {t:?}"))))
            .collect()
    }
}

pub fn read_mlp(input: impl BufRead) -> Result<Mlp> {
    let mut lines = Lines {
        inner: input.lines(),
        line: 0,
    };
    if lines.next_line()? != MAGIC {
        return Err(lines.err("missing `mlp v1` header"));
    }
    let input_dim = lines.keyed("input_dim")?;
    let input_dim = *lines
        .usizes(&input_dim)?
        .first()
        .ok_or_else(|| lines.err("empty input_dim"))?;
    let hidden = lines.keyed("hidden_dims")?;
    let hidden = lines.usizes(&hidden)?;
    if lines.keyed("activation")? != "relu" {
        return Err(lines.err("unsupported activation"));
    }
    if lines.keyed("output")? != "sigmoid-scalar" {
        return Err(lines.err("unsupported output head"));
    }
    let rate = lines.keyed("dropout_rate")?;
    let rate: f64 = rate.trim().parse().map_err(|_| lines.err("bad dropout_rate"))?;
    let spec = MlpSpec::new(input_dim, hidden)?.with_dropout(rate)?;

    let mut layers = Vec::new();
    for (i, (o, n)) in spec.layer_shapes().into_iter().enumerate() {
        let header = lines.keyed("layer")?;
        if lines.usizes(&header)? != [i, o, n] {
            return Err(lines.err(format!("expected layer {i} {o} {n}, found {header:?}")));
        }
        let w = parse_floats(&lines.keyed("w")?).map_err(|m| lines.err(m))?;
        let weights =
            Array2::from_shape_vec((o, n), w).map_err(|e| lines.err(format!("weights: {e}")))?;
        let b = parse_floats(&lines.keyed("b")?).map_err(|m| lines.err(m))?;
        if b.len() != o {
            return Err(lines.err(format!("bias has {} values, expected {o}", b.len())));
        }
        layers.push(Layer {
            weights,
            bias: Array1::from(b),
        });
    }
    if lines.next_line()? != "end" {
        return Err(lines.err("missing `end`"));
    }
    Mlp::from_layers(spec, layers)
}
