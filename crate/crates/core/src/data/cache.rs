//! Flat text cache for encoded datasets.
//!
//! ```text
//! dataset v1 <rows> <cols> <has_property>
//! column <name> <attribute>      (one line per column)
//! row <label> [<property>] <floats...>
//! ```
//!
//! Floats use the model serializer's 17-significant-digit form, so a
//! write/read round trip is exact. Raw provenance is not stored.

use std::io::{BufRead, Write};

use ndarray::Array2;

use super::{FeatureColumn, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{fmt_f64, parse_floats};

pub fn write_dataset(ds: &LabeledDataset, mut out: impl Write) -> Result<()> {
    let prop = ds.property();
    writeln!(out, "dataset v1 {} {} {}", ds.len(), ds.dim(), u8::from(prop.is_some()))?;
    for c in ds.columns() {
        writeln!(out, "column {} {}", c.name, c.attribute)?;
    }
    for (i, row) in ds.features().rows().into_iter().enumerate() {
        write!(out, "row {}", ds.labels()[i])?;
        if let Some(p) = prop {
            write!(out, " {}", p[i])?;
        }
        for v in row {
            write!(out, " {}", fmt_f64(*v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_dataset(input: impl BufRead) -> Result<LabeledDataset> {
    let bad = |line: usize, message: String| Error::Parse {
        path: "<dataset>".into(),
        line,
        message,
    };
    let mut lines = input.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(bad(0, format!("unexpected end of file, expected {what}"))),
        }
    };
    let (ln, header) = next("header")?;
    let h: Vec<&str> = header.split_ascii_whitespace().collect();
    if h.len() != 5 || h[0] != "dataset" || h[1] != "v1" {
        return Err(bad(ln, "expected `dataset v1 <rows> <cols> <has_property>`".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| bad(ln, e.to_string()));
    let (rows, cols, has_prop) = (num(h[2])?, num(h[3])?, num(h[4])? == 1);
    let mut columns = Vec::with_capacity(cols);
    for _ in 0..cols {
        let (ln, line) = next("column")?;
        let parts: Vec<&str> = line.split_ascii_whitespace().collect();
        if parts.len() != 3 || parts[0] != "column" {
            return Err(bad(ln, "expected `column <name> <attribute>`".into()));
        }
        columns.push(FeatureColumn {
            name: parts[1].into(),
            attribute: parts[2].into(),
        });
    }
    let mut x = Array2::zeros((rows, cols));
    let mut labels = Vec::with_capacity(rows);
    let mut property = Vec::new();
    for r in 0..rows {
        let (ln, line) = next("row")?;
        let rest = line
            .strip_prefix("row ")
            .ok_or_else(|| bad(ln, "expected `row`".into()))?;
        let values = parse_floats(rest).map_err(|m| bad(ln, m))?;
        let lead = 1 + usize::from(has_prop);
        if values.len() != lead + cols {
            return Err(bad(ln, format!("expected {} values, found {}", lead + cols, values.len())));
        }
        labels.push(values[0] as u8);
        if has_prop {
            property.push(values[1] as u8);
        }
        for (c, v) in values[lead..].iter().enumerate() {
            x[[r, c]] = *v;
        }
    }
    let ds = LabeledDataset::new(x, labels, columns)?;
    if has_prop {
        ds.with_property(property)
    } else {
        Ok(ds)
    }
}
