//! Plain-text file formats.
//!
//! Every format is line based, `#` starts a comment line, and floating
//! point values are written with 17 significant digits so that a save/load
//! round trip is bitwise exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Series};
use crate::error::{Error, Result};
use crate::model::{CellKind, ModelParams};
use crate::training::HistoryRecord;

/// Version of this crate, embedded in written files.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const DATASET_MAGIC: &str = "latent-rom-dataset";
const MODEL_MAGIC: &str = "latent-rom-model";
const FORMAT_VERSION: &str = "1";

/// Free-form `key value` header entries.
pub type Metadata = Vec<(String, String)>;

/// Exact decimal form of `v`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    match tok {
        "nan" | "NaN" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .map_err(|_| Error::parse(line, format!("`{tok}` is not a number"))),
    }
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::parse(line, format!("`{tok}` is not a non-negative integer")))
}

/// Content lines with their 1-based numbers; blank and `#` lines skipped.
struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self { inner: it.peekable() }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.inner.next()
    }

    fn peek(&mut self) -> Option<(usize, &'a str)> {
        self.inner.peek().copied()
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next()
            .ok_or_else(|| Error::parse(0, format!("unexpected end of file, expected {what}")))
    }
}

fn numbers(line: &str, n: usize, line_no: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| parse_f64(t, line_no))
        .collect::<Result<_>>()?;
    if vals.len() != n {
        return Err(Error::parse(line_no, format!("expected {n} values, found {}", vals.len())));
    }
    Ok(vals)
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

/// Reads a `NAME rows cols` block followed by `rows` lines.
fn read_matrix(lines: &mut Lines<'_>) -> Result<(String, DMatrix<f64>)> {
    let (no, head) = lines.expect("a matrix header `NAME rows cols`")?;
    let toks: Vec<&str> = head.split_whitespace().collect();
    if toks.len() != 3 {
        return Err(Error::parse(no, format!("expected `NAME rows cols`, found `{head}`")));
    }
    let rows = parse_usize(toks[1], no)?;
    let cols = parse_usize(toks[2], no)?;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (rno, line) = lines.expect(&format!("a row of {}", toks[0]))?;
        data.extend(numbers(line, cols, rno)?);
    }
    Ok((toks[0].to_string(), DMatrix::from_row_slice(rows, cols, &data)))
}

fn write_metadata(out: &mut String, meta: &[(String, String)]) {
    for (k, v) in meta {
        let _ = writeln!(out, "# {k} {v}");
    }
}

/// Named matrices as `NAME rows cols` blocks, row-major.
pub fn matrices_to_string(blocks: &[(&str, &DMatrix<f64>)], meta: &[(String, String)]) -> String {
    let mut out = String::from("# latent-rom matrices\n");
    let _ = writeln!(out, "# tool_version {TOOL_VERSION}");
    write_metadata(&mut out, meta);
    for (name, m) in blocks {
        write_matrix(&mut out, name, m);
    }
    out
}

pub fn parse_matrices(text: &str) -> Result<Vec<(String, DMatrix<f64>)>> {
    let mut lines = Lines::new(text);
    let mut out = Vec::new();
    while lines.peek().is_some() {
        out.push(read_matrix(&mut lines)?);
    }
    Ok(out)
}

pub fn save_matrices(path: &Path, blocks: &[(&str, &DMatrix<f64>)], meta: &[(String, String)]) -> Result<()> {
    fs::write(path, matrices_to_string(blocks, meta))?;
    Ok(())
}

pub fn load_matrices(path: &Path) -> Result<Vec<(String, DMatrix<f64>)>> {
    parse_matrices(&fs::read_to_string(path)?)
}

pub fn dataset_to_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{DATASET_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "tool_version {TOOL_VERSION}");
    let _ = writeln!(out, "dt {}", fmt_f64(dataset.dt));
    let _ = writeln!(out, "l {}", dataset.l);
    let _ = writeln!(out, "n_series {}", dataset.len());
    for (k, v) in &dataset.provenance {
        let _ = writeln!(out, "provenance {k} {v}");
    }
    for (i, s) in dataset.series.iter().enumerate() {
        let _ = writeln!(out, "series {i} {}", s.len());
        for (t, x) in s.t.iter().zip(&s.x) {
            out.push_str(&fmt_f64(*t));
            for v in x.iter() {
                out.push(' ');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
    }
    out
}

fn expect_magic(lines: &mut Lines<'_>, magic: &str) -> Result<()> {
    let (no, first) = lines.expect(magic)?;
    let toks: Vec<&str> = first.split_whitespace().collect();
    if toks.first() != Some(&magic) {
        return Err(Error::parse(no, format!("not a {magic} file")));
    }
    if toks.get(1) != Some(&FORMAT_VERSION) {
        return Err(Error::parse(no, format!("unsupported format version {:?}", toks.get(1))));
    }
    Ok(())
}

/// Splits `key rest...` header lines until `stop` is seen as a key.
fn header<'a>(lines: &mut Lines<'a>, stop: &[&str]) -> Vec<(usize, &'a str, &'a str)> {
    let mut out = Vec::new();
    while let Some((no, line)) = lines.peek() {
        let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        if stop.contains(&key) {
            break;
        }
        lines.next();
        out.push((no, key, rest.trim()));
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = Lines::new(text);
    expect_magic(&mut lines, DATASET_MAGIC)?;
    let mut dt = None;
    let mut l = None;
    let mut n_series = None;
    let mut provenance = Vec::new();
    for (no, key, rest) in header(&mut lines, &["series"]) {
        match key {
            "dt" => dt = Some(parse_f64(rest, no)?),
            "l" => l = Some(parse_usize(rest, no)?),
            "n_series" => n_series = Some(parse_usize(rest, no)?),
            "provenance" => {
                let (k, v) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                provenance.push((k.to_string(), v.trim().to_string()));
            }
            "tool_version" => {}
            other => return Err(Error::parse(no, format!("unknown header key `{other}`"))),
        }
    }
    let dt = dt.ok_or_else(|| Error::parse(1, "missing `dt`"))?;
    let l = l.ok_or_else(|| Error::parse(1, "missing `l`"))?;
    let n_series = n_series.ok_or_else(|| Error::parse(1, "missing `n_series`"))?;
    let mut series = Vec::with_capacity(n_series);
    for i in 0..n_series {
        let (no, head) = lines.expect(&format!("`series {i} <rows>`"))?;
        let toks: Vec<&str> = head.split_whitespace().collect();
        if toks.len() != 3 || toks[0] != "series" || parse_usize(toks[1], no)? != i {
            return Err(Error::parse(no, format!("expected `series {i} <rows>`, found `{head}`")));
        }
        let rows = parse_usize(toks[2], no)?;
        let mut t = Vec::with_capacity(rows);
        let mut x = Vec::with_capacity(rows);
        for _ in 0..rows {
            let (rno, line) = lines.expect("a data row")?;
            let vals = numbers(line, l + 1, rno)?;
            t.push(vals[0]);
            x.push(DVector::from_column_slice(&vals[1..]));
        }
        series.push(Series::new(t, x).map_err(|e| Error::parse(no, e.to_string()))?);
    }
    if let Some((no, line)) = lines.next() {
        return Err(Error::parse(no, format!("trailing content `{line}`")));
    }
    let mut ds = Dataset::new(series, dt)?;
    ds.provenance = provenance;
    Ok(ds)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_string(dataset))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn model_to_string(params: &ModelParams, meta: &[(String, String)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "tool_version {TOOL_VERSION}");
    for (k, v) in meta {
        let _ = writeln!(out, "meta {k} {v}");
    }
    let _ = writeln!(out, "p {}", params.p());
    let _ = writeln!(out, "l {}", params.l());
    let _ = writeln!(out, "dt {}", fmt_f64(params.dt));
    let _ = writeln!(out, "cell {}", params.kind);
    let _ = writeln!(out, "z0 {}", params.z0.is_some());
    write_matrix(&mut out, "theta_d", &DMatrix::from_column_slice(params.p(), 1, params.theta_d.as_slice()));
    write_matrix(&mut out, "C", &params.c);
    write_matrix(&mut out, "R", &params.r);
    if let Some(z0) = &params.z0 {
        write_matrix(&mut out, "z0", &DMatrix::from_column_slice(params.p(), 1, z0.as_slice()));
    }
    out
}

/// Parameters and the `meta` entries of a model file.
pub fn parse_model(text: &str) -> Result<(ModelParams, Metadata)> {
    let mut lines = Lines::new(text);
    expect_magic(&mut lines, MODEL_MAGIC)?;
    let mut meta = Vec::new();
    let (mut p, mut l, mut dt, mut cell, mut has_z0) = (None, None, None, None, None);
    for (no, key, rest) in header(&mut lines, &["theta_d"]) {
        match key {
            "tool_version" => {}
            "meta" => {
                let (k, v) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                meta.push((k.to_string(), v.trim().to_string()));
            }
            "p" => p = Some(parse_usize(rest, no)?),
            "l" => l = Some(parse_usize(rest, no)?),
            "dt" => dt = Some(parse_f64(rest, no)?),
            "cell" => cell = Some(rest.parse::<CellKind>().map_err(|e| Error::parse(no, e.to_string()))?),
            "z0" => {
                has_z0 = Some(match rest {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::parse(no, format!("z0 must be true or false, got `{rest}`"))),
                })
            }
            other => return Err(Error::parse(no, format!("unknown header key `{other}`"))),
        }
    }
    let missing = |k: &str| Error::parse(1, format!("missing `{k}`"));
    let p = p.ok_or_else(|| missing("p"))?;
    let l = l.ok_or_else(|| missing("l"))?;
    let dt = dt.ok_or_else(|| missing("dt"))?;
    let cell = cell.ok_or_else(|| missing("cell"))?;
    let has_z0 = has_z0.ok_or_else(|| missing("z0"))?;
    let mut block = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
        let no = lines.peek().map_or(0, |(n, _)| n);
        let (found, m) = read_matrix(&mut lines)?;
        if found != name || m.shape() != (rows, cols) {
            return Err(Error::parse(
                no,
                format!("expected block `{name} {rows} {cols}`, found `{found}` {:?}", m.shape()),
            ));
        }
        Ok(m)
    };
    let theta = block("theta_d", p, 1)?;
    let c = block("C", p, p)?;
    let r = block("R", p, l)?;
    let z0 = if has_z0 {
        Some(DVector::from_column_slice(block("z0", p, 1)?.as_slice()))
    } else {
        None
    };
    let params = ModelParams::new(DVector::from_column_slice(theta.as_slice()), c, r, z0, dt, cell)?;
    Ok((params, meta))
}

pub fn save_model(params: &ModelParams, meta: &[(String, String)], path: &Path) -> Result<()> {
    fs::write(path, model_to_string(params, meta))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ModelParams, Metadata)> {
    parse_model(&fs::read_to_string(path)?)
}

/// Named columns with a header line; shorter columns are padded with `nan`.
pub fn columns_to_string(columns: &[(&str, &[f64])], meta: &[(String, String)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# tool_version {TOOL_VERSION}");
    write_metadata(&mut out, meta);
    let names: Vec<&str> = columns.iter().map(|(n, _)| *n).collect();
    let _ = writeln!(out, "{}", names.join(" "));
    let rows = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for i in 0..rows {
        let row: Vec<String> = columns
            .iter()
            .map(|(_, c)| c.get(i).map_or_else(|| "nan".to_string(), |&v| fmt_f64(v)))
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn parse_columns(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut lines = Lines::new(text);
    let (_, head) = lines.expect("a header of column names")?;
    let mut cols: Vec<(String, Vec<f64>)> = head.split_whitespace().map(|n| (n.to_string(), Vec::new())).collect();
    while let Some((no, line)) = lines.next() {
        let vals = numbers(line, cols.len(), no)?;
        for (c, v) in cols.iter_mut().zip(vals) {
            c.1.push(v);
        }
    }
    Ok(cols)
}

/// Writes named series as columns for external plotting.
pub fn export_plot_data(columns: &[(&str, &[f64])], meta: &[(String, String)], path: &Path) -> Result<()> {
    if let Some((name, _)) = columns.iter().find(|(n, _)| n.is_empty() || n.contains(char::is_whitespace)) {
        return Err(Error::InvalidArgument(format!("column name `{name}` must be a single word")));
    }
    fs::write(path, columns_to_string(columns, meta))?;
    Ok(())
}

pub fn load_columns(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    parse_columns(&fs::read_to_string(path)?)
}

pub fn history_to_string(history: &[HistoryRecord], meta: &[(String, String)]) -> String {
    let it: Vec<f64> = history.iter().map(|h| h.iteration as f64).collect();
    let tr: Vec<f64> = history.iter().map(|h| h.train_loss).collect();
    let va: Vec<f64> = history.iter().map(|h| h.val_loss).collect();
    let wt: Vec<f64> = history.iter().map(|h| h.wall_time).collect();
    let mut out = String::new();
    let _ = writeln!(out, "# tool_version {TOOL_VERSION}");
    write_metadata(&mut out, meta);
    let _ = writeln!(out, "iteration train_loss val_loss wall_time_seconds");
    for i in 0..history.len() {
        let _ = writeln!(out, "{} {} {} {}", it[i], fmt_f64(tr[i]), fmt_f64(va[i]), fmt_f64(wt[i]));
    }
    out
}

pub fn parse_history(text: &str) -> Result<Vec<HistoryRecord>> {
    let cols = parse_columns(text)?;
    let names: Vec<&str> = cols.iter().map(|(n, _)| n.as_str()).collect();
    if names != ["iteration", "train_loss", "val_loss", "wall_time_seconds"] {
        return Err(Error::parse(1, format!("unexpected history columns {names:?}")));
    }
    Ok((0..cols[0].1.len())
        .map(|i| HistoryRecord {
            iteration: cols[0].1[i] as usize,
            train_loss: cols[1].1[i],
            val_loss: cols[2].1[i],
            wall_time: cols[3].1[i],
        })
        .collect())
}

pub fn save_history(history: &[HistoryRecord], meta: &[(String, String)], path: &Path) -> Result<()> {
    fs::write(path, history_to_string(history, meta))?;
    Ok(())
}
