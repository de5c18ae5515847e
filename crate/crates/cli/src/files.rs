//! Dataset CSV, ground-truth sidecar and JSON documents.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ivy_core::datagen::SyntheticSample;
use ivy_core::Dataset;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Reads `y,x,w1,…,wm`. Candidate names come from the header.
pub fn read_dataset(path: &Path, zero_one: bool) -> CliResult<Dataset> {
    let shown = path.display().to_string();
    let parse_err = |line: u64, column: u64, message: String| CliError::Parse { path: shown.clone(), line, column, message };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header = rdr.headers().map_err(|e| parse_err(1, 1, e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "y" || &header[1] != "x" {
        return Err(parse_err(1, 1, "header must be `y,x,w1,…,wm` with at least one candidate".into()));
    }
    let m = header.len() - 2;
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let (mut y, mut x, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, 1, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != m + 2 {
            return Err(parse_err(line, 1, format!("expected {} fields, found {}", m + 2, record.len())));
        }
        for (c, field) in record.iter().enumerate() {
            let v = decode(field, zero_one)
                .ok_or_else(|| parse_err(line, c as u64 + 1, format!("value `{field}` is not {}", if zero_one { "0/1" } else { "-1/+1" })))?;
            match c {
                0 => y.push(v),
                1 => x.push(v),
                _ => w.push(v),
            }
        }
    }
    Ok(Dataset::new(y, x, w, m, Some(names))?)
}

fn decode(field: &str, zero_one: bool) -> Option<i8> {
    match (field, zero_one) {
        ("1" | "+1", _) => Some(1),
        ("-1", false) => Some(-1),
        ("0", true) => Some(-1),
        _ => None,
    }
}

fn encode(v: i8, zero_one: bool) -> &'static str {
    match (v > 0, zero_one) {
        (true, _) => "1",
        (false, true) => "0",
        (false, false) => "-1",
    }
}

pub fn write_dataset(path: &Path, ds: &Dataset, zero_one: bool) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let io = |e: csv::Error| CliError::io(path, e);
    let mut header = vec!["y".to_string(), "x".to_string()];
    header.extend(ds.candidate_names().iter().cloned());
    w.write_record(&header).map_err(io)?;
    let mut rec: Vec<&str> = Vec::with_capacity(ds.m() + 2);
    for i in 0..ds.n() {
        rec.clear();
        rec.push(encode(ds.y()[i], zero_one));
        rec.push(encode(ds.x()[i], zero_one));
        rec.extend(ds.row(i).iter().map(|&v| encode(v, zero_one)));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `<stem>.truth.csv` next to the dataset.
pub fn sidecar_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dataset.with_file_name(format!("{stem}.truth.csv"))
}

/// Hidden `z`, `c` per row plus the constant validity mask columns.
pub fn write_sidecar(path: &Path, s: &SyntheticSample) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let io = |e: csv::Error| CliError::io(path, e);
    let mut header = vec!["z".to_string(), "c".to_string()];
    header.extend(s.dataset.candidate_names().iter().map(|n| format!("valid_{n}")));
    w.write_record(&header).map_err(io)?;
    let mask: Vec<&str> = s.valid_mask.iter().map(|&v| if v { "1" } else { "0" }).collect();
    for i in 0..s.dataset.n() {
        let mut rec = vec![encode(s.z[i], false), encode(s.c[i], false)];
        rec.extend(&mask);
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with a trailing newline. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::io(path, e))?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        column: e.column() as u64,
        message: e.to_string(),
    })
}
