//! Readers and writers for Q-matrices, response matrices and hierarchies.
//!
//! CSV files may start with a header row; a first row containing anything
//! other than binary cells is taken as one. Missing responses are written
//! as `NA` and read from `NA`, `.` or an empty cell. Hierarchies are read
//! from JSON (`{"K": .., "edges": [[1, 3], ..]}`) or from text with one
//! `k -> l` edge per line after a `K = n` line. Attributes are 1-based in
//! every file format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::inference::Dataset;
use crate::measurement::QMatrix;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn is_cell(field: &str) -> bool {
    matches!(field, "0" | "1" | "NA" | "." | "")
}

/// Records of a CSV file split into an optional header and the body.
fn records<R: Read>(input: R) -> Result<(Option<Vec<String>>, Vec<Vec<String>>)> {
    let mut rows = Vec::new();
    for record in reader(input).records() {
        rows.push(record?.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let header = match rows.first() {
        Some(first) if !first.iter().all(|f| is_cell(f)) => Some(rows.remove(0)),
        _ => None,
    };
    Ok((header, rows))
}

pub fn parse_q<R: Read>(input: R) -> Result<QMatrix> {
    let (header, body) = records(input)?;
    let rows = body
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|f| match f.as_str() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Error::Parse(format!("Q-matrix row {}: invalid entry {other:?}", i + 1))),
                })
                .collect::<Result<Vec<u8>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let q = QMatrix::new(&rows)?;
    match header {
        Some(names) => q.with_names(names),
        None => Ok(q),
    }
}

pub fn read_q(path: impl AsRef<Path>) -> Result<QMatrix> {
    parse_q(fs::File::open(path)?)
}

pub fn write_q<W: Write>(q: &QMatrix, output: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    if let Some(names) = q.names() {
        w.write_record(names)?;
    }
    for row in q.to_rows() {
        w.write_record(row.iter().map(u8::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_responses<R: Read>(input: R) -> Result<Dataset> {
    let (_, body) = records(input)?;
    let rows = body
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|f| match f.as_str() {
                    "0" => Ok(Some(0)),
                    "1" => Ok(Some(1)),
                    "NA" | "." | "" => Ok(None),
                    other => Err(Error::Parse(format!("response row {}: invalid entry {other:?}", i + 1))),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_rows(&rows).map_err(|err| match err {
        Error::EmptyRow { row } => Error::Parse(format!("response row {}: no observed responses", row + 1)),
        other => other,
    })
}

pub fn read_responses(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_responses(fs::File::open(path)?)
}

pub fn write_responses<W: Write>(data: &Dataset, output: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    for i in 0..data.n() {
        w.write_record((0..data.items()).map(|j| match data.get(i, j) {
            Some(v) => v.to_string(),
            None => "NA".to_string(),
        }))?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_hierarchy(text: &str) -> Result<Hierarchy> {
    if text.trim_start().starts_with('{') {
        return Ok(serde_json::from_str(text)?);
    }
    let mut k = None;
    let mut edges = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("hierarchy line {}: cannot parse {line:?}", n + 1));
        if let Some((lhs, rhs)) = line.split_once('=') {
            if !lhs.trim().eq_ignore_ascii_case("k") {
                return Err(bad());
            }
            k = Some(rhs.trim().parse::<usize>().map_err(|_| bad())?);
        } else if let Some((from, to)) = line.split_once("->") {
            let from: usize = from.trim().parse().map_err(|_| bad())?;
            let to: usize = to.trim().parse().map_err(|_| bad())?;
            if from == 0 || to == 0 {
                return Err(Error::Parse(format!("hierarchy line {}: attributes are numbered from 1", n + 1)));
            }
            edges.push((from - 1, to - 1));
        } else {
            return Err(bad());
        }
    }
    let k = k.ok_or_else(|| Error::Parse("hierarchy text lacks a `K = n` line".into()))?;
    Hierarchy::new(k, &edges)
}

pub fn read_hierarchy(path: impl AsRef<Path>) -> Result<Hierarchy> {
    parse_hierarchy(&fs::read_to_string(path)?)
}

/// Text form listing the direct edges.
pub fn hierarchy_text(h: &Hierarchy) -> String {
    let mut out = format!("K = {}\n", h.k());
    for (from, to) in h.direct_edges() {
        out.push_str(&format!("{} -> {}\n", from + 1, to + 1));
    }
    out
}
