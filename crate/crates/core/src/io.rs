//! Text and binary encodings for fields and dense matrices.
//!
//! Field CSV: one header line `# nx=<n> ny=<n> dx=<f> dy=<f> x0=<f> y0=<f>`
//! followed by one value per line in cell order.
//!
//! Field binary: magic `HDAFLD01`, then `nx`, `ny` as little-endian u64,
//! then `dx`, `dy`, `x0`, `y0` and the cell values as little-endian f64.
//! An ensemble file is a plain concatenation of such blocks.
//!
//! Matrix binary: magic `HDAMAT01`, `rows`, `cols` as little-endian u64,
//! then the entries row-major as little-endian f64.
//!
//! Floats are written in shortest round-trip form, so every encoding here
//! decodes back to bitwise-identical values.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{Field, GridSpec};

pub const FIELD_MAGIC: &[u8; 8] = b"HDAFLD01";
pub const MATRIX_MAGIC: &[u8; 8] = b"HDAMAT01";

const FIELD_HEADER_LEN: usize = 8 + 2 * 8 + 4 * 8;
const MATRIX_HEADER_LEN: usize = 8 + 2 * 8;

pub fn field_to_csv(field: &Field) -> String {
    let g = field.grid();
    let mut out = String::with_capacity(24 * (field.values().len() + 1));
    let [x0, y0] = g.origin();
    let _ = writeln!(
        out,
        "# nx={} ny={} dx={} dy={} x0={} y0={}",
        g.nx(),
        g.ny(),
        g.dx(),
        g.dy(),
        x0,
        y0
    );
    for v in field.values() {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn field_from_csv(text: &str) -> Result<Field> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("empty field CSV"))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| Error::format("field CSV header must start with '#'"))?;

    let mut nx = None;
    let mut ny = None;
    let mut dx = None;
    let mut dy = None;
    let mut x0 = None;
    let mut y0 = None;
    for token in header.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::format(format!("bad header token `{token}`")))?;
        let int = || {
            value
                .parse::<usize>()
                .map_err(|_| Error::format(format!("bad integer for `{key}`")))
        };
        let float = || {
            value
                .parse::<f64>()
                .map_err(|_| Error::format(format!("bad number for `{key}`")))
        };
        match key {
            "nx" => nx = Some(int()?),
            "ny" => ny = Some(int()?),
            "dx" => dx = Some(float()?),
            "dy" => dy = Some(float()?),
            "x0" => x0 = Some(float()?),
            "y0" => y0 = Some(float()?),
            other => return Err(Error::format(format!("unknown header key `{other}`"))),
        }
    }
    let missing = |k: &str| Error::format(format!("header is missing `{k}`"));
    let grid = GridSpec::new(
        nx.ok_or_else(|| missing("nx"))?,
        ny.ok_or_else(|| missing("ny"))?,
        dx.ok_or_else(|| missing("dx"))?,
        dy.ok_or_else(|| missing("dy"))?,
        [x0.ok_or_else(|| missing("x0"))?, y0.ok_or_else(|| missing("y0"))?],
    )?;

    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if values.len() == grid.len() {
            return Err(Error::format("more values than cells"));
        }
        let v = line
            .parse::<f64>()
            .map_err(|_| Error::format(format!("bad value on data line {}", k + 1)))?;
        values.push(v);
    }
    Field::new(grid, values)
}

pub fn field_to_bytes(field: &Field) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIELD_HEADER_LEN + 8 * field.values().len());
    write_field_block(&mut out, field);
    out
}

fn write_field_block(out: &mut Vec<u8>, field: &Field) {
    let g = field.grid();
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&(g.nx() as u64).to_le_bytes());
    out.extend_from_slice(&(g.ny() as u64).to_le_bytes());
    let [x0, y0] = g.origin();
    for v in [g.dx(), g.dy(), x0, y0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn fields_to_bytes<'a>(fields: impl IntoIterator<Item = &'a Field>) -> Vec<u8> {
    let mut out = Vec::new();
    for f in fields {
        write_field_block(&mut out, f);
    }
    out
}

pub fn field_from_bytes(bytes: &[u8]) -> Result<Field> {
    let (field, rest) = read_field_block(bytes)?;
    if !rest.is_empty() {
        return Err(Error::format("trailing bytes after field block"));
    }
    Ok(field)
}

pub fn fields_from_bytes(mut bytes: &[u8]) -> Result<Vec<Field>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (field, rest) = read_field_block(bytes)?;
        out.push(field);
        bytes = rest;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::format("unexpected end of input"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn dim(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format("dimension does not fit in usize"))
    }

    /// Reads `count` f64 values after checking the input is long enough, so
    /// a hostile header cannot trigger a huge allocation.
    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let n_bytes = count
            .checked_mul(8)
            .ok_or_else(|| Error::format("value count overflows"))?;
        let raw = self.take(n_bytes)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn read_field_block(bytes: &[u8]) -> Result<(Field, &[u8])> {
    let mut r = Reader { bytes };
    if r.take(8)? != FIELD_MAGIC {
        return Err(Error::format("bad field magic"));
    }
    let nx = r.dim()?;
    let ny = r.dim()?;
    let dx = r.f64()?;
    let dy = r.f64()?;
    let x0 = r.f64()?;
    let y0 = r.f64()?;
    let grid = GridSpec::new(nx, ny, dx, dy, [x0, y0])?;
    let values = r.f64s(grid.len())?;
    Ok((Field::new(grid, values)?, r.bytes))
}

pub fn matrix_to_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn matrix_from_bytes(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut r = Reader { bytes };
    if r.take(8)? != MATRIX_MAGIC {
        return Err(Error::format("bad matrix magic"));
    }
    let rows = r.dim()?;
    let cols = r.dim()?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format("matrix size overflows"))?;
    let values = r.f64s(count)?;
    if !r.bytes.is_empty() {
        return Err(Error::format("trailing bytes after matrix"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Parses a header-plus-rows CSV into its header and numeric rows. Used to
/// read back the tabular artifacts; every cell must be a number except in
/// the columns listed in `text_columns`.
pub fn parse_table(text: &str, text_columns: &[&str]) -> Result<Table> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::format("empty table"))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::format(format!(
                "row {} has {} cells, header has {}",
                k + 1,
                cells.len(),
                header.len()
            )));
        }
        let mut row = Vec::with_capacity(cells.len());
        for (name, cell) in header.iter().zip(&cells) {
            if text_columns.contains(&name.as_str()) {
                row.push(Cell::Text((*cell).to_owned()));
            } else {
                let v = cell
                    .parse::<f64>()
                    .map_err(|_| Error::format(format!("bad number `{cell}` in column `{name}`")))?;
                row.push(Cell::Number(v));
            }
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        self.rows
            .iter()
            .map(|r| match &r[k] {
                Cell::Number(v) => Some(*v),
                Cell::Text(_) => None,
            })
            .collect()
    }
}
